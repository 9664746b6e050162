import collections

import numpy as np
import pytest

from magvehicle import simgen
from magvehicle.detect import detect_events
from magvehicle.errors import ClippingError
from magvehicle.pipeline import Pipeline, vehicle_pair
from magvehicle.simgen import FleetSpec, NoiseSpec, VehicleTemplate
from magvehicle.vehicles import TYPE_ORDER, VehicleType, type_interval


def raw_correlation_peak(a, b, max_lag=200):
    """Integer lag maximizing the plain Pearson coefficient, plus the three values around it."""
    m = a.size - max_lag
    coefs = np.array([np.corrcoef(a[:m], b[k : k + m])[0, 1] for k in range(max_lag)])
    k = int(np.argmax(coefs))
    return k, coefs


def test_delay_of_45_samples_at_80kmh():
    tpl = simgen.make_template(VehicleType.SEDAN_SUV, 4.5)
    trace, truth = simgen.synth_trace(tpl, 80.0)
    assert truth.delay_samples == pytest.approx(45.0)
    a = trace.samples_a.astype(float) - trace.midpoint
    b = trace.samples_b.astype(float) - trace.midpoint
    assert raw_correlation_peak(a, b)[0] == 45


@pytest.mark.parametrize("v", [23.0, 57.3, 91.1, 140.0])
def test_fractional_delay_fidelity(v):
    tpl = simgen.make_template(VehicleType.LIGHT_TRUCK, 5.0)
    trace, truth = simgen.synth_trace(tpl, v)
    a = trace.samples_a.astype(float) - trace.midpoint
    b = trace.samples_b.astype(float) - trace.midpoint
    k, coefs = raw_correlation_peak(a, b)
    y0, y1, y2 = coefs[k - 1], coefs[k], coefs[k + 1]
    offset = 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
    assert abs(k + offset - truth.delay_samples) < 0.5


def test_zero_moments_give_no_events():
    tpl = VehicleTemplate(VehicleType.SEDAN_SUV, 4.0, (0.5, 3.5), (0.0, 0.0), 0.3)
    trace, _ = simgen.synth_trace(tpl, 60.0, noise=NoiseSpec(white_sigma=20.0, seed=1))
    assert detect_events(trace.samples_a) == []


def test_doubling_moments_doubles_waveform():
    tpl = simgen.make_template(VehicleType.BUS, 10.0)
    double = VehicleTemplate(tpl.type, tpl.length_m, tpl.dipole_offsets_m,
                             tuple(2 * m for m in tpl.dipole_moments), tpl.height_m)
    one, _ = simgen.synth_trace(tpl, 50.0)
    two, _ = simgen.synth_trace(double, 50.0)
    a1 = one.samples_a.astype(float) - one.midpoint
    a2 = two.samples_a.astype(float) - two.midpoint
    assert np.max(np.abs(a2 - 2 * a1)) <= 1.0 + 1e-9


def test_single_dipole_pass_is_symmetric():
    tpl = VehicleTemplate(VehicleType.MOTORBIKE, 2.0, (1.0,), (1.0,), 0.3)
    clean, _, lead = simgen.clean_signal(tpl, 36.0, 1000.0, 1.0)
    peak = int(np.argmax(clean))
    half = min(peak, clean.size - 1 - peak)
    np.testing.assert_allclose(clean[peak - half : peak], clean[peak + half : peak : -1], atol=1e-9 * clean.max())
    profile = simgen.dipole_profile(np.linspace(-2, 2, 401), 0.3)
    np.testing.assert_allclose(profile, profile[::-1])


def test_dwell_time_scales_with_length_over_speed():
    pipe = Pipeline()
    rng = np.random.default_rng(8)
    ratios, predicted = [], []
    for vt in TYPE_ORDER:
        lo, hi = type_interval(vt)
        for _ in range(4):
            length = float(hi - rng.uniform(0, hi - lo))
            v = float(rng.uniform(25, 140))
            trace, _ = simgen.synth_trace(simgen.make_template(vt, length), v)
            est = pipe.analyze_pair(vehicle_pair(trace))
            ratios.append(est.length.effective_cycles)
            predicted.append(length / (v / 3.6) * 1000.0)
    slope, intercept = np.polyfit(predicted, ratios, 1)
    r = np.corrcoef(predicted, ratios)[0, 1]
    assert r > 0.99
    assert slope == pytest.approx(1.0, abs=0.1)


def test_clipping_raises():
    tpl = simgen.make_template(VehicleType.SEDAN_SUV, 4.5)
    loud = VehicleTemplate(tpl.type, tpl.length_m, tpl.dipole_offsets_m,
                           tuple(50 * m for m in tpl.dipole_moments), tpl.height_m)
    with pytest.raises(ClippingError):
        simgen.synth_trace(loud, 60.0)


def test_snr_sets_total_noise_power():
    tpl = simgen.make_template(VehicleType.SEDAN_SUV, 4.5)
    clean, _, _ = simgen.clean_signal(tpl, 60.0, 1000.0, 1.0)
    spec = simgen.noise_for_snr(clean, 20.0)
    total = spec.white_sigma**2 + 0.5 * spec.ac_amp**2 + 0.5 * spec.drift_amp**2
    assert 10 * np.log10(simgen.signal_power(clean) / total) == pytest.approx(20.0)


def test_training_mix_histogram():
    spec = FleetSpec(counts=simgen.TRAINING_MIX, seed=0, snr_db=None)
    plan = collections.Counter(t for t in TYPE_ORDER for _ in range(spec.counts.get(t, 0)))
    assert sum(plan.values()) == 1000
    assert [plan[t] for t in (VehicleType.MOTORBIKE, VehicleType.SEDAN_SUV, VehicleType.LIGHT_TRUCK,
                              VehicleType.MEDIUM_TRUCK, VehicleType.HEAVY_TRUCK, VehicleType.SUPER_TRUCK,
                              VehicleType.BUS)] == [15, 350, 280, 120, 85, 50, 100]
    assert sum(simgen.TEST_MIX.values()) == 1153


def test_small_fleet_labels_and_lengths():
    fleet = simgen.synth_fleet(FleetSpec(counts={t: 3 for t in TYPE_ORDER}, seed=4))
    assert collections.Counter(v.truth.vehicle_type for v in fleet) == {t: 3 for t in TYPE_ORDER}
    for veh in fleet:
        lo, hi = type_interval(veh.truth.vehicle_type)
        assert lo < veh.truth.length_m <= hi
        assert veh.trace.label.vehicle_type is veh.truth.vehicle_type
        assert 20.0 < veh.truth.v_kmh <= 150.0


def test_fleet_manifest_is_byte_identical(tmp_path):
    spec = FleetSpec(counts={VehicleType.SEDAN_SUV: 2, VehicleType.BUS: 1}, seed=9)
    a = simgen.write_fleet(simgen.synth_fleet(spec), tmp_path / "a")
    b = simgen.write_fleet(simgen.synth_fleet(spec), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_fleet(tmp_path):
    manifest = simgen.write_fleet(simgen.synth_fleet(FleetSpec()), tmp_path)
    assert manifest.exists()


def test_fleet_spec_round_trip():
    spec = FleetSpec(counts=simgen.TEST_MIX, seed=2, snr_db=30.0, speed_range_kmh=(30.0, 90.0))
    assert FleetSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kwargs", [{"counts": {"Bus": -1}}, {"speed_range_kmh": (50.0, 40.0)}])
def test_fleet_spec_validation(kwargs):
    with pytest.raises(ValueError):
        FleetSpec(**kwargs)


@pytest.mark.parametrize("vt,length", [(VehicleType.MOTORBIKE, 3.5), (VehicleType.SUPER_TRUCK, 11.0)])
def test_template_length_must_fit_type(vt, length):
    with pytest.raises(ValueError):
        simgen.make_template(vt, length)
