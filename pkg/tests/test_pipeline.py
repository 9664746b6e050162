import json

import numpy as np
import pytest

from magvehicle import simgen
from magvehicle.detect import detect_events
from magvehicle.pipeline import Pipeline, PipelineConfig, length_filter_spec, vehicle_pair, write_report
from magvehicle.trace_io import Trace
from magvehicle.vehicles import LengthBin, VehicleType


def two_vehicle_trace():
    first, t1 = simgen.synth_trace(simgen.make_template(VehicleType.SEDAN_SUV, 4.5), 60.0,
                                   noise=simgen.NoiseSpec(white_sigma=3.0, seed=1))
    second, t2 = simgen.synth_trace(simgen.make_template(VehicleType.BUS, 10.0), 45.0,
                                    noise=simgen.NoiseSpec(white_sigma=3.0, seed=2))
    trace = Trace(1000.0, 1.0, np.r_[first.samples_a, second.samples_a],
                  np.r_[first.samples_b, second.samples_b], start_time_ms=5000)
    return trace, (t1, t2), len(first)


def test_process_trace_two_vehicles():
    trace, (t1, t2), offset = two_vehicle_trace()
    records = Pipeline().process_trace(trace)
    assert len(records) == 2
    for rec, truth in zip(records, (t1, t2)):
        assert rec.error is None and rec.type is None
        assert rec.v_kmh == pytest.approx(truth.v_kmh, rel=0.03)
        assert rec.length_m == pytest.approx(truth.length_m, rel=0.1)
    assert records[0].bin == "B3_6" and records[1].bin == "B6_12"
    assert records[1].event.arrival_index > offset
    assert records[1].arrival_ms == 5000 + records[1].event.arrival_index


def test_quiet_trace_has_no_records():
    rng = np.random.default_rng(0)
    quiet = 32768 + np.rint(rng.normal(0, 3, 4000)).astype(int)
    assert Pipeline().process_trace(Trace(1000.0, 1.0, quiet, quiet.copy())) == []


def test_vehicle_pair_joins_axle_groups():
    tpl = simgen.make_template(VehicleType.SUPER_TRUCK, 12.5)
    clean, _, _ = simgen.clean_signal(tpl, 21.0, 1000.0, 1.0)
    trace, truth = simgen.synth_trace(tpl, 21.0, noise=simgen.noise_for_snr(clean, 20.0, seed=3))
    events = detect_events(trace.samples_a)
    assert len(events) > 1  # a slow multi-axle pass splits into groups
    pair = vehicle_pair(trace)
    assert pair.source_event.arrival_index == events[0].arrival_index
    assert pair.source_event.departure_index == events[-1].departure_index
    assert Pipeline().analyze_pair(pair).length.bin is LengthBin.B12_20


@pytest.mark.parametrize("normalization", ["resample", "smoother"])
def test_normalizations_recover_length(normalization):
    pipe = Pipeline(PipelineConfig(speed_normalization=normalization))
    trace, truth = simgen.synth_trace(simgen.make_template(VehicleType.LIGHT_TRUCK, 5.0), 40.0)
    est = pipe.analyze_pair(vehicle_pair(trace))
    assert est.length.length_m == pytest.approx(truth.length_m, rel=0.15)
    assert est.features.bin == str(est.length.bin)


def test_length_filter_spec_edges():
    base = PipelineConfig()
    lp = length_filter_spec("lowpass", 40.0, base.lowpass)
    hp = length_filter_spec("highpass", 10.0, base.highpass)
    assert (lp.passband_hz, lp.stopband_hz) == ((40.0,), (120.0,))
    assert (hp.passband_hz, hp.stopband_hz) == ((10.0,), (0.1,))
    tuned = base.with_length_params(30.0, 5.0, 0.06)
    assert tuned.fade_c == 0.06 and tuned.lowpass.passband_hz == (30.0,)


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(fade_c=0.06, speed_normalization="smoother", length_tail_m=None)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert PipelineConfig.load(path) == cfg
    assert PipelineConfig.from_dict({}) == PipelineConfig()


@pytest.mark.parametrize("kwargs", [{"speed_normalization": "x"}, {"fade_c": 0.5}, {"v_min_kmh": 0.0},
                                    {"length_tail_m": -1.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs)


def test_report_json(tmp_path):
    trace, _, _ = two_vehicle_trace()
    records = Pipeline().process_trace(trace)
    write_report(records, tmp_path / "r.json", {"vehicles": 2})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema"] == 1 and len(doc["records"]) == 2
    assert set(doc["records"][0]) >= {"arrival_ms", "v_kmh", "length_m", "bin", "type", "event"}
