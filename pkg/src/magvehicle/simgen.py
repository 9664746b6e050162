"""Synthetic two-sensor traces from vehicles modeled as rows of point dipoles.

Each vehicle is a set of vertical dipoles at fixed offsets behind its front
bumper, passing at constant speed over two sensors ``d`` meters apart at a
vertical distance ``h``. The z-field seen by a sensor at along-road distance
``u`` from a dipole of moment ``m`` is ``m * (2h^2 - u^2) / (u^2 + h^2)^(5/2)``.
Sensor B sees exactly the sensor-A field delayed by ``d / (v / 3.6)`` seconds.

Multi-dipole vehicles carry a few strong dipoles (engine, axles, loads) and
a weaker alternating chain for the body between them, so the signature has
structure along the whole chassis rather than isolated bumps.

Templates are *calibrated*: the end dipoles are inset from the bumpers so
that, after speed normalization and the default highpass/lowpass chain, the
central ``1 - 2c`` share of the noiseless |field| area spans exactly the
vehicle length (``c`` defaults to 4%).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import dsp
from .errors import ClippingError
from .kinematics import CycleConfig, effective_cycles
from .trace_io import ManifestEntry, Trace, VehicleLabel, write_manifest, write_trace
from .vehicles import TYPE_ORDER, VehicleType, type_interval

DEFAULT_FADE_C = 0.04
CLIP_LIMIT = 0.01
# Reference sedan peak lands at 25% of the half-range of the ADC.
REFERENCE_PEAK_FRACTION = 0.25
# Speed every waveform is normalized to before band-limiting (the lower end of
# the supported speed range).
REFERENCE_SPEED_KMH = 20.0
# Body-chain dipole pitch as a multiple of the chassis height.
BODY_PITCH_H = 3.0
# Extra road after the last dipole kept when measuring the filtered core, so
# the highpass tail is not cut off.
TAIL_MARGIN_M = 2.0
# Upper bound on the end-dipole boost used when an inset cannot shorten the core.
MAX_END_GAIN = 4.0


@dataclass(frozen=True)
class VehicleTemplate:
    type: VehicleType
    length_m: float
    dipole_offsets_m: tuple
    dipole_moments: tuple
    height_m: float

    def __post_init__(self):
        object.__setattr__(self, "type", VehicleType(self.type))
        offs = tuple(float(o) for o in self.dipole_offsets_m)
        moms = tuple(float(m) for m in self.dipole_moments)
        if len(offs) != len(moms) or not offs:
            raise ValueError("need matching, non-empty offsets and moments")
        if list(offs) != sorted(offs):
            raise ValueError("dipole offsets must be ascending")
        if offs[0] < 0 or offs[-1] > self.length_m:
            raise ValueError("dipole offsets must lie within the vehicle")
        if not self.height_m > 0:
            raise ValueError("height_m must be positive")
        lo, hi = type_interval(self.type)
        if not lo < self.length_m <= hi:
            raise ValueError(f"{self.type.value} length {self.length_m} outside ({lo}, {hi}]")
        object.__setattr__(self, "dipole_offsets_m", offs)
        object.__setattr__(self, "dipole_moments", moms)


@dataclass(frozen=True)
class NoiseSpec:
    white_sigma: float = 0.0
    ac_amp: float = 0.0
    ac_freq_hz: float = 50.0
    drift_amp: float = 0.0
    drift_freq_hz: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.white_sigma, self.ac_amp, self.drift_amp) < 0:
            raise ValueError("noise amplitudes must be non-negative")
        if not (self.ac_freq_hz > 0 and self.drift_freq_hz > 0):
            raise ValueError("noise frequencies must be positive")


@dataclass(frozen=True)
class GroundTruth:
    vehicle_type: VehicleType
    length_m: float
    v_kmh: float
    delay_samples: float
    arrival_index: int
    departure_index: int
    white_sigma: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicle_type"] = self.vehicle_type.value
        return d


# ----------------------------------------------------------------- physics


def dipole_profile(u, h: float) -> np.ndarray:
    """z-field of a unit vertical dipole at along-road distance ``u`` and height ``h``."""
    u = np.asarray(u, dtype=float)
    return (2.0 * h * h - u * u) / (u * u + h * h) ** 2.5


def array_field(positions, offsets, moments, h: float) -> np.ndarray:
    """Field at sensor-relative front positions ``positions`` (meters)."""
    positions = np.asarray(positions, dtype=float)
    out = np.zeros_like(positions)
    for off, m in zip(offsets, moments):
        out += m * dipole_profile(positions - off, h)
    return out


def core_width(offsets, moments, h: float, c: float, step: float = 0.005) -> float:
    """Along-road width of the central ``1 - 2c`` share of the raw |field| area."""
    margin = 12.0 * h
    grid = np.arange(offsets[0] - margin, offsets[-1] + margin, step)
    area = np.cumsum(np.abs(array_field(grid, offsets, moments, h)))
    total = area[-1]
    lo = grid[np.searchsorted(area, c * total)]
    hi = grid[np.searchsorted(area, (1.0 - c) * total, side="right") - 1]
    return float(hi - lo)


@functools.lru_cache(maxsize=None)
def _reference_chain():
    return dsp.design_filter(dsp.DEFAULT_HIGHPASS), dsp.design_filter(dsp.DEFAULT_LOWPASS)


def band_limited_core_width(offsets, moments, h: float, c: float,
                            sample_rate_hz: float = 1000.0,
                            v_ref_kmh: float = REFERENCE_SPEED_KMH) -> float:
    """Core width after the default highpass/lowpass chain, measured at the reference speed.

    The field is sampled along the road as if the vehicle drove at
    ``v_ref_kmh``, filtered exactly as the length estimator filters a
    speed-normalized waveform, and the ``c``-trimmed area core converted back
    to meters.
    """
    hp, lp = _reference_chain()
    step = v_ref_kmh / 3.6 / sample_rate_hz
    grid = np.arange(offsets[0] - 8.0 * h, offsets[-1] + 8.0 * h + TAIL_MARGIN_M, step)
    field_ = array_field(grid, offsets, moments, h)
    y = dsp.apply_filter(lp, dsp.apply_filter(hp, field_))
    return effective_cycles(y, CycleConfig(c)) * step


def body_layout(length_m: float, fractions, moments, body_moment: float, h: float,
                inset: float) -> tuple[np.ndarray, np.ndarray]:
    """Main dipoles at ``inset + f * (L - 2 inset)`` plus an alternating body chain.

    The chain fills the span between the end dipoles at a pitch of about
    ``BODY_PITCH_H * h``, skipping points that crowd a main dipole.
    """
    fractions = np.asarray(fractions, dtype=float)
    moments = np.asarray(moments, dtype=float)
    span = length_m - 2.0 * inset
    main = inset + fractions * span
    if body_moment <= 0 or fractions.size < 2:
        return main, moments
    pitch = BODY_PITCH_H * h
    n = max(int(round(span / pitch)), 1)
    chain = inset + np.arange(1, n) * span / n
    chain = chain[[np.min(np.abs(main - p)) > 0.49 * pitch for p in chain]] if chain.size else chain
    signs = np.where(np.arange(chain.size) % 2 == 0, -1.0, 1.0)
    offs = np.concatenate([main, chain])
    moms = np.concatenate([moments, body_moment * signs])
    order = np.argsort(offs, kind="stable")
    return offs[order], moms[order]


def calibrate_layout(length_m: float, fractions, moments, body_moment: float, h: float,
                     c: float = DEFAULT_FADE_C) -> tuple[np.ndarray, np.ndarray]:
    """Place the dipoles so the band-limited ``c`` core spans ``length_m``.

    The end dipoles are first inset from the bumpers. If even a zero inset
    leaves the core short (long bodies put more than ``c`` of the area inside
    the end dipoles), the two end moments are scaled up instead. Single-dipole
    templates simply sit at ``L * f``.
    """
    moments = np.asarray(moments, dtype=float)
    if len(fractions) == 1:
        return np.array([length_m * float(fractions[0])]), moments

    def width(inset, end_gain=1.0):
        scaled = moments.copy()
        scaled[[0, -1]] *= end_gain
        offs, moms = body_layout(length_m, fractions, scaled, body_moment, h, inset)
        return band_limited_core_width(offs, moms, h, c)

    if width(0.0) > length_m:
        lo, hi = 0.0, 0.49 * length_m
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            if width(mid) > length_m:
                lo = mid
            else:
                hi = mid
        return body_layout(length_m, fractions, moments, body_moment, h, 0.5 * (lo + hi))

    lo, hi = 1.0, MAX_END_GAIN
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if width(0.0, mid) < length_m:
            lo = mid
        else:
            hi = mid
    scaled = moments.copy()
    scaled[[0, -1]] *= 0.5 * (lo + hi)
    return body_layout(length_m, fractions, scaled, body_moment, h, 0.0)


# ----------------------------------------------------------------- catalog


@dataclass(frozen=True)
class CatalogEntry:
    fractions: tuple
    moments: tuple
    height_m: float
    body_moment: float = 0.0


CATALOG = {
    VehicleType.MOTORBIKE: CatalogEntry((0.5,), (1.0,), 0.30),
    VehicleType.SEDAN_SUV: CatalogEntry((0.0, 1.0), (1.0, 0.7), 0.25, 0.8),
    VehicleType.LIGHT_TRUCK: CatalogEntry((0.0, 1.0), (0.8, -1.6), 0.28, 0.8),
    VehicleType.BUS: CatalogEntry((0.0, 0.5, 1.0), (1.3, 1.0, 1.3), 0.36, 0.8),
    VehicleType.MEDIUM_TRUCK: CatalogEntry((0.0, 0.55, 1.0), (1.2, -0.6, 1.4), 0.30, 0.8),
    VehicleType.HEAVY_TRUCK: CatalogEntry((0.0, 0.45, 0.8, 1.0), (1.4, 1.2, -1.6, -1.6), 0.40, 0.8),
    VehicleType.SUPER_TRUCK: CatalogEntry((0.0, 0.3, 0.55, 0.8, 1.0), (1.5, 1.3, 1.3, 1.5, 1.5), 0.40, 0.8),
}


def make_template(vehicle_type, length_m: float, rng: Optional[np.random.Generator] = None,
                  jitter: float = 0.15, fade_c: float = DEFAULT_FADE_C) -> VehicleTemplate:
    """Catalog template for ``vehicle_type`` at ``length_m``, optionally jittered.

    Jitter scales each main moment and the body moment by U(1 - jitter, 1 + jitter)
    and the height by U(1 - jitter/2, 1 + jitter/2).
    """
    vehicle_type = VehicleType(vehicle_type)
    entry = CATALOG[vehicle_type]
    moments = np.array(entry.moments, dtype=float)
    body = entry.body_moment
    h = entry.height_m
    if rng is not None and jitter > 0:
        moments = moments * rng.uniform(1 - jitter, 1 + jitter, moments.size)
        body = body * rng.uniform(1 - jitter, 1 + jitter)
        h = h * rng.uniform(1 - jitter / 2, 1 + jitter / 2)
    offsets, all_moments = calibrate_layout(length_m, entry.fractions, moments, body, h, fade_c)
    return VehicleTemplate(vehicle_type, length_m, tuple(offsets), tuple(all_moments), h)


def _reference_peak() -> float:
    template = make_template(VehicleType.SEDAN_SUV, 4.5)
    grid = np.linspace(-3.0, 7.5, 20001)
    return float(np.max(np.abs(array_field(grid, template.dipole_offsets_m,
                                           template.dipole_moments, template.height_m))))


_REF_PEAK = _reference_peak()


def counts_per_unit(adc_bits: int = 16) -> float:
    return REFERENCE_PEAK_FRACTION * (1 << (adc_bits - 1)) / _REF_PEAK


# ----------------------------------------------------------------- traces


def _front_positions(template, v_kmh, fs, pre_roll_s, lead_m, n):
    t = np.arange(n) / fs
    return (v_kmh / 3.6) * (t - pre_roll_s) - lead_m


def _timeline(template: VehicleTemplate, v_kmh: float, fs: float, d_m: float,
              pre_roll_s: float, post_roll_s: float):
    lead_m = 6.0 * template.height_m
    travel = lead_m + template.dipole_offsets_m[-1] + d_m + lead_m
    n = int(math.ceil((pre_roll_s + travel / (v_kmh / 3.6) + post_roll_s) * fs))
    return lead_m, n


def clean_signal(template: VehicleTemplate, v_kmh: float, fs_hz: float, d_m: float,
                 pre_roll_s: float = 0.6, post_roll_s: float = 0.5, adc_bits: int = 16):
    """Noiseless sensor fields in ADC count units (midpoint not yet added)."""
    lead_m, n = _timeline(template, v_kmh, fs_hz, d_m, pre_roll_s, post_roll_s)
    x = _front_positions(template, v_kmh, fs_hz, pre_roll_s, lead_m, n)
    gain = counts_per_unit(adc_bits)
    args = (template.dipole_offsets_m, template.dipole_moments, template.height_m)
    a = gain * array_field(x, *args)
    b = gain * array_field(x - d_m, *args)
    return a, b, lead_m


def signal_power(clean_a) -> float:
    """Mean square over the span where |signal| exceeds 5% of its peak."""
    mag = np.abs(clean_a)
    peak = mag.max()
    if peak == 0:
        return 0.0
    idx = np.flatnonzero(mag >= 0.05 * peak)
    seg = clean_a[idx[0] : idx[-1] + 1]
    return float(np.mean(seg**2))


def noise_for_snr(clean_a, snr_db: float, ac_ratio: float = 1.0, drift_ratio: float = 1.0,
                  seed: int = 0, **kwargs) -> NoiseSpec:
    """Noise whose total power (white + hum + drift) sits ``snr_db`` below the signal.

    Hum and drift amplitudes are given relative to the white-noise sigma, so
    each sinusoid contributes ``(ratio * sigma)^2 / 2`` to the total.
    """
    total = signal_power(clean_a) / 10.0 ** (snr_db / 10.0)
    sigma = math.sqrt(total / (1.0 + 0.5 * ac_ratio**2 + 0.5 * drift_ratio**2))
    return NoiseSpec(white_sigma=sigma, ac_amp=ac_ratio * sigma,
                     drift_amp=drift_ratio * sigma, seed=seed, **kwargs)


def _noise(n: int, fs: float, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    out = spec.white_sigma * rng.standard_normal(n)
    if spec.ac_amp:
        out += spec.ac_amp * np.sin(2 * np.pi * spec.ac_freq_hz * t + rng.uniform(0, 2 * np.pi))
    if spec.drift_amp:
        out += spec.drift_amp * np.sin(2 * np.pi * spec.drift_freq_hz * t + rng.uniform(0, 2 * np.pi))
    return out


def _quantize(values, adc_bits: int):
    top = (1 << adc_bits) - 1
    counts = np.rint(values + (1 << (adc_bits - 1)))
    clipped = int(np.count_nonzero((counts < 0) | (counts > top)))
    return np.clip(counts, 0, top).astype(np.int64), clipped


def synth_trace(template: VehicleTemplate, v_kmh: float, fs_hz: float = 1000.0,
                d_m: float = 1.0, noise: NoiseSpec = NoiseSpec(), pre_roll_s: float = 0.6,
                post_roll_s: float = 0.5, adc_bits: int = 16, start_time_ms: int = 0,
                label: bool = True):
    """Render one vehicle passage into a two-channel ADC trace.

    Returns ``(trace, ground_truth)``.
    """
    if not 0 < v_kmh:
        raise ValueError("speed must be positive")
    if not pre_roll_s > 0:
        raise ValueError("pre_roll_s must be positive")
    a, b, lead_m = clean_signal(template, v_kmh, fs_hz, d_m, pre_roll_s, post_roll_s, adc_bits)
    n = a.size
    rng = np.random.default_rng(noise.seed)
    a_counts, clip_a = _quantize(a + _noise(n, fs_hz, noise, rng), adc_bits)
    b_counts, clip_b = _quantize(b + _noise(n, fs_hz, noise, rng), adc_bits)
    if clip_a + clip_b > CLIP_LIMIT * 2 * n:
        raise ClippingError(f"{clip_a + clip_b} of {2 * n} samples clipped")

    mps = v_kmh / 3.6
    arrival = int(round(pre_roll_s * fs_hz))
    rear_clear = (lead_m + template.dipole_offsets_m[-1] + lead_m) / mps
    truth = GroundTruth(
        vehicle_type=template.type,
        length_m=template.length_m,
        v_kmh=float(v_kmh),
        delay_samples=d_m * fs_hz / mps,
        arrival_index=arrival,
        departure_index=min(n, arrival + int(round(rear_clear * fs_hz))),
        white_sigma=noise.white_sigma,
    )
    lab = VehicleLabel(template.type, template.length_m, float(v_kmh)) if label else None
    trace = Trace(
        sample_rate_hz=fs_hz,
        sensor_distance_m=d_m,
        samples_a=a_counts,
        samples_b=b_counts,
        adc_bits=adc_bits,
        start_time_ms=start_time_ms,
        label=lab,
    )
    return trace, truth


# ----------------------------------------------------------------- fleets

# Default class mixes: 1000 training vehicles and a
# 1153-vehicle test set.
TRAINING_MIX = {
    VehicleType.MOTORBIKE: 15,
    VehicleType.SEDAN_SUV: 350,
    VehicleType.LIGHT_TRUCK: 280,
    VehicleType.MEDIUM_TRUCK: 120,
    VehicleType.HEAVY_TRUCK: 85,
    VehicleType.SUPER_TRUCK: 50,
    VehicleType.BUS: 100,
}
TEST_MIX = {
    VehicleType.MOTORBIKE: 15,
    VehicleType.SEDAN_SUV: 532,
    VehicleType.LIGHT_TRUCK: 309,
    VehicleType.BUS: 76,
    VehicleType.MEDIUM_TRUCK: 161,
    VehicleType.HEAVY_TRUCK: 36,
    VehicleType.SUPER_TRUCK: 24,
}


@dataclass(frozen=True)
class FleetSpec:
    counts: Mapping = field(default_factory=dict)
    speed_range_kmh: tuple = (20.0, 150.0)
    snr_db: Optional[float] = 20.0
    ac_ratio: float = 1.0
    drift_ratio: float = 1.0
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    sample_rate_hz: float = 1000.0
    sensor_distance_m: float = 1.0
    adc_bits: int = 16
    jitter: float = 0.15
    fade_c: float = DEFAULT_FADE_C

    def __post_init__(self):
        counts = {VehicleType(k): int(v) for k, v in dict(self.counts).items()}
        if any(v < 0 for v in counts.values()):
            raise ValueError("vehicle counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        lo, hi = self.speed_range_kmh
        if not 0 < lo < hi:
            raise ValueError("bad speed range")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {k.value: v for k, v in self.counts.items()}
        d["speed_range_kmh"] = list(self.speed_range_kmh)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FleetSpec":
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseSpec(**d["noise"])
        if "speed_range_kmh" in d:
            d["speed_range_kmh"] = tuple(d["speed_range_kmh"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimVehicle:
    trace: Trace
    truth: GroundTruth


def sample_length(rng, vehicle_type) -> float:
    """Length drawn uniformly from the type's length bin."""
    lo, hi = type_interval(vehicle_type)
    # Uniform on (lo, hi]: flip the half-open side of rng.uniform's [lo, hi).
    return float(hi - rng.uniform(0.0, hi - lo))


def synth_vehicle(vehicle_type, spec: FleetSpec, seed_seq: np.random.SeedSequence,
                  start_time_ms: int = 0) -> SimVehicle:
    rng = np.random.default_rng(seed_seq)
    length = sample_length(rng, vehicle_type)
    lo, hi = spec.speed_range_kmh
    v = float(hi - rng.uniform(0.0, hi - lo))
    template = make_template(vehicle_type, length, rng, spec.jitter, spec.fade_c)
    noise_seed = int(rng.integers(2**31))
    if spec.snr_db is not None:
        clean_a, _, _ = clean_signal(template, v, spec.sample_rate_hz, spec.sensor_distance_m,
                                     adc_bits=spec.adc_bits)
        noise = noise_for_snr(clean_a, spec.snr_db, spec.ac_ratio, spec.drift_ratio,
                              seed=noise_seed, ac_freq_hz=spec.noise.ac_freq_hz,
                              drift_freq_hz=spec.noise.drift_freq_hz)
    else:
        noise = NoiseSpec(**{**asdict(spec.noise), "seed": noise_seed})
    trace, truth = synth_trace(template, v, spec.sample_rate_hz, spec.sensor_distance_m,
                               noise, adc_bits=spec.adc_bits, start_time_ms=start_time_ms)
    return SimVehicle(trace, truth)


def synth_fleet(spec: FleetSpec) -> list[SimVehicle]:
    """Deterministic labeled fleet, vehicles grouped by type in report order.

    Vehicle ``k`` draws from the ``k``-th child of ``SeedSequence(spec.seed)``,
    so a fleet is reproducible and independent of evaluation order.
    """
    plan = [t for t in TYPE_ORDER for _ in range(spec.counts.get(t, 0))]
    children = np.random.SeedSequence(spec.seed).spawn(len(plan))
    return [
        synth_vehicle(t, spec, ss, start_time_ms=10_000 * k)
        for k, (t, ss) in enumerate(zip(plan, children))
    ]


def write_fleet(fleet, out_dir) -> Path:
    """Write every trace plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, veh in enumerate(fleet):
        name = f"veh_{k:05d}_{veh.truth.vehicle_type.value}.csv"
        write_trace(veh.trace, out_dir / name)
        entries.append(ManifestEntry(name, veh.trace.label, veh.truth.to_dict()))
    return write_manifest(entries, out_dir)
