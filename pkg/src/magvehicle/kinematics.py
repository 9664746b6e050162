"""Speed from waveform matching, length from trimmed dwell time, and length bins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import normalized_correlation
from .errors import (
    ImplausibleLength,
    InsufficientData,
    NoReliableMatch,
    OutOfRange,
    UndefinedCorrelation,
    ZeroEnergy,
)
from .vehicles import BIN_INTERVALS, BIN_ORDER, LengthBin

TAU_MIN = 1
TAU_MAX = 199
MIN_PEAK_COEF = 0.3
MAX_PLAUSIBLE_LENGTH_M = 25.0
DEFAULT_V_MIN_KMH = 20.0


@dataclass(frozen=True)
class SpeedEstimate:
    v_kmh: float
    tau_samples: int
    peak_coef: float


@dataclass(frozen=True)
class CycleConfig:
    fade_fraction_c: float = 0.04

    def __post_init__(self):
        if not 0.0 <= self.fade_fraction_c < 0.5:
            raise ValueError("fade_fraction_c must lie in [0, 0.5)")


@dataclass(frozen=True)
class LengthEstimate:
    length_m: float
    effective_cycles: float
    bin: LengthBin
    out_of_range: bool = False


def speed_from_lag(tau_samples: float, sensor_distance_m: float, sample_rate_hz: float) -> float:
    return 3.6 * sensor_distance_m * sample_rate_hz / tau_samples


def lag_from_speed(v_kmh: float, sensor_distance_m: float, sample_rate_hz: float) -> float:
    return 3.6 * sensor_distance_m * sample_rate_hz / v_kmh


def correlation_profile(wave_a, wave_b, tau_min: int = TAU_MIN, tau_max: int = TAU_MAX) -> np.ndarray:
    """Pearson coefficient for every lag in ``[tau_min, tau_max]``; flat windows give 0."""
    coefs = np.zeros(tau_max - tau_min + 1)
    for k, tau in enumerate(range(tau_min, tau_max + 1)):
        if tau >= len(wave_b) or min(len(wave_a), len(wave_b) - tau) < 2:
            coefs[k:] = np.nan
            break
        try:
            coefs[k] = normalized_correlation(wave_a, wave_b, tau)
        except UndefinedCorrelation:
            coefs[k] = 0.0
    return coefs


def estimate_speed(pair, min_peak_coef: float = MIN_PEAK_COEF) -> SpeedEstimate:
    """Lag maximizing the A/B correlation, converted to km/h.

    Ties resolve to the smaller lag (np.argmax keeps the first maximum).
    """
    coefs = correlation_profile(pair.wave_a, pair.wave_b)
    valid = np.where(np.isnan(coefs), -np.inf, coefs)
    if not np.any(np.isfinite(valid)) or not np.any(coefs[np.isfinite(coefs)] != 0.0):
        raise NoReliableMatch("no defined correlation in the lag range")
    k = int(np.argmax(valid))
    peak = float(valid[k])
    if peak < min_peak_coef:
        raise NoReliableMatch(f"peak correlation {peak:.3f} below {min_peak_coef}")
    tau = TAU_MIN + k
    v = speed_from_lag(tau, pair.sensor_distance_m, pair.sample_rate_hz)
    return SpeedEstimate(v_kmh=v, tau_samples=tau, peak_coef=peak)


def effective_cycles(filtered_wave, config: CycleConfig = CycleConfig()) -> float:
    """Samples between the ``c`` and ``1 - c`` points of cumulative |x| area."""
    x = np.abs(np.asarray(filtered_wave, dtype=float))
    if x.size == 0:
        raise InsufficientData("empty waveform")
    energy = np.cumsum(x)
    total = energy[-1]
    if not total > 0:
        raise ZeroEnergy("waveform has zero area")
    c = config.fade_fraction_c
    j_lo = int(np.searchsorted(energy, c * total, side="left"))
    j_hi = int(np.searchsorted(energy, (1.0 - c) * total, side="right")) - 1
    return float(max(j_hi - j_lo, 0))


def length_bin(length_m: float) -> LengthBin:
    if not length_m > 0:
        raise ValueError(f"length {length_m} must be positive")
    for b in BIN_ORDER:
        lo, hi = BIN_INTERVALS[b]
        if lo < length_m <= hi:
            return b
    raise OutOfRange(f"length {length_m} m beyond 20 m")


def estimate_length(cycles: float, speed: SpeedEstimate, sample_rate_hz: float,
                    literal_formula: bool = False) -> LengthEstimate:
    """Speed in m/s times dwell time.

    ``literal_formula=True`` uses ``cycles / (3.6 f)`` instead, which ignores
    the speed entirely; kept only for comparison runs.
    """
    if not cycles > 0:
        raise ValueError("cycles must be positive")
    if literal_formula:
        length = cycles / (3.6 * sample_rate_hz)
    else:
        length = (speed.v_kmh / 3.6) * (cycles / sample_rate_hz)
    if length > MAX_PLAUSIBLE_LENGTH_M:
        raise ImplausibleLength(f"estimated length {length:.2f} m")
    if length > BIN_INTERVALS[LengthBin.B12_20][1]:
        return LengthEstimate(length, float(cycles), LengthBin.B12_20, out_of_range=True)
    return LengthEstimate(length, float(cycles), length_bin(length))
