"""Temporal and low-band spectral features of a normalized vehicle waveform."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .dsp import fft_magnitude, next_power_of_two
from .errors import NonFiniteInput, ZeroEnergy

LOW_BAND_HZ = 20

FEATURE_NAMES = (
    "length_m",
    "mean_t",
    "std_t",
    "cog_t",
    "disp_t",
    "mean_f",
    "std_f",
    "cog_f",
    "disp_f",
)
TEMPORAL_FEATURES = ("length_m", "mean_t", "std_t", "cog_t", "disp_t")
SPECTRAL_FEATURES = ("length_m", "mean_f", "std_f", "cog_f", "disp_f")


@dataclass(frozen=True)
class FeatureVector:
    length_m: float
    mean_t: float
    std_t: float
    cog_t: float
    disp_t: float
    mean_f: float
    std_f: float
    cog_f: float
    disp_f: float
    # provenance, not fed to classifiers
    v_kmh: Optional[float] = None
    bin: Optional[str] = None

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise NonFiniteInput(f"non-finite feature in {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def weighted_moments(weights) -> tuple[float, float]:
    """Center of gravity and dispersion of 1-based positions under ``|weights|``."""
    w = np.abs(np.asarray(weights, dtype=float))
    total = w.sum()
    if not total > 0:
        raise ZeroEnergy("all-zero weights")
    idx = np.arange(1, w.size + 1)
    cog = float(np.dot(idx, w) / total)
    disp = float(np.dot((idx - cog) ** 2, w) / total)
    return cog, disp


def temporal_features(wave) -> tuple[float, float, float, float]:
    x = np.asarray(wave, dtype=float)
    if x.size == 0:
        raise ZeroEnergy("empty waveform")
    cog, disp = weighted_moments(x)
    return float(x.mean()), float(x.std()), cog, disp


def spectrum_pad_length(n_samples: int, sample_rate_hz: float) -> int:
    """FFT size whose bins fall exactly on every integer Hz and fit the signal.

    For an integer sample rate this is the smallest multiple of the rate that
    holds the signal. Otherwise the next power of two at or above both, whose
    bins are at most 1 Hz wide and are read at the nearest bin.
    """
    rate = int(round(sample_rate_hz))
    if rate > 0 and abs(rate - sample_rate_hz) < 1e-9:
        return rate * max(1, -(-n_samples // rate))
    return next_power_of_two(max(n_samples, int(np.ceil(sample_rate_hz))))


def low_band_spectrum(wave, sample_rate_hz: float, n_bins: int = LOW_BAND_HZ) -> np.ndarray:
    """Scaled magnitudes at the bins nearest 1, 2, ..., ``n_bins`` Hz."""
    x = np.asarray(wave, dtype=float)
    pad = spectrum_pad_length(x.size, sample_rate_hz)
    mags = fft_magnitude(x, pad) * (sample_rate_hz / pad)
    hz = np.arange(1, n_bins + 1)
    bins = np.rint(hz * pad / sample_rate_hz).astype(int)
    return mags[bins]


def spectral_features(wave, sample_rate_hz: float):
    """Returns ``(mean_f, std_f, cog_f, disp_f, low_band)`` over the 1..20 Hz band."""
    low = low_band_spectrum(wave, sample_rate_hz)
    if not low.sum() > 0:
        raise ZeroEnergy("no energy in the low band")
    cog, disp = weighted_moments(low)
    return float(low.mean()), float(low.std()), cog, disp, low


def build_feature_vector(wave_norm, length, sample_rate_hz: float,
                         v_kmh: Optional[float] = None) -> FeatureVector:
    mean_t, std_t, cog_t, disp_t = temporal_features(wave_norm)
    mean_f, std_f, cog_f, disp_f, _ = spectral_features(wave_norm, sample_rate_hz)
    return FeatureVector(
        length_m=float(length.length_m),
        mean_t=mean_t,
        std_t=std_t,
        cog_t=cog_t,
        disp_t=disp_t,
        mean_f=mean_f,
        std_f=std_f,
        cog_f=cog_f,
        disp_f=disp_f,
        v_kmh=v_kmh,
        bin=str(length.bin),
    )


def write_feature_csv(rows, labels, path) -> None:
    """Training-set interchange: nine feature columns plus a ``label`` column."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(FEATURE_NAMES) + ["label"])
        for fv, label in zip(rows, labels):
            writer.writerow([repr(float(v)) for v in fv.as_array()] + [str(label)])


def read_feature_csv(path):
    rows, labels = [], []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURE_NAMES) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"feature CSV lacks columns {sorted(missing)}")
        for rec in reader:
            rows.append(FeatureVector(**{n: float(rec[n]) for n in FEATURE_NAMES}))
            labels.append(rec.get("label", ""))
    return rows, labels
