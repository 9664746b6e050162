"""Vehicle arrival/departure detection and per-vehicle waveform extraction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientData, NoQuietBaseline, TruncatedEvent

# Largest sensor-to-sensor lag searched when matching waveforms.
MAX_SHIFT = 200


@dataclass(frozen=True)
class DetectorConfig:
    window_len: int = 50
    threshold_factor: float = 5.0
    baseline_len: int = 500
    min_event_gap: int = 200
    max_event_len: int = 5000

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if self.baseline_len < self.window_len:
            raise ValueError("baseline_len must be >= window_len")
        if self.max_event_len <= self.window_len:
            raise ValueError("max_event_len must exceed window_len")
        if not self.threshold_factor > 0:
            raise ValueError("threshold_factor must be positive")
        if self.min_event_gap < 0:
            raise ValueError("min_event_gap must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(**d)


@dataclass(frozen=True)
class Event:
    arrival_index: int
    departure_index: int
    truncated: bool = False

    def __post_init__(self):
        if not 0 <= self.arrival_index < self.departure_index:
            raise ValueError(f"bad event bounds [{self.arrival_index}, {self.departure_index})")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class WaveformPair:
    wave_a: np.ndarray
    wave_b: np.ndarray
    sample_rate_hz: float
    sensor_distance_m: float
    source_event: Event
    truncated: bool = False

    def __post_init__(self):
        a = np.asarray(self.wave_a, dtype=float)
        b = np.asarray(self.wave_b, dtype=float)
        if a.ndim != 1 or a.shape != b.shape or a.size == 0:
            raise ValueError("waveforms must be non-empty and equally long")
        a.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "wave_a", a)
        object.__setattr__(self, "wave_b", b)


def rolling_std(samples, window_len: int) -> np.ndarray:
    """Population standard deviation of every length-``window_len`` window.

    Each window is evaluated with a centered two-pass formula, so large DC
    offsets (raw ADC counts) do not cost precision.
    """
    x = np.asarray(samples, dtype=float)
    if window_len < 1:
        raise ValueError("window_len must be positive")
    if window_len > x.size:
        raise InsufficientData(f"window {window_len} longer than {x.size} samples")
    return sliding_window_view(x, window_len).std(axis=1)


def _runs(mask: np.ndarray):
    """(start, stop) index pairs of True runs, stop exclusive."""
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def detect_events(samples, config: DetectorConfig = DetectorConfig()) -> list[Event]:
    """Find vehicle passages as runs of high local variability.

    The threshold is ``threshold_factor`` times the std of the first
    ``baseline_len`` samples. A window starting at ``i`` covers samples
    ``[i, i + window_len)``; an exceedance run of window starts ``[s, e)`` is
    reported as the sample span ``[s, e - 1 + window_len)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < config.baseline_len:
        raise InsufficientData(f"need {config.baseline_len} samples, got {x.size}")
    w = config.window_len
    stds = rolling_std(x, w)
    threshold = config.threshold_factor * float(np.std(x[: config.baseline_len]))
    above = stds > threshold
    if np.any(above[: config.baseline_len - w + 1]):
        raise NoQuietBaseline("signal already active inside the baseline window")

    spans = [[s, e - 1 + w] for s, e in _runs(above)]
    merged = []
    for span in spans:
        if merged and span[0] - merged[-1][1] < config.min_event_gap:
            merged[-1][1] = max(merged[-1][1], span[1])
        else:
            merged.append(span)

    events = []
    for start, stop in merged:
        stop = min(stop, x.size)
        if stop - start > config.max_event_len:
            events.append(Event(start, start + config.max_event_len, truncated=True))
        else:
            events.append(Event(start, stop))
    return events


def extract_pair(trace, event: Event, config: DetectorConfig = DetectorConfig(),
                 max_shift: int = MAX_SHIFT) -> WaveformPair:
    """Cut both channels on ``[arrival, departure + max_shift)`` and remove the ADC midpoint.

    The tail extension keeps sensor-B content available for every lag the
    speed search considers. Segments clipped by the trace end (or events cut
    at ``max_event_len``) are returned with ``truncated=True`` and a
    TruncatedEvent warning.
    """
    n = len(trace)
    if not 0 <= event.arrival_index < event.departure_index <= n:
        raise ValueError(f"event {event} outside trace of {n} samples")
    stop = min(event.departure_index + max_shift, n)
    truncated = event.truncated or (n - event.departure_index) < config.window_len
    if truncated:
        warnings.warn(f"event at {event.arrival_index} truncated", TruncatedEvent, stacklevel=2)
    mid = float(trace.midpoint)
    a = trace.samples_a[event.arrival_index : stop].astype(float) - mid
    b = trace.samples_b[event.arrival_index : stop].astype(float) - mid
    return WaveformPair(
        wave_a=a,
        wave_b=b,
        sample_rate_hz=trace.sample_rate_hz,
        sensor_distance_m=trace.sensor_distance_m,
        source_event=event,
        truncated=truncated,
    )
