"""End-to-end per-vehicle processing: detect, match, measure, describe, classify."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp
from .detect import DetectorConfig, Event, WaveformPair, detect_events, extract_pair
from .errors import MagVehicleError
from .features import FeatureVector, build_feature_vector
from .kinematics import (
    DEFAULT_V_MIN_KMH,
    MIN_PEAK_COEF,
    CycleConfig,
    LengthEstimate,
    SpeedEstimate,
    effective_cycles,
    estimate_length,
    estimate_speed,
)
from .svm import KernelParams

REPORT_SCHEMA = 1
NORMALIZATIONS = ("resample", "smoother")


@dataclass(frozen=True)
class PipelineConfig:
    detector: DetectorConfig = DetectorConfig()
    bandstop: dsp.FilterSpec = dsp.DEFAULT_BANDSTOP
    highpass: dsp.FilterSpec = dsp.DEFAULT_HIGHPASS
    lowpass: dsp.FilterSpec = dsp.DEFAULT_LOWPASS
    fade_c: float = 0.04
    v_min_kmh: float = DEFAULT_V_MIN_KMH
    kernel: KernelParams = KernelParams()
    model_path: Optional[str] = None
    min_peak_coef: float = MIN_PEAK_COEF
    literal_length_formula: bool = False
    # "resample" maps every waveform to v_min_kmh before band-limiting;
    # "smoother" applies only the single two-tap step and measures at the trace rate.
    speed_normalization: str = "resample"
    # Road distance kept after the detected departure for the length path; the
    # longer max_shift extension only serves the lag search. None keeps it all.
    length_tail_m: Optional[float] = 2.0

    def __post_init__(self):
        if self.speed_normalization not in NORMALIZATIONS:
            raise ValueError(f"speed_normalization must be one of {NORMALIZATIONS}")
        if not 0.0 <= self.fade_c < 0.5:
            raise ValueError("fade_c must lie in [0, 0.5)")
        if not self.v_min_kmh > 0:
            raise ValueError("v_min_kmh must be positive")
        if self.length_tail_m is not None and self.length_tail_m < 0:
            raise ValueError("length_tail_m must be non-negative")

    def to_dict(self) -> dict:
        return {
            "detector": self.detector.to_dict(),
            "bandstop": self.bandstop.to_dict(),
            "highpass": self.highpass.to_dict(),
            "lowpass": self.lowpass.to_dict(),
            "fade_c": self.fade_c,
            "v_min_kmh": self.v_min_kmh,
            "kernel": self.kernel.to_dict(),
            "model_path": self.model_path,
            "min_peak_coef": self.min_peak_coef,
            "literal_length_formula": self.literal_length_formula,
            "speed_normalization": self.speed_normalization,
            "length_tail_m": self.length_tail_m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base = cls()
        return cls(
            detector=DetectorConfig.from_dict(d["detector"]) if "detector" in d else base.detector,
            bandstop=dsp.FilterSpec.from_dict(d["bandstop"]) if "bandstop" in d else base.bandstop,
            highpass=dsp.FilterSpec.from_dict(d["highpass"]) if "highpass" in d else base.highpass,
            lowpass=dsp.FilterSpec.from_dict(d["lowpass"]) if "lowpass" in d else base.lowpass,
            fade_c=float(d.get("fade_c", base.fade_c)),
            v_min_kmh=float(d.get("v_min_kmh", base.v_min_kmh)),
            kernel=KernelParams.from_dict(d["kernel"]) if "kernel" in d else base.kernel,
            model_path=d.get("model_path"),
            min_peak_coef=float(d.get("min_peak_coef", base.min_peak_coef)),
            literal_length_formula=bool(d.get("literal_length_formula", False)),
            speed_normalization=str(d.get("speed_normalization", base.speed_normalization)),
            length_tail_m=d.get("length_tail_m", base.length_tail_m),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_length_params(self, lowpass_hz: float, highpass_hz: float, fade_c: float) -> "PipelineConfig":
        return replace(
            self,
            lowpass=length_filter_spec("lowpass", lowpass_hz, self.lowpass),
            highpass=length_filter_spec("highpass", highpass_hz, self.highpass),
            fade_c=fade_c,
        )


def length_filter_spec(which: str, pass_hz: float, template: dsp.FilterSpec) -> dsp.FilterSpec:
    """Band-edge filter for the length estimator, stop edge derived from the pass edge.

    Lowpass stops at 3x the pass edge, highpass at 1/100 of it; ripple,
    attenuation and design rate are inherited from ``template``.
    """
    stop = 3.0 * pass_hz if which == "lowpass" else pass_hz / 100.0
    return dsp.FilterSpec(
        kind=template.kind,
        family=template.family,
        sample_rate_hz=template.sample_rate_hz,
        passband_hz=pass_hz,
        stopband_hz=stop,
        passband_ripple_db=template.passband_ripple_db,
        stopband_atten_db=template.stopband_atten_db,
    )


@dataclass(frozen=True, eq=False)
class VehicleAnalysis:
    speed: SpeedEstimate
    wave_norm: np.ndarray
    wave_lh: np.ndarray
    length: LengthEstimate
    features: FeatureVector


@dataclass
class VehicleRecord:
    event: Event
    arrival_ms: int
    v_kmh: Optional[float] = None
    length_m: Optional[float] = None
    bin: Optional[str] = None
    type: Optional[str] = None
    decision_values: dict = field(default_factory=dict)
    latency_s: float = 0.0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["event"] = self.event.to_dict()
        return d


class Pipeline:
    """Holds the designed filters for one configuration."""

    def __init__(self, config: PipelineConfig = PipelineConfig()):
        self.config = config
        self.bandstop = dsp.design_filter(config.bandstop)
        self.highpass = dsp.design_filter(config.highpass)
        self.lowpass = dsp.design_filter(config.lowpass)

    def denoise_pair(self, pair: WaveformPair) -> WaveformPair:
        return WaveformPair(
            wave_a=dsp.apply_filter(self.bandstop, pair.wave_a),
            wave_b=dsp.apply_filter(self.bandstop, pair.wave_b),
            sample_rate_hz=pair.sample_rate_hz,
            sensor_distance_m=pair.sensor_distance_m,
            source_event=pair.source_event,
            truncated=pair.truncated,
        )

    def speed_and_norm(self, pair: WaveformPair):
        """Bandstop both channels, match them, and speed-normalize channel A.

        Channel A is cut at the departure plus ``length_tail_m`` of road
        before normalization, so the noise-only extension kept for the lag
        search does not pad the length measurement.
        """
        clean = self.denoise_pair(pair)
        speed = estimate_speed(clean, self.config.min_peak_coef)
        return speed, self.normalize(self.length_window(clean, speed.v_kmh), speed.v_kmh)

    def length_window(self, pair: WaveformPair, v_kmh: float) -> np.ndarray:
        tail = self.config.length_tail_m
        if tail is None or pair.source_event is None:
            return pair.wave_a
        event = pair.source_event
        # The detected span runs one window past the last exceeding window start.
        keep = event.departure_index - event.arrival_index - self.config.detector.window_len + 1
        keep += int(round(tail / (v_kmh / 3.6) * pair.sample_rate_hz))
        return pair.wave_a[: max(keep, 2)]

    def normalize(self, wave, v_kmh: float) -> np.ndarray:
        v_ref = self.config.v_min_kmh
        if self.config.speed_normalization == "resample":
            return dsp.resample_to_speed(wave, v_kmh, v_ref)
        # The two-tap form is only defined for v >= v_min.
        return dsp.interpolate_normalize(wave, max(v_kmh, v_ref), v_ref)

    def trace_rate_cycles(self, cycles: float, v_kmh: float) -> float:
        """Convert a cycle count on the normalized waveform to trace-rate samples."""
        if self.config.speed_normalization == "resample":
            return cycles * self.config.v_min_kmh / v_kmh
        return cycles

    def band_limit(self, wave_norm) -> np.ndarray:
        return dsp.apply_filter(self.lowpass, dsp.apply_filter(self.highpass, wave_norm))

    def analyze_pair(self, pair: WaveformPair) -> VehicleAnalysis:
        speed, norm = self.speed_and_norm(pair)
        lh = self.band_limit(norm)
        cycles = self.trace_rate_cycles(effective_cycles(lh, CycleConfig(self.config.fade_c)),
                                        speed.v_kmh)
        length = estimate_length(cycles, speed, pair.sample_rate_hz,
                                 literal_formula=self.config.literal_length_formula)
        fv = build_feature_vector(norm, length, pair.sample_rate_hz, v_kmh=speed.v_kmh)
        return VehicleAnalysis(speed, norm, lh, length, fv)

    def process_trace(self, trace, model=None) -> list[VehicleRecord]:
        """One record per detected vehicle; ``model`` (a HierarchicalModel) adds the type."""
        from .hierarchy import classify_with_scores

        records = []
        for event in detect_events(trace.samples_a, self.config.detector):
            t0 = time.perf_counter()
            arrival_ms = trace.start_time_ms + int(round(1000.0 * event.arrival_index / trace.sample_rate_hz))
            rec = VehicleRecord(event=event, arrival_ms=arrival_ms)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pair = extract_pair(trace, event, self.config.detector)
                res = self.analyze_pair(pair)
                rec.v_kmh = res.speed.v_kmh
                rec.length_m = res.length.length_m
                rec.bin = str(res.length.bin)
                if model is not None:
                    vtype, scores = classify_with_scores(model, res.features, res.length.bin)
                    rec.type = vtype.value
                    rec.decision_values = scores
            except MagVehicleError as exc:
                rec.error = f"{type(exc).__name__}: {exc}"
            rec.latency_s = time.perf_counter() - t0
            records.append(rec)
        return records


def vehicle_pair(trace, detector: DetectorConfig = DetectorConfig()) -> Optional[WaveformPair]:
    """Pair for a single-vehicle labeled trace, spanning every detected event, or None.

    A slow multi-axle vehicle can leave quiet stretches between axle groups
    longer than the merge gap, so the detector reports one event per group.
    The trace is known to hold one vehicle, so the groups are joined.
    """
    events = detect_events(trace.samples_a, detector)
    if not events:
        return None
    event = Event(events[0].arrival_index, events[-1].departure_index,
                  any(e.truncated for e in events))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return extract_pair(trace, event, detector)


def write_report(records, path, summary: Optional[dict] = None) -> None:
    doc = {"schema": REPORT_SCHEMA, "records": [r.to_dict() for r in records]}
    if summary is not None:
        doc["summary"] = summary
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
