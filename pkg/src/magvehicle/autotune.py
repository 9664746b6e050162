"""Grid search for the length estimator's band and trim fraction, and kernel cross-validation.

The length search sweeps lowpass pass edge, highpass pass edge and the
fade fraction ``c``, counting vehicles whose estimated length bin differs
from the truth at every grid point. Speed estimation and speed
normalization do not depend on these parameters, so they run once per
vehicle; each (lowpass, highpass) pair is then designed once and every
``c`` reuses the same band-limited waveform.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import svm
from .errors import (
    DesignInfeasible,
    ImplausibleLength,
    InsufficientData,
    InvalidFilterSpec,
    MagVehicleError,
    StratificationError,
)
from .kinematics import CycleConfig, effective_cycles, estimate_length
from .pipeline import Pipeline, PipelineConfig
from .vehicles import LengthBin


@dataclass(frozen=True)
class TuneGrid:
    lowpass_pass_hz: tuple = (30.0, 40.0, 50.0, 60.0)
    highpass_pass_hz: tuple = (5.0, 10.0, 15.0)
    fade_c: tuple = (0.02, 0.04, 0.06, 0.08)
    folds: int = 5

    def __post_init__(self):
        for name in ("lowpass_pass_hz", "highpass_pass_hz", "fade_c"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, values)
        if min(self.lowpass_pass_hz) <= 0 or min(self.highpass_pass_hz) <= 0:
            raise ValueError("pass edges must be positive")
        if max(self.highpass_pass_hz) >= min(self.lowpass_pass_hz):
            raise ValueError("every highpass edge must lie below every lowpass edge")
        if not all(0.0 <= c <= 0.2 for c in self.fade_c):
            raise ValueError("fade_c values must lie in [0, 0.2]")
        if self.folds < 1:
            raise ValueError("folds must be positive")

    def points(self) -> list[tuple[float, float, float]]:
        """Every (lowpass, highpass, c) combination."""
        return list(itertools.product(self.lowpass_pass_hz, self.highpass_pass_hz, self.fade_c))

    def to_dict(self) -> dict:
        return {
            "lowpass_pass_hz": list(self.lowpass_pass_hz),
            "highpass_pass_hz": list(self.highpass_pass_hz),
            "fade_c": list(self.fade_c),
            "folds": self.folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TuneGrid":
        return cls(**d)


def _point_key(point) -> str:
    lp, hp, c = point
    return f"{lp:g}/{hp:g}/{c:g}"


@dataclass(frozen=True, eq=False)
class TuneResult:
    best_lowpass_hz: float
    best_highpass_hz: float
    best_c: float
    train_error_count: int
    error_surface: dict  # (lowpass, highpass, c) -> error count
    infeasible: tuple = ()
    n_vehicles: int = 0

    def to_dict(self) -> dict:
        return {
            "best_lowpass_hz": self.best_lowpass_hz,
            "best_highpass_hz": self.best_highpass_hz,
            "best_c": self.best_c,
            "train_error_count": self.train_error_count,
            "n_vehicles": self.n_vehicles,
            "error_surface": {_point_key(p): e for p, e in self.error_surface.items()},
            "infeasible": [_point_key(p) for p in self.infeasible],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def surface_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["lowpass_hz", "highpass_hz", "fade_c", "errors", "infeasible"])
        bad = set(self.infeasible)
        for p, e in self.error_surface.items():
            writer.writerow([repr(p[0]), repr(p[1]), repr(p[2]), e, int(p in bad)])
        return buf.getvalue()

    def write(self, json_path, csv_path: Optional[str] = None) -> None:
        Path(json_path).write_text(self.to_json())
        if csv_path is not None:
            Path(csv_path).write_text(self.surface_csv())


def select_best(surface: dict) -> tuple:
    """Minimum error; ties go to the smallest c, then lowpass, then highpass."""
    return min(surface, key=lambda p: (surface[p], p[2], p[0], p[1]))


def _bin_or_none(cycles, speed, fs):
    try:
        return estimate_length(cycles, speed, fs).bin
    except (ImplausibleLength, ValueError):
        return None


def tune_length_params(pairs: Sequence, truth_bins: Sequence, grid: TuneGrid = TuneGrid(),
                       base: PipelineConfig = PipelineConfig()) -> TuneResult:
    """Exhaustive search over ``grid`` for the fewest length-bin mismatches.

    ``pairs`` holds one :class:`WaveformPair` per vehicle (``None`` for a
    vehicle the detector missed); ``truth_bins`` the matching true bins. A
    vehicle whose speed cannot be estimated counts as an error everywhere.
    A grid point whose filters cannot be designed scores the worst possible
    error (the dataset size) and is listed in ``infeasible``.
    """
    if len(pairs) == 0:
        raise InsufficientData("empty tuning set")
    if len(pairs) != len(truth_bins):
        raise ValueError("pairs and truth_bins differ in length")
    truth = [LengthBin(b) for b in truth_bins]
    n = len(pairs)
    front = Pipeline(base)
    prepared = []
    for pair in pairs:
        if pair is None:
            prepared.append(None)
            continue
        try:
            prepared.append(front.speed_and_norm(pair))
        except MagVehicleError:
            prepared.append(None)

    surface, infeasible = {}, []
    for lp, hp in itertools.product(grid.lowpass_pass_hz, grid.highpass_pass_hz):
        try:
            pipe = Pipeline(base.with_length_params(lp, hp, base.fade_c))
        except (DesignInfeasible, InvalidFilterSpec):
            for c in grid.fade_c:
                surface[(lp, hp, c)] = n
                infeasible.append((lp, hp, c))
            continue
        banded = [None if p is None else pipe.band_limit(p[1]) for p in prepared]
        for c in grid.fade_c:
            errors = 0
            for prep, lh, pair, tb in zip(prepared, banded, pairs, truth):
                if prep is None:
                    errors += 1
                    continue
                speed = prep[0]
                try:
                    cycles = pipe.trace_rate_cycles(effective_cycles(lh, CycleConfig(c)), speed.v_kmh)
                except MagVehicleError:
                    errors += 1
                    continue
                if _bin_or_none(cycles, speed, pair.sample_rate_hz) != tb:
                    errors += 1
            surface[(lp, hp, c)] = errors

    # Keep the surface in grid order regardless of which points failed.
    surface = {p: surface[p] for p in grid.points()}
    best = select_best(surface)
    return TuneResult(best[0], best[1], best[2], surface[best], surface, tuple(infeasible), n)


# ----------------------------------------------------------------- kernel cross-validation


def stratified_folds(labels, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per row; each class is shuffled and dealt round-robin.

    Raises :class:`StratificationError` when some class has fewer rows than folds.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = np.empty(labels.size, dtype=int)
    for cls in sorted(np.unique(labels).tolist()):
        idx = np.flatnonzero(labels == cls)
        if idx.size < folds:
            raise StratificationError(f"class {cls!r} has {idx.size} rows, fewer than {folds} folds")
        out[rng.permutation(idx)] = np.arange(idx.size) % folds
    return out


@dataclass(frozen=True, eq=False)
class CvResult:
    params: svm.KernelParams
    accuracy: dict = field(default_factory=dict)  # (gamma, C) -> mean fold accuracy


def cross_validate_kernel(rows, labels, gamma_grid, c_grid, folds: int = 5, seed: int = 0,
                          base: svm.KernelParams = svm.KernelParams()) -> svm.KernelParams:
    return cross_validate_kernel_detail(rows, labels, gamma_grid, c_grid, folds, seed, base).params


def cross_validate_kernel_detail(rows, labels, gamma_grid, c_grid, folds: int = 5, seed: int = 0,
                                 base: svm.KernelParams = svm.KernelParams()) -> CvResult:
    """Mean stratified k-fold accuracy for every (gamma, C).

    The best point has the highest accuracy; ties go to the smaller C, then
    the smaller gamma.
    """
    x = svm.as_matrix(rows)
    y = np.asarray(labels, dtype=float).reshape(-1)
    fold_of = stratified_folds(y, folds, seed)
    scores = {}
    for gamma, c_pen in itertools.product(sorted(gamma_grid), sorted(c_grid)):
        params = svm.KernelParams(gamma=gamma, c_penalty=c_pen, tolerance=base.tolerance,
                                  max_passes=base.max_passes)
        accs = []
        for k in range(folds):
            test = fold_of == k
            model = svm.train(x[~test], y[~test], params, seed=seed + k)
            accs.append(float(np.mean(svm.predict_many(model, x[test]) == y[test])))
        scores[(gamma, c_pen)] = float(np.mean(accs))
    best = min(scores, key=lambda gc: (-scores[gc], gc[1], gc[0]))
    params = svm.KernelParams(gamma=best[0], c_penalty=best[1], tolerance=base.tolerance,
                              max_passes=base.max_passes)
    return CvResult(params, scores)
