"""Binary RBF-kernel support vector machine trained by sequential minimal optimization.

Training follows Platt's SMO: sweep the points that violate the KKT
conditions, pair each with the partner maximizing ``|E_i - E_j|`` among the
unbounded multipliers, and fall back to a seeded random scan when that pair
makes no progress. Error values for every point are cached and updated in
closed form after each accepted step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import InsufficientData, NonFiniteInput, SingleClassError

SCHEMA_VERSION = 1
_ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class KernelParams:
    gamma: float = 1.0 / 9.0
    c_penalty: float = 10.0
    tolerance: float = 1e-3
    max_passes: int = 5

    def __post_init__(self):
        if not (self.gamma > 0 and self.c_penalty > 0 and self.tolerance > 0):
            raise ValueError("gamma, c_penalty and tolerance must be positive")
        if not self.tolerance < 1:
            raise ValueError("tolerance must be < 1")
        if self.max_passes < 1:
            raise ValueError("max_passes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scaler:
    means: np.ndarray
    stds: np.ndarray
    constant: tuple = ()

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.stds

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "constant": list(self.constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.array(d["means"], float), np.array(d["stds"], float), tuple(d.get("constant", ())))


def as_matrix(rows) -> np.ndarray:
    if len(rows) and hasattr(rows[0], "as_array"):
        mat = np.vstack([r.as_array() for r in rows])
    else:
        mat = np.asarray(rows, dtype=float)
        if mat.ndim == 1:
            mat = mat[:, None]
    if not np.all(np.isfinite(mat)):
        raise NonFiniteInput("feature matrix contains NaN or infinity")
    return mat


def standardize_fit(rows) -> Scaler:
    """Per-column mean/std; constant columns keep std 1 and are listed in ``constant``."""
    x = as_matrix(rows)
    if x.shape[0] < 2:
        raise InsufficientData("need at least 2 rows to standardize")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    flat = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
    stds = np.where(flat, 1.0, stds)
    return Scaler(means, stds, tuple(int(i) for i in np.flatnonzero(flat)))


def rbf_kernel(u, v, gamma: float) -> np.ndarray:
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    sq = (u * u).sum(1)[:, None] + (v * v).sum(1)[None, :] - 2.0 * u @ v.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(frozen=True, eq=False)
class TrainedClassifier:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    scaler: Scaler
    params: KernelParams
    converged: bool = True
    iterations: int = 0

    def decision_function(self, x) -> np.ndarray:
        z = self.scaler.transform(as_matrix(x))
        if self.alphas.size == 0:
            return np.full(z.shape[0], self.bias)
        k = rbf_kernel(z, self.support_vectors, self.params.gamma)
        return k @ (self.alphas * self.labels) + self.bias

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "scaler": self.scaler.to_dict(),
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "bias": self.bias,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedClassifier":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        n_feat = len(d["scaler"]["means"])
        return cls(
            support_vectors=np.array(d["support_vectors"], float).reshape(-1, n_feat),
            alphas=np.array(d["alphas"], float),
            labels=np.array(d["labels"], float),
            bias=float(d["bias"]),
            scaler=Scaler.from_dict(d["scaler"]),
            params=KernelParams.from_dict(d["params"]),
            converged=bool(d.get("converged", True)),
            iterations=int(d.get("iterations", 0)),
        )


class _Smo:
    def __init__(self, x, y, params: KernelParams, seed: int, on_step):
        self.x = x
        self.y = y
        self.n = len(y)
        self.c = params.c_penalty
        self.tol = params.tolerance
        self.k = rbf_kernel(x, x, params.gamma)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.errors = -y.copy()  # f(x) - y with f = 0
        self.rng = np.random.default_rng(seed)
        self.on_step = on_step
        self.steps = 0

    def violates(self, i: int) -> bool:
        r = self.errors[i] * self.y[i]
        return (r < -self.tol and self.alpha[i] < self.c) or (r > self.tol and self.alpha[i] > 0)

    def take_step(self, i: int, j: int) -> bool:
        if i == j:
            return False
        alpha, y, k, c = self.alpha, self.y, self.k, self.c
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            lo, hi = max(0.0, aj - ai), min(c, c + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - c), min(c, ai + aj)
        if hi - lo < _ALPHA_EPS:
            return False
        # Dual gain along the feasible line is g*t - eta*t^2/2 with t = aj_new - aj.
        g = y[j] * (self.errors[i] - self.errors[j])
        eta = k[i, i] + k[j, j] - 2.0 * k[i, j]
        if eta > 1e-12:
            aj_new = float(np.clip(aj + g / eta, lo, hi))
        else:
            gain = lambda t: g * t - 0.5 * eta * t * t
            g_lo, g_hi = gain(lo - aj), gain(hi - aj)
            if g_hi > g_lo + 1e-12:
                aj_new = hi
            elif g_lo > g_hi + 1e-12:
                aj_new = lo
            else:
                return False
        if abs(aj_new - aj) < 1e-8 * (aj_new + aj + 1e-8):
            return False
        if aj_new < _ALPHA_EPS:
            aj_new = 0.0
        elif aj_new > c - _ALPHA_EPS:
            aj_new = c
        ai_new = ai + y[i] * y[j] * (aj - aj_new)
        if ai_new < _ALPHA_EPS:
            ai_new = 0.0
        elif ai_new > c - _ALPHA_EPS:
            ai_new = c
        di = (ai_new - ai) * y[i]
        dj = (aj_new - aj) * y[j]
        b1 = self.b - self.errors[i] - di * k[i, i] - dj * k[i, j]
        b2 = self.b - self.errors[j] - di * k[i, j] - dj * k[j, j]
        if 0.0 < ai_new < c:
            b_new = b1
        elif 0.0 < aj_new < c:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.errors += di * k[i] + dj * k[j] + (b_new - self.b)
        alpha[i], alpha[j] = ai_new, aj_new
        self.b = b_new
        self.steps += 1
        if self.on_step is not None:
            self.on_step(alpha.copy(), self.b)
        return True

    def examine(self, i: int) -> bool:
        free = np.flatnonzero((self.alpha > 0) & (self.alpha < self.c))
        if free.size > 1:
            j = int(free[np.argmax(np.abs(self.errors[i] - self.errors[free]))])
            if self.take_step(i, j):
                return True
        for pool in (free, np.arange(self.n)):
            if pool.size == 0:
                continue
            start = int(self.rng.integers(pool.size))
            for j in np.roll(pool, -start):
                if self.take_step(i, int(j)):
                    return True
        return False

    def refit_bias(self) -> None:
        """Place ``b`` where the current multipliers best satisfy KKT.

        The pairwise update only estimates ``b``. Once no pair can make
        progress, the multipliers are optimal and ``b`` is the mean over free
        multipliers, or the middle of the interval the bounded ones allow.
        """
        y, a, c = self.y, self.alpha, self.c
        g = self.errors + y - self.b  # kernel expansion without the bias
        free = (a > 0) & (a < c)
        if free.any():
            b = float(np.mean(y[free] - g[free]))
        else:
            at_zero, at_c = a <= 0, a >= c
            lower = np.r_[1 - g[(y > 0) & at_zero], -1 - g[(y < 0) & at_c]]
            upper = np.r_[1 - g[(y > 0) & at_c], -1 - g[(y < 0) & at_zero]]
            lo = lower.max() if lower.size else -np.inf
            hi = upper.min() if upper.size else np.inf
            b = 0.5 * (lo + hi) if np.isfinite(lo) and np.isfinite(hi) else (lo if np.isfinite(lo) else hi)
        self.errors += b - self.b
        self.b = float(b)

    def run(self, max_passes: int, max_steps: int) -> bool:
        passes = 0
        refits = 0
        while passes < max_passes and self.steps < max_steps:
            changed = 0
            for i in range(self.n):
                if self.violates(i) and self.examine(i):
                    changed += 1
            if changed == 0 and refits < max_passes and any(self.violates(i) for i in range(self.n)):
                # No pair moves yet some point violates: the bias is off, not the multipliers.
                self.refit_bias()
                refits += 1
                passes = 0
                continue
            passes = passes + 1 if changed == 0 else 0
        return not any(self.violates(i) for i in range(self.n))


def train(rows, labels, params: KernelParams = KernelParams(), seed: int = 0,
          max_steps: int = 200_000,
          on_step: Optional[Callable[[np.ndarray, float], None]] = None) -> TrainedClassifier:
    """Fit a binary classifier on ``rows`` with labels in {-1, +1}.

    ``on_step(alphas, bias)`` is called after every accepted pair update.
    """
    x_raw = as_matrix(rows)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != x_raw.shape[0]:
        raise ValueError("rows and labels differ in length")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise SingleClassError("training data contains a single class")
    scaler = standardize_fit(x_raw)
    x = scaler.transform(x_raw)
    smo = _Smo(x, y, params, seed, on_step)
    converged = smo.run(params.max_passes, max_steps)
    keep = smo.alpha > 0
    return TrainedClassifier(
        support_vectors=x[keep].copy(),
        alphas=smo.alpha[keep].copy(),
        labels=y[keep].copy(),
        bias=float(smo.b),
        scaler=scaler,
        params=params,
        converged=converged,
        iterations=smo.steps,
    )


def decision_value(model: TrainedClassifier, x) -> float:
    row = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float).reshape(-1)
    return float(model.decision_function(row[None, :])[0])


def predict(model: TrainedClassifier, x) -> int:
    """Sign of the decision value; exactly zero maps to +1."""
    return 1 if decision_value(model, x) >= 0 else -1


def predict_many(model: TrainedClassifier, rows) -> np.ndarray:
    return np.where(model.decision_function(rows) >= 0, 1, -1)


def kkt_residuals(alphas, labels, decision, c_penalty: float) -> np.ndarray:
    """Amount by which each point breaks its KKT condition (0 when satisfied)."""
    margin = np.asarray(labels) * np.asarray(decision)
    alphas = np.asarray(alphas)
    res = np.zeros_like(margin)
    at_zero = alphas <= 0
    at_c = alphas >= c_penalty
    free = ~(at_zero | at_c)
    res[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    res[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    res[free] = np.abs(margin[free] - 1.0)
    return res


def dual_objective(alphas, labels, kernel) -> float:
    ay = np.asarray(alphas) * np.asarray(labels)
    return float(np.sum(alphas) - 0.5 * ay @ kernel @ ay)


def save_model(model: TrainedClassifier, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path) -> TrainedClassifier:
    return TrainedClassifier.from_dict(json.loads(Path(path).read_text()))
