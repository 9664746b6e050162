"""Length-bin routing plus three binary classifiers, and the evaluation harness.

Routing: the shortest bin is always a motorbike and the longest always a
super truck. In (3, 6] m one classifier separates sedans/SUVs from light
trucks. In (6, 12] m a second one separates buses from trucks, and a third
splits trucks into medium and heavy.

Each classifier slot holds any binary learner exposing
``decision_function(rows)`` whose sign is the prediction (>= 0 means +1).
The SVM is the primary learner; a small random forest is kept as a baseline
with the same interface.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import svm
from .errors import InsufficientData, MissingClassError
from .features import FEATURE_NAMES, FeatureVector
from .vehicles import BIN_ORDER, TYPE_BIN, TYPE_ORDER, LengthBin, VehicleType

MODEL_SCHEMA = 1

# (slot, class mapped to -1, classes mapped to +1)
SLOTS = (
    ("clf_sedan_vs_light", (VehicleType.SEDAN_SUV,), (VehicleType.LIGHT_TRUCK,)),
    ("clf_bus_vs_trucks", (VehicleType.BUS,), (VehicleType.MEDIUM_TRUCK, VehicleType.HEAVY_TRUCK)),
    ("clf_medium_vs_heavy", (VehicleType.MEDIUM_TRUCK,), (VehicleType.HEAVY_TRUCK,)),
)


# ----------------------------------------------------------------- forest baseline


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 25
    max_depth: int = 6
    min_leaf: int = 2
    max_features: Optional[int] = None  # None: round(sqrt(n_features))

    def to_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf, "max_features": self.max_features}


def _gini(pos: np.ndarray, count: np.ndarray) -> np.ndarray:
    p = pos / np.maximum(count, 1)
    return 1.0 - p * p - (1.0 - p) ** 2


def _best_split(x, y, features, min_leaf):
    """Gini-optimal (feature, threshold) over the candidate features, or None."""
    n = y.size
    best = None
    best_score = _gini(np.array([np.sum(y > 0)]), np.array([n]))[0] * n - 1e-12
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], (y[order] > 0).astype(float)
        left_pos = np.cumsum(ys)[:-1]
        left_n = np.arange(1, n)
        right_pos = left_pos[-1] + ys[-1] - left_pos if n > 1 else left_pos
        right_n = n - left_n
        score = _gini(left_pos, left_n) * left_n + _gini(right_pos, right_n) * right_n
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not np.any(valid):
            continue
        score = np.where(valid, score, np.inf)
        k = int(np.argmin(score))
        if score[k] < best_score:
            best_score = score[k]
            best = (int(f), 0.5 * (xs[k] + xs[k + 1]))
    return best


def _grow(x, y, depth, params: ForestParams, rng, n_pick):
    """Nested-list tree: ``[feature, threshold, left, right]`` or a leaf vote in [-1, 1]."""
    vote = float(np.mean(y))
    if depth >= params.max_depth or abs(vote) == 1.0 or y.size < 2 * params.min_leaf:
        return vote
    features = rng.choice(x.shape[1], size=n_pick, replace=False)
    split = _best_split(x, y, features, params.min_leaf)
    if split is None:
        return vote
    f, thr = split
    mask = x[:, f] <= thr
    return [f, thr, _grow(x[mask], y[mask], depth + 1, params, rng, n_pick),
            _grow(x[~mask], y[~mask], depth + 1, params, rng, n_pick)]


def _tree_vote(tree, row) -> float:
    while isinstance(tree, list):
        tree = tree[2] if row[tree[0]] <= tree[1] else tree[3]
    return tree


@dataclass(frozen=True, eq=False)
class ForestClassifier:
    trees: tuple
    params: ForestParams

    def decision_function(self, rows) -> np.ndarray:
        x = svm.as_matrix(rows)
        votes = np.array([[np.sign(_tree_vote(t, r)) or 1.0 for t in self.trees] for r in x])
        return votes.mean(axis=1)

    def to_dict(self) -> dict:
        return {"learner": "forest", "params": self.params.to_dict(), "trees": list(self.trees)}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestClassifier":
        return cls(tuple(d["trees"]), ForestParams(**d["params"]))


def train_forest(rows, labels, params: ForestParams = ForestParams(), seed: int = 0) -> ForestClassifier:
    """Bagged depth-limited Gini trees with per-node feature subsampling; labels in {-1, +1}."""
    x = svm.as_matrix(rows)
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.size != x.shape[0]:
        raise ValueError("rows and labels differ in length")
    n_pick = params.max_features or max(1, int(round(np.sqrt(x.shape[1]))))
    n_pick = min(n_pick, x.shape[1])
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(params.n_trees):
        idx = rng.integers(0, y.size, y.size)
        trees.append(_grow(x[idx], y[idx], 0, params, rng, n_pick))
    return ForestClassifier(tuple(trees), params)


# ----------------------------------------------------------------- model


def _head_to_dict(head) -> dict:
    d = head.to_dict()
    d.setdefault("learner", "svm")
    return d


def _head_from_dict(d: dict):
    if d.get("learner", "svm") == "forest":
        return ForestClassifier.from_dict(d)
    return svm.TrainedClassifier.from_dict({k: v for k, v in d.items() if k != "learner"})


@dataclass(frozen=True, eq=False)
class HierarchicalModel:
    clf_sedan_vs_light: object
    clf_bus_vs_trucks: object
    clf_medium_vs_heavy: object
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        unknown = set(self.feature_names) - set(FEATURE_NAMES)
        if unknown or not self.feature_names:
            raise ValueError(f"bad feature subset {self.feature_names}")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def columns(self) -> list[int]:
        return [FEATURE_NAMES.index(n) for n in self.feature_names]

    def project(self, rows) -> np.ndarray:
        return svm.as_matrix(rows)[:, self.columns]

    def to_dict(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "feature_names": list(self.feature_names),
            **{slot: _head_to_dict(getattr(self, slot)) for slot, _, _ in SLOTS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchicalModel":
        if d.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported hierarchy schema {d.get('schema')!r}")
        heads = {slot: _head_from_dict(d[slot]) for slot, _, _ in SLOTS}
        return cls(**heads, feature_names=tuple(d.get("feature_names", FEATURE_NAMES)))


def save_hierarchy(model: HierarchicalModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def load_hierarchy(path) -> HierarchicalModel:
    return HierarchicalModel.from_dict(json.loads(Path(path).read_text()))


def check_classes(labels) -> None:
    """Raise :class:`MissingClassError` for the first needed class with fewer than 2 rows."""
    labels = [VehicleType(l) for l in labels]
    for _, neg, pos in SLOTS:
        for t in neg + pos:
            if labels.count(t) < 2:
                raise MissingClassError(t.value)


def train_hierarchy(rows: Sequence[FeatureVector], labels, params: svm.KernelParams = svm.KernelParams(),
                    seed: int = 0, feature_names: Sequence[str] = FEATURE_NAMES,
                    learner: str = "svm", forest_params: ForestParams = ForestParams()) -> HierarchicalModel:
    """Fit the three binary classifiers on the rows of their class pairs.

    Every class the three classifiers need must have at least two rows;
    otherwise :class:`MissingClassError` names the first one lacking.
    """
    labels = [VehicleType(l) for l in labels]
    if len(labels) != len(rows):
        raise ValueError("rows and labels differ in length")
    check_classes(labels)
    x_all = svm.as_matrix(rows)[:, [FEATURE_NAMES.index(n) for n in feature_names]]
    lab = np.array([t.value for t in labels])
    heads = {}
    for k, (slot, neg, pos) in enumerate(SLOTS):
        mask = np.isin(lab, [t.value for t in neg + pos])
        y = np.where(np.isin(lab[mask], [t.value for t in pos]), 1.0, -1.0)
        if learner == "svm":
            heads[slot] = svm.train(x_all[mask], y, params, seed=seed + k)
        elif learner == "forest":
            heads[slot] = train_forest(x_all[mask], y, forest_params, seed=seed + k)
        else:
            raise ValueError(f"unknown learner {learner!r}")
    return HierarchicalModel(**heads, feature_names=tuple(feature_names))


def _score(head, row: np.ndarray) -> float:
    return float(head.decision_function(row[None, :])[0])


def classify_with_scores(model: HierarchicalModel, fv, length_bin) -> tuple[VehicleType, dict]:
    """Type for one vehicle plus the decision value of every classifier consulted."""
    length_bin = LengthBin(length_bin)
    row = model.project([fv])[0]
    if length_bin is LengthBin.B0_3:
        return VehicleType.MOTORBIKE, {}
    if length_bin is LengthBin.B12_20:
        return VehicleType.SUPER_TRUCK, {}
    if length_bin is LengthBin.B3_6:
        s = _score(model.clf_sedan_vs_light, row)
        return (VehicleType.LIGHT_TRUCK if s >= 0 else VehicleType.SEDAN_SUV), {"clf_sedan_vs_light": s}
    s = _score(model.clf_bus_vs_trucks, row)
    scores = {"clf_bus_vs_trucks": s}
    if s < 0:
        return VehicleType.BUS, scores
    s2 = _score(model.clf_medium_vs_heavy, row)
    scores["clf_medium_vs_heavy"] = s2
    return (VehicleType.HEAVY_TRUCK if s2 >= 0 else VehicleType.MEDIUM_TRUCK), scores


def classify(model: HierarchicalModel, fv, length_bin) -> VehicleType:
    return classify_with_scores(model, fv, length_bin)[0]


# ----------------------------------------------------------------- evaluation


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are truth, columns are predictions, both in ``labels`` order."""

    labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        labels = tuple(str(l) for l in self.labels)
        if counts.shape != (len(labels), len(labels)):
            raise ValueError("counts must be square and match the labels")
        if np.any(counts < 0) or not np.all(counts == np.rint(counts)):
            raise ValueError("counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_pairs(cls, truth, predicted, labels=None) -> "ConfusionMatrix":
        labels = tuple(str(l) for l in (labels or TYPE_ORDER))
        index = {l: i for i, l in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(truth, predicted):
            counts[index[str(t)], index[str(p)]] += 1
        return cls(labels, counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    def row_totals(self) -> dict:
        return dict(zip(self.labels, self.counts.sum(axis=1).tolist()))

    def precision(self) -> dict:
        """Per class; NaN when the class was never predicted."""
        col = self.counts.sum(axis=0)
        diag = np.diag(self.counts)
        return {l: (float(d / c) if c else float("nan")) for l, d, c in zip(self.labels, diag, col)}

    def recall(self) -> dict:
        """Per class; NaN when the class never occurs in the truth."""
        row = self.counts.sum(axis=1)
        diag = np.diag(self.counts)
        return {l: (float(d / r) if r else float("nan")) for l, d, r in zip(self.labels, diag, row)}

    def collapse(self, mapping: dict, labels) -> "ConfusionMatrix":
        """Merge classes through ``mapping`` (label -> group label)."""
        labels = tuple(str(l) for l in labels)
        index = {l: i for i, l in enumerate(labels)}
        out = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for i, li in enumerate(self.labels):
            for j, lj in enumerate(self.labels):
                out[index[str(mapping[li])], index[str(mapping[lj])]] += self.counts[i, j]
        return ConfusionMatrix(labels, out)

    def to_bins(self) -> "ConfusionMatrix":
        """Type matrix collapsed to length bins."""
        mapping = {t.value: TYPE_BIN[t].value for t in TYPE_ORDER}
        return self.collapse(mapping, [b.value for b in BIN_ORDER])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["truth"] + list(self.labels))
        for label, row in zip(self.labels, self.counts.tolist()):
            writer.writerow([label] + row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        labels = rows[0][1:]
        return cls(tuple(labels), np.array([[int(v) for v in r[1:]] for r in rows[1:]]))

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class ErrorSplit:
    cross_bin: int
    within_bin: int

    @property
    def total(self) -> int:
        return self.cross_bin + self.within_bin


def error_decomposition(matrix: ConfusionMatrix) -> ErrorSplit:
    """Split type errors into wrong-length-bin and right-bin-wrong-type counts."""
    bins = [TYPE_BIN[VehicleType(l)] for l in matrix.labels]
    cross = within = 0
    for i, bi in enumerate(bins):
        for j, bj in enumerate(bins):
            if i == j:
                continue
            if bi == bj:
                within += int(matrix.counts[i, j])
            else:
                cross += int(matrix.counts[i, j])
    return ErrorSplit(cross, within)


def _nan_to_none(values: dict) -> dict:
    return {k: (None if v != v else v) for k, v in values.items()}


@dataclass(frozen=True, eq=False)
class Evaluation:
    matrix: ConfusionMatrix
    predictions: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.matrix.accuracy

    @property
    def precision(self) -> dict:
        return self.matrix.precision()

    @property
    def recall(self) -> dict:
        return self.matrix.recall()

    def to_dict(self) -> dict:
        split = error_decomposition(self.matrix)
        return {
            "confusion": self.matrix.to_dict(),
            "accuracy": self.accuracy,
            "precision": _nan_to_none(self.precision),
            "recall": _nan_to_none(self.recall),
            "errors": {"cross_bin": split.cross_bin, "within_bin": split.within_bin},
            "bin_confusion": self.matrix.to_bins().to_dict(),
        }

    def write(self, stem) -> tuple[Path, Path]:
        """``<stem>.csv`` with the type matrix and ``<stem>.json`` with the full report."""
        stem = Path(stem)
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        csv_path.write_text(self.matrix.to_csv())
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def evaluate(model: HierarchicalModel, rows: Sequence[FeatureVector], truth, bins=None) -> Evaluation:
    """Classify every row and tabulate against ``truth``.

    ``bins`` defaults to each feature vector's own estimated bin; passing the
    true bins instead isolates the classifiers from length errors.
    """
    if len(rows) == 0:
        raise InsufficientData("empty evaluation set")
    if bins is None:
        bins = [fv.bin for fv in rows]
    predicted = [classify(model, fv, b) for fv, b in zip(rows, bins)]
    matrix = ConfusionMatrix.from_pairs([VehicleType(t).value for t in truth],
                                        [p.value for p in predicted])
    return Evaluation(matrix, predicted)
