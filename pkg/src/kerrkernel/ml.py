"""Synthetic datasets, a precomputed-kernel SVM and hyperparameter tuning."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .dynamics import PropagatorConfig
from .iohelpers import atomic_write, read_csv, write_json
from .kernel import (
    EncodingConfig,
    KernelMatrix,
    RhoCache,
    Sample,
    fill_cache,
    gram_from_cache,
    kernel_entry,
)
from .model import DeviceParams

log = logging.getLogger(__name__)

DEFAULT_REFERENCES = ((0.1, 0.04285), (0.7, 0.64285))


def make_mesh(resolution: int) -> list[Sample]:
    """Inclusive ``resolution x resolution`` grid on the unit square, row-major in x1."""
    if resolution < 2:
        raise ValueError("mesh resolution must be >= 2")
    axis = np.linspace(0.0, 1.0, resolution)
    return [
        Sample(i * resolution + j, (float(axis[i]), float(axis[j])))
        for i in range(resolution)
        for j in range(resolution)
    ]


@dataclass
class LabeledDataset:
    points: list[Sample]
    labels: np.ndarray
    mesh_resolution: int
    references: list[tuple[Sample, int]]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.labels) != len(self.points):
            raise ValueError("one label per point required")

    @property
    def features(self) -> np.ndarray:
        return np.array([p.features for p in self.points])

    def eval_points(self) -> tuple[list[Sample], np.ndarray]:
        """Mesh plus reference points with their labels (the accuracy set)."""
        pts = self.points + [s for s, _ in self.references]
        labels = np.concatenate([self.labels, [lab for _, lab in self.references]])
        return pts, labels.astype(int)

    def to_csv(self, path) -> None:
        with atomic_write(path) as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x1", "x2", "label"])
            for p, lab in zip(self.points, self.labels):
                w.writerow([p.id, repr(p.features[0]), repr(p.features[1]), int(lab)])

    def label_map(self) -> dict:
        return {
            "labels": {"1": "class of reference 1", "2": "class of reference 2"},
            "mesh_resolution": self.mesh_resolution,
            "seed": self.seed,
            "references": [
                {"id": s.id, "features": list(s.features), "label": lab}
                for s, lab in self.references
            ],
            "counts": {str(k): int(np.sum(self.labels == k)) for k in (1, 2)},
            **({"meta": self.meta} if self.meta else {}),
        }

    def save(self, csv_path, json_path) -> None:
        self.to_csv(csv_path)
        write_json(json_path, self.label_map())

    @classmethod
    def load(cls, csv_path, json_path) -> "LabeledDataset":
        rows = read_csv(csv_path)
        with open(json_path) as fh:
            info = json.load(fh)
        points = [Sample(int(r["id"]), (float(r["x1"]), float(r["x2"]))) for r in rows]
        labels = [int(r["label"]) for r in rows]
        refs = [(Sample(r["id"], tuple(r["features"])), int(r["label"])) for r in info["references"]]
        return cls(points, np.array(labels), info["mesh_resolution"], refs, info.get("seed"),
                   info.get("meta", {}))


def pick_references(mesh: Sequence[Sample], seed: int) -> tuple[Sample, Sample]:
    """Two distinct random mesh points, used when no references are given."""
    rng = np.random.default_rng(seed)
    i, j = rng.choice(len(mesh), size=2, replace=False)
    return (Sample("ref1", mesh[i].features), Sample("ref2", mesh[j].features))


def generate_labels(
    mesh: Sequence[Sample],
    ref1: Sample,
    ref2: Sample,
    enc: EncodingConfig,
    device: DeviceParams,
    config: PropagatorConfig = PropagatorConfig(),
    cache: RhoCache | None = None,
    workers: int = 1,
    seed: int | None = None,
) -> LabeledDataset:
    """Label each point 1 if it is strictly closer (in kernel value) to ref1, else 2.

    Exact ties go to label 2.
    """
    if ref1.id == ref2.id:
        raise ValueError("references need distinct ids")
    cache = fill_cache(list(mesh) + [ref1, ref2], enc, device, config, cache, workers)
    r1, r2 = cache[ref1.id], cache[ref2.id]
    labels = np.array(
        [1 if kernel_entry(cache[p.id], r1) > kernel_entry(cache[p.id], r2) else 2 for p in mesh]
    )
    res = int(round(np.sqrt(len(mesh))))
    return LabeledDataset(list(mesh), labels, res, [(ref1, 1), (ref2, 2)], seed)


def sample_training(n_points: int, size: int, seed: int) -> np.ndarray:
    """``size`` distinct indices drawn uniformly from ``range(n_points)``."""
    if size > n_points:
        raise ValueError(f"training size {size} exceeds dataset size {n_points}")
    if size < 1:
        raise ValueError("training size must be positive")
    return np.random.default_rng(seed).choice(n_points, size=size, replace=False)


def rbf_kernel(x, y, gamma: float) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(xa: np.ndarray, xb: np.ndarray, gamma: float) -> np.ndarray:
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    sq = (xa**2).sum(1)[:, None] + (xb**2).sum(1)[None, :] - 2.0 * xa @ xb.T
    return np.exp(-gamma * np.clip(sq, 0.0, None))


# ---------------------------------------------------------------------------
# SVM


@dataclass
class SvmModel:
    """Binary soft-margin SVM in dual form over a precomputed kernel.

    ``dual_coef`` holds alpha_i (not multiplied by y_i); ``y`` are +-1.
    Label 1 maps to +1 and label 2 to -1.
    """

    dual_coef: np.ndarray
    y: np.ndarray
    bias: float
    C: float
    train_ids: list
    iterations: int = 0
    label_map: dict = field(default_factory=lambda: {1: 1, 2: -1})

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.dual_coef > 0)

    @property
    def support_ids(self) -> list:
        return [self.train_ids[i] for i in self.support]

    def decision_function(self, kernel_rows: np.ndarray) -> np.ndarray:
        """``kernel_rows[k, i] = K(x_k, x_train_i)``."""
        return np.asarray(kernel_rows) @ (self.dual_coef * self.y) + self.bias

    def predict(self, kernel_rows: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(np.atleast_2d(kernel_rows)) > 0, 1, 2)

    def to_json(self, path) -> None:
        write_json(path, {
            "alpha": [float(a) for a in self.dual_coef],
            "y": [int(v) for v in self.y],
            "b": float(self.bias),
            "C": float(self.C),
            "train_ids": list(self.train_ids),
            "support_ids": self.support_ids,
            "iterations": int(self.iterations),
        })


def labels_to_signs(labels) -> np.ndarray:
    labels = np.asarray(labels)
    bad = set(np.unique(labels)) - {1, 2}
    if bad:
        raise ValueError(f"labels must be 1 or 2, got {sorted(bad)}")
    return np.where(labels == 1, 1.0, -1.0)


@njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    # Second-order working-set selection (Fan, Chen & Lin 2005), LIBSVM style.
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij
    tau = 1e-12
    it = 0
    while it < max_iter:
        g_max = -np.inf
        g_min = np.inf
        i = -1
        for t in range(n):
            v = -y[t] * grad[t]
            up = (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0)
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
            if up and v > g_max:
                g_max = v
                i = t
            if low and v < g_min:
                g_min = v
        if i < 0 or g_max - g_min < tol:
            break
        j = -1
        best = np.inf
        for t in range(n):
            low = (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C)
            if not low:
                continue
            b = g_max + y[t] * grad[t]
            if b > 0:
                a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                if a <= 0:
                    a = tau
                obj = -(b * b) / a
                if obj < best:
                    best = obj
                    j = t
        if j < 0:
            break
        ai_old = alpha[i]
        aj_old = alpha[j]
        a = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if a <= 0:
            a = tau
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / a
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (grad[i] - grad[j]) / a
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            grad[t] += y[t] * (y[i] * K[t, i] * dai + y[j] * K[t, j] * daj)
        it += 1
    # bias: average over free vectors, else midpoint of the feasible interval
    n_free = 0
    s = 0.0
    ub = np.inf
    lb = -np.inf
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s += yg
    rho = s / n_free if n_free > 0 else 0.5 * (ub + lb)
    return alpha, -rho, it


def svm_train(gram, labels, C: float, tol: float = 1e-3, max_iter: int = 1_000_000,
              train_ids: Sequence | None = None) -> SvmModel:
    """Dual C-SVM on a precomputed (possibly indefinite) Gram matrix via SMO."""
    values = gram.values if isinstance(gram, KernelMatrix) else np.asarray(gram, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"Gram matrix must be square, got {values.shape}")
    y = labels_to_signs(labels)
    if len(y) != values.shape[0]:
        raise ValueError("one label per Gram row required")
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("training labels contain a single class")
    if C <= 0:
        raise ValueError("C must be positive")
    alpha, bias, it = _smo(np.ascontiguousarray(values, dtype=float), y, float(C), tol, max_iter)
    if it >= max_iter:
        log.warning("SMO hit max_iter=%d at C=%g before reaching tolerance", max_iter, C)
    ids = list(train_ids) if train_ids is not None else (
        list(gram.row_ids) if isinstance(gram, KernelMatrix) else list(range(len(y))))
    return SvmModel(alpha, y, float(bias), float(C), ids, int(it))


def svm_predict(model: SvmModel, kernel_row) -> int:
    """Label for one point; a decision value of exactly zero maps to label 2."""
    return int(model.predict(np.asarray(kernel_row, dtype=float)[None, :])[0])


def accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# tuning


@dataclass(frozen=True)
class GridSpec:
    c_values: tuple[float, ...] = tuple(np.logspace(-2, 1, 50))
    gammas: tuple[float, ...] = tuple(np.linspace(1, 1000, 50))
    extended_c: tuple[float, ...] = ()

    def __post_init__(self):
        for name in ("c_values", "gammas", "extended_c"):
            vals = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, vals)
            if vals and any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if not self.c_values or not self.gammas:
            raise ValueError("C and gamma grids must be nonempty")

    @staticmethod
    def default_extended_c() -> tuple[float, ...]:
        return tuple(np.linspace(1, 3e6, 500))

    def all_c(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.c_values) | set(self.extended_c)))


@dataclass
class TuneResult:
    C: float
    gamma: float | None
    accuracy: float
    scores: np.ndarray  # shape (len(gammas), len(c_values))


def tune(
    grams_for: Callable[[float | None], tuple[np.ndarray, np.ndarray]],
    train_labels,
    eval_labels,
    c_values: Sequence[float],
    gammas: Sequence[float | None] = (None,),
) -> TuneResult:
    """Grid search scored by accuracy on the evaluation set.

    ``grams_for(gamma)`` returns ``(train_gram, eval_rows)``.  Ties prefer the
    smaller C, then the smaller gamma.
    """
    if not len(c_values) or not len(gammas):
        raise ValueError("grids must be nonempty")
    c_values = sorted(c_values)
    gammas = list(gammas) if gammas[0] is None else sorted(gammas)
    eval_labels = np.asarray(eval_labels)
    scores = np.zeros((len(gammas), len(c_values)))
    for gi, g in enumerate(gammas):
        train_gram, eval_rows = grams_for(g)
        for ci, C in enumerate(c_values):
            model = svm_train(train_gram, train_labels, C)
            scores[gi, ci] = accuracy(model.predict(eval_rows), eval_labels)
    best = None
    for ci, C in enumerate(c_values):
        for gi, g in enumerate(gammas):
            if best is None or scores[gi, ci] > scores[best[0], best[1]]:
                best = (gi, ci)
    gi, ci = best
    return TuneResult(c_values[ci], gammas[gi], float(scores[gi, ci]), scores)


def quantum_grams(source: RhoCache | KernelMatrix, train_ids, eval_ids):
    """(train x train, eval x train) quantum Gram matrices.

    ``source`` is either a state cache (entries are computed) or a
    precomputed square :class:`KernelMatrix` covering all ids (entries are
    looked up).
    """
    if isinstance(source, KernelMatrix):
        pos = {key: i for i, key in enumerate(source.row_ids)}
        missing = [k for k in list(train_ids) + list(eval_ids) if k not in pos]
        if missing or not source.is_square:
            raise KeyError(f"precomputed Gram lacks ids {missing[:5]}")
        tr = [pos[k] for k in train_ids]
        ev = [pos[k] for k in eval_ids]
        return source.values[np.ix_(tr, tr)], source.values[np.ix_(ev, tr)]
    return gram_from_cache(source, train_ids, train_ids), gram_from_cache(source, eval_ids, train_ids)


@dataclass
class TrialResult:
    size: int
    seed: int
    quantum: TuneResult
    rbf: TuneResult


def run_trial(
    dataset: LabeledDataset,
    cache: RhoCache | KernelMatrix,
    size: int,
    seed: int,
    grid: GridSpec,
    quantum_c: Sequence[float] | None = None,
) -> TrialResult:
    """Tune quantum and RBF SVMs on one random training subset, score on the mesh."""
    eval_pts, eval_labels = dataset.eval_points()
    idx = sample_training(len(dataset.points), size, seed)
    train = [dataset.points[i] for i in idx]
    train_labels = dataset.labels[idx]
    train_ids = [p.id for p in train]
    eval_ids = [p.id for p in eval_pts]
    if len(set(train_labels)) < 2:
        raise ValueError(f"training subset (size {size}, seed {seed}) has a single class")

    q_train, q_eval = quantum_grams(cache, train_ids, eval_ids)
    q = tune(lambda _g: (q_train, q_eval), train_labels, eval_labels,
             quantum_c if quantum_c is not None else grid.c_values)

    x_train = np.array([p.features for p in train])
    x_eval = np.array([p.features for p in eval_pts])
    r = tune(lambda g: (rbf_gram(x_train, x_train, g), rbf_gram(x_eval, x_train, g)),
             train_labels, eval_labels, grid.c_values, grid.gammas)
    return TrialResult(size, seed, q, r)
