"""One-vs-rest linear SVM over user-level embeddings (real vs. generated users)."""
from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embedspace.similarity import GROUPS
from .errors import ClassTooSmall, EmptyTestSet, NonFinite

log = logging.getLogger(__name__)


class DidNotConverge(UserWarning):
    pass


def _class_order(labels) -> list[str]:
    present = set(labels)
    known = [g for g in GROUPS if g in present]
    return known + sorted(present - set(known))


def l2_normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms > 0, norms, 1.0)


@dataclass
class LinearSVM:
    classes: list[str]
    weights: np.ndarray  # (K, D)
    biases: np.ndarray  # (K,)
    normalize: bool = True
    epochs: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.normalize:
            X = l2_normalize(X)
        return X @ self.weights.T + self.biases

    def predict(self, X) -> list[str]:
        # np.argmax returns the first maximum, i.e. ties go to the earlier class
        return [self.classes[i] for i in np.argmax(self.decision_function(X), axis=1)]


def _dual_cd(X: np.ndarray, y: np.ndarray, C: float, max_epochs: int, tol: float, rng) -> tuple[np.ndarray, int, bool]:
    """Dual coordinate descent for the L2-regularized hinge loss (bias folded into X).

    Stops once the relative decrease of the dual objective over an epoch
    falls below ``tol``.
    """
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qii = (X * X).sum(axis=1)
    prev = 0.0
    for epoch in range(1, max_epochs + 1):
        for i in rng.permutation(n):
            if qii[i] == 0:
                continue
            g = y[i] * (w @ X[i]) - 1.0
            a = alpha[i]
            new = min(max(a - g / qii[i], 0.0), C)
            if new != a:
                w += (new - a) * y[i] * X[i]
                alpha[i] = new
        obj = 0.5 * float(w @ w) - float(alpha.sum())
        if prev - obj < tol * max(1.0, abs(obj)) and epoch > 1:
            return w, epoch, True
        prev = obj
    return w, max_epochs, False


def train_linear_svm(
    X,
    y: Sequence[str],
    regularization_C: float = 1.0,
    max_epochs: int = 1000,
    tol: float = 1e-4,
    seed: int = 0,
    normalize: bool = True,
) -> LinearSVM:
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise NonFinite("training matrix has non-finite values")
    if regularization_C <= 0:
        raise ValueError("regularization_C must be positive")
    if normalize:
        X = l2_normalize(X)
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    labels = np.asarray(y)
    classes = _class_order(labels)
    rng = np.random.default_rng(seed)
    W, B, epochs, conv = [], [], [], []
    for cls in classes:
        target = np.where(labels == cls, 1.0, -1.0)
        w, ep, ok = _dual_cd(Xb, target, regularization_C, max_epochs, tol, rng)
        if not ok:
            warnings.warn(f"class {cls}: no convergence in {max_epochs} epochs", DidNotConverge)
        W.append(w[:-1])
        B.append(w[-1])
        epochs.append(ep)
        conv.append(ok)
    return LinearSVM(classes, np.array(W), np.array(B), normalize, epochs, conv)


@dataclass
class Evaluation:
    classes: list[str]
    precision: dict[str, float | None]
    recall: dict[str, float | None]
    f1: dict[str, float | None]
    accuracy: float
    confusion: np.ndarray  # rows = true, cols = predicted, in ``classes`` order
    support: dict[str, int]


def evaluate(model: LinearSVM, X_test, y_test: Sequence[str], classes: Sequence[str] | None = None) -> Evaluation:
    """Precision/recall/F1 per class; metrics of classes absent from ``y_test`` are None."""
    if len(y_test) == 0:
        raise EmptyTestSet("empty test set")
    return score_predictions(list(y_test), model.predict(X_test), classes or model.classes)


def score_predictions(y_true: Sequence[str], y_pred: Sequence[str], classes: Sequence[str]) -> Evaluation:
    classes = list(classes)
    idx = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(y_true, y_pred):
        conf[idx[t], idx[p]] += 1
    prec, rec, f1, support = {}, {}, {}, {}
    for c, i in idx.items():
        tp = conf[i, i]
        n_true = int(conf[i].sum())
        n_pred = int(conf[:, i].sum())
        support[c] = n_true
        if n_true == 0:
            prec[c] = rec[c] = f1[c] = None
            continue
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true
        prec[c], rec[c] = p, r
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    acc = float(np.trace(conf)) / len(y_true)
    return Evaluation(classes, prec, rec, f1, acc, conf, support)


def run_seed(master: int, run: int) -> int:
    return int.from_bytes(hashlib.sha256(f"{master}:{run}".encode()).digest()[:8], "little")


def stratified_split(y: Sequence[str], split_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(y)
    train, test = [], []
    for cls in _class_order(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < 2:
            raise ClassTooSmall(f"class {cls} has {members.size} member(s); need at least 2")
        members = rng.permutation(members)
        n_test = min(max(1, round((1 - split_fraction) * members.size)), members.size - 1)
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return np.sort(train), np.sort(test)


@dataclass
class MetricSummary:
    mean: float | None
    std: float | None
    n: int


def _summ(values: list[float | None]) -> MetricSummary:
    vals = [v for v in values if v is not None]
    if not vals:
        return MetricSummary(None, None, 0)
    return MetricSummary(float(np.mean(vals)), float(np.std(vals)), len(vals))


@dataclass
class DetectorReport:
    classes: list[str]
    precision: dict[str, MetricSummary]
    recall: dict[str, MetricSummary]
    f1: dict[str, MetricSummary]
    accuracy: MetricSummary
    confusion: np.ndarray
    runs: int
    split_fraction: float
    hyperparameters: dict
    per_run_accuracy: list[float]

    def to_dict(self) -> dict:
        def m(s: MetricSummary) -> dict:
            return {"mean": s.mean, "std": s.std, "n_runs": s.n}

        return {
            "classes": self.classes,
            "per_class": {
                c: {"precision": m(self.precision[c]), "recall": m(self.recall[c]), "f1": m(self.f1[c])}
                for c in self.classes
            },
            "accuracy": m(self.accuracy),
            "per_run_accuracy": self.per_run_accuracy,
            "confusion": self.confusion.tolist(),
            "runs": self.runs,
            "split_fraction": self.split_fraction,
            "hyperparameters": self.hyperparameters,
        }


def run_experiment(
    X,
    y: Sequence[str],
    split_fraction: float = 0.8,
    runs: int = 10,
    seed: int = 0,
    regularization_C: float = 1.0,
    max_epochs: int = 1000,
    tol: float = 1e-4,
    normalize: bool = True,
) -> DetectorReport:
    """Repeated stratified holdout: train on ``split_fraction``, test on the rest, ``runs`` times.

    Standard deviations are population (ddof=0) over runs; confusion
    matrices are summed.
    """
    X = np.asarray(X, dtype=float)
    y = list(y)
    if len(y) != X.shape[0]:
        raise ValueError("X and y differ in length")
    classes = _class_order(y)
    yarr = np.asarray(y)
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    per = {"precision": {c: [] for c in classes}, "recall": {c: [] for c in classes}, "f1": {c: [] for c in classes}}
    accs = []
    for r in range(runs):
        rng = np.random.default_rng(run_seed(seed, r))
        tr, te = stratified_split(y, split_fraction, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DidNotConverge)
            model = train_linear_svm(X[tr], yarr[tr], regularization_C, max_epochs, tol,
                                     seed=run_seed(seed, r) % 2**32, normalize=normalize)
        ev = evaluate(model, X[te], yarr[te], classes)
        conf += ev.confusion
        accs.append(ev.accuracy)
        for name in per:
            for c in classes:
                per[name][c].append(getattr(ev, name)[c])
    return DetectorReport(
        classes=classes,
        precision={c: _summ(per["precision"][c]) for c in classes},
        recall={c: _summ(per["recall"][c]) for c in classes},
        f1={c: _summ(per["f1"][c]) for c in classes},
        accuracy=_summ(accs),
        confusion=conf,
        runs=runs,
        split_fraction=split_fraction,
        hyperparameters={"regularization_C": regularization_C, "max_epochs": max_epochs, "tol": tol,
                         "normalize": normalize, "seed": seed, "multiclass": "one-vs-rest"},
        per_run_accuracy=accs,
    )
