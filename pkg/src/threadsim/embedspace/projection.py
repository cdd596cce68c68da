from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..errors import PerplexityTooLarge

log = logging.getLogger(__name__)


class RankDeficient(UserWarning):
    pass


def pca_reduce(X, k: int, return_components: bool = False):
    """Project centered rows onto the top-``k`` principal directions.

    Each direction is signed so its largest-magnitude coordinate is positive.
    If the data has rank below ``k``, ``k`` is reduced with a
    :class:`RankDeficient` warning.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside [1, min(N-1, D)={min(n - 1, d)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = s[0] * max(n, d) * np.finfo(float).eps if s.size and s[0] > 0 else 0.0
    rank = int((s > tol).sum())
    if k > rank:
        warnings.warn(f"requested k={k} but data rank is {rank}; using k={max(rank, 1)}", RankDeficient)
        k = max(rank, 1)
    comps = vt[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    scores = Xc @ comps.T
    if return_components:
        return scores, comps, mean
    return scores


@dataclass(frozen=True)
class TSNEParams:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    checkpoint_every: int = 50
    seed: int = 0
    pca_dims: int = 50


@dataclass
class Projection2D:
    points: list[tuple[float, float, str, str]]
    params: dict
    kl_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def coords(self) -> np.ndarray:
        return np.array([(x, y) for x, y, _, _ in self.points])


def _sq_dists(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _conditional_p(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200) -> np.ndarray:
    """Row-wise Gaussian affinities with bandwidth found by bisection on entropy (nats)."""
    n = D.shape[0]
    target = math.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        beta, lo, hi = 1.0, 0.0, math.inf
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            sw = w.sum()
            p = w / sw
            H = math.log(sw) + beta * float((d * p).sum())
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2 if hi == math.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = (beta + lo) / 2
        P[i, np.arange(n) != i] = p
    return P


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def tsne(X, params: TSNEParams | None = None, **overrides) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Exact t-SNE to 2-D. Returns ``(Y, kl_trace)``.

    Rows are processed in a canonical (lexicographic) order and mapped back,
    so permuting distinct input rows permutes the output the same way.
    """
    params = params or TSNEParams()
    if overrides:
        params = TSNEParams(**{**asdict(params), **overrides})
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 3 * params.perplexity:
        raise PerplexityTooLarge(f"N={n} < 3 * perplexity ({params.perplexity})")
    order = np.lexsort(X.T[::-1])
    Xs = X[order]

    P = _conditional_p(_sq_dists(Xs), params.perplexity)
    P = P + P.T
    P = np.maximum(P / P.sum(), 1e-12)

    rng = np.random.default_rng(params.seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace: list[tuple[int, float]] = []

    def affinities(Y):
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        return num, np.maximum(num / num.sum(), 1e-12)

    num, Q = affinities(Y)
    kl = _kl(P, Q)
    scale = 1.0
    for it in range(params.iterations):
        exaggerating = it < params.exaggeration_iters
        P_eff = P * params.early_exaggeration if exaggerating else P
        momentum = params.momentum_initial if exaggerating else params.momentum_final

        W = (P_eff - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)

        same = (grad > 0) == (update > 0)
        new_gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        new_update = momentum * update - params.learning_rate * scale * new_gains * grad
        cand = Y + new_update
        cand -= cand.mean(axis=0)
        c_num, c_Q = affinities(cand)
        c_kl = _kl(P, c_Q)
        if not exaggerating:
            # After exaggeration, reject any step that raises the KL divergence:
            # drop momentum and gains and retry with a halved step.
            tries = 0
            while c_kl > kl and tries < 30:
                tries += 1
                scale *= 0.5
                new_gains = np.ones_like(Y)
                new_update = -params.learning_rate * scale * grad
                cand = Y + new_update
                cand -= cand.mean(axis=0)
                c_num, c_Q = affinities(cand)
                c_kl = _kl(P, c_Q)
            if c_kl > kl:
                cand, c_num, c_Q, c_kl = Y, num, Q, kl
                new_update = np.zeros_like(Y)
            elif not tries:
                scale = min(1.0, scale * 1.05)
        Y, num, Q, kl = cand, c_num, c_Q, c_kl
        gains, update = new_gains, new_update

        step = it + 1
        if step % params.checkpoint_every == 0 or step == params.iterations:
            trace.append((step, kl))

    out = np.empty_like(Y)
    out[order] = Y
    return out, trace


def project(
    X,
    groups: Sequence[str],
    authors: Sequence[str],
    params: TSNEParams | None = None,
) -> Projection2D:
    """PCA to ``pca_dims`` when wider, then t-SNE; perplexity is capped at (N-1)/3."""
    params = params or TSNEParams()
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < 4:
        raise PerplexityTooLarge(f"need at least 4 points to project, got {n}")
    cap = (n - 1) / 3
    if params.perplexity > cap:
        log.info("perplexity %.1f capped to %.2f for N=%d", params.perplexity, cap, n)
        params = TSNEParams(**{**asdict(params), "perplexity": cap})
    if d > params.pca_dims:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficient)
            X = pca_reduce(X, min(params.pca_dims, n - 1))
    Y, trace = tsne(X, params)
    pts = [(float(x), float(y), g, a) for (x, y), g, a in zip(Y, groups, authors)]
    return Projection2D(pts, asdict(params), trace)
