"""Clustering modules: the DDC head and its loss, k-means, and hardening."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DegenerateInputError, DimensionError
from .networks import glorot_bound
from .tensor import Tensor

log = logging.getLogger(__name__)

DDC_HIDDEN = 100
BANDWIDTH_FRACTION = 0.15
RATIO_FLOOR = 1e-9


@dataclass
class DdcParams:
    w_hidden: Tensor
    b_hidden: Tensor
    w_out: Tensor
    b_out: Tensor

    @classmethod
    def init(cls, in_dim: int, k: int, seed, hidden_dim: int = DDC_HIDDEN) -> "DdcParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        b1 = glorot_bound(in_dim, hidden_dim)
        b2 = glorot_bound(hidden_dim, k)
        return cls(
            Tensor(rng.uniform(-b1, b1, (in_dim, hidden_dim)), requires_grad=True),
            Tensor(np.zeros(hidden_dim), requires_grad=True),
            Tensor(rng.uniform(-b2, b2, (hidden_dim, k)), requires_grad=True),
            Tensor(np.zeros(k), requires_grad=True),
        )

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def k(self) -> int:
        return self.w_out.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w_hidden, self.b_hidden, self.w_out, self.b_out]


def ddc_forward(params: DdcParams, z_fused) -> tuple[Tensor, Tensor]:
    z = T.as_tensor(z_fused)
    if z.ndim != 2 or z.shape[1] != params.w_hidden.shape[0]:
        raise DimensionError(f"DDC expects width {params.w_hidden.shape[0]}, got shape {z.shape}")
    hidden = T.relu(T.matmul(z, params.w_hidden) + params.b_hidden)
    alpha = T.softmax(T.matmul(hidden, params.w_out) + params.b_out, axis=1)
    return hidden, alpha


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def kernel_bandwidth(hidden) -> float:
    """15% of the median pairwise (i < j) Euclidean distance; a constant, not differentiated.

    For an even number of pairs the lower median is used.
    """
    h = T.as_tensor(hidden).data
    n = h.shape[0]
    if n < 2:
        raise ContractViolation("kernel bandwidth needs at least two points")
    dist = np.sort(_pairwise_distances(h)[np.triu_indices(n, k=1)])
    sigma = BANDWIDTH_FRACTION * float(dist[(dist.size - 1) // 2])
    if sigma <= 0:
        raise DegenerateInputError("all hidden representations coincide; kernel bandwidth is zero")
    return sigma


def squared_distances(h: Tensor) -> Tensor:
    sq = T.square(h).sum(axis=1, keepdims=True)
    d2 = sq + sq.T - 2.0 * T.matmul(h, h.T)
    return T.clamp_min(d2, 0.0)


def gaussian_kernel(hidden, sigma: float) -> Tensor:
    if not sigma > 0:
        raise ContractViolation(f"kernel bandwidth must be positive, got {sigma}")
    h = T.as_tensor(hidden)
    return T.exp(squared_distances(h) * (-1.0 / (2.0 * sigma * sigma)))


class DdcLoss(NamedTuple):
    l1: Tensor
    l2: Tensor
    l3: Tensor
    clamped: bool  # True when a Cauchy-Schwarz denominator hit the floor

    @property
    def total(self) -> Tensor:
        return self.l1 + self.l2 + self.l3


def _cs_mean(a: Tensor, kernel: Tensor) -> tuple[Tensor, bool]:
    k = a.shape[1]
    nom = T.matmul(T.matmul(a.T, kernel), a)  # k x k
    diag = (nom * np.eye(k)).sum(axis=1, keepdims=True)
    prod = diag * diag.T
    clamped = bool(np.any(np.triu(prod.data, 1)[np.triu_indices(k, 1)] < RATIO_FLOOR**2))
    denom = T.sqrt(T.clamp_min(prod, RATIO_FLOOR**2))
    upper = np.triu(np.ones((k, k)), 1)
    n_pairs = k * (k - 1) / 2
    return (nom / denom * upper).sum() / n_pairs, clamped


def ddc_loss(alpha, hidden, sigma: float | None = None) -> DdcLoss:
    """The three DDC terms.

    ``l1`` is the mean pairwise Cauchy-Schwarz similarity of soft clusters in
    the kernelized hidden space, ``l2`` the mean pairwise inner product of
    membership vectors, ``l3`` the ``l1`` form applied to
    ``m_ia = exp(-||alpha_i - e_a||^2)``. ``sigma`` defaults to
    :func:`kernel_bandwidth` of ``hidden``.
    """
    alpha, hidden = T.as_tensor(alpha), T.as_tensor(hidden)
    n, k = alpha.shape
    if k < 2 or n < 2:
        raise ContractViolation(f"DDC loss needs n >= 2 and k >= 2, got n={n}, k={k}")
    if hidden.shape[0] != n:
        raise DimensionError(f"alpha has {n} rows but hidden has {hidden.shape[0]}")
    if sigma is None:
        sigma = kernel_bandwidth(hidden)
    kernel = gaussian_kernel(hidden, sigma)

    l1, c1 = _cs_mean(alpha, kernel)

    col_sum = alpha.sum(axis=0)
    l2 = (T.square(col_sum).sum() - T.square(alpha).sum()) / float(n * (n - 1))

    row_sq = T.square(alpha).sum(axis=1, keepdims=True)
    m = T.exp(-(row_sq - 2.0 * alpha + 1.0))
    l3, c3 = _cs_mean(m, kernel)
    if c1 or c3:
        log.debug("DDC denominator clamped (empty soft cluster)")
    return DdcLoss(l1, l2, l3, c1 or c3)


def harden(alpha) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    a = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha)
    return np.argmax(a, axis=1).astype(np.int64)


@dataclass
class ClusterAssignment:
    alpha: np.ndarray
    hard_labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.hard_labels is None:
            self.hard_labels = harden(self.alpha)


@dataclass
class KMeansResult:
    assignment: ClusterAssignment
    centroids: np.ndarray
    inertia: float
    inertia_history: list[float]
    n_iter: int

    @property
    def labels(self) -> np.ndarray:
        return self.assignment.hard_labels


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * x @ c.T
    return np.maximum(d2, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    return float(((x - centroids[labels]) ** 2).sum())


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iters: int):
    k = centroids.shape[0]
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        new_c = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_c[c] = x[members].mean(axis=0)
        centroids = new_c
        new_labels = np.argmin(_sq_dists(x, centroids), axis=1)
        history.append(_inertia(x, centroids, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, centroids, _inertia(x, centroids, labels), history, n_iter


def kmeans(x, k: int, seed: int = 0, max_iters: int = 300, n_init: int = 1) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations until the assignment is fixed.

    With ``n_init > 1`` the lowest-inertia restart is kept (earliest on ties).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n < k:
        raise ContractViolation(f"k-means needs 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        init = kmeans_pp_init(x, k, rng)
        result = _lloyd(x, init, max_iters)
        if best is None or result[2] < best[2]:
            best = result
    labels, centroids, inertia, history, n_iter = best
    alpha = np.zeros((n, k))
    alpha[np.arange(n), labels] = 1.0
    return KMeansResult(ClusterAssignment(alpha, labels.astype(np.int64)), centroids, inertia, history, n_iter)
