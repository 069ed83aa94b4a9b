"""Self-supervised losses: view reconstruction, multi-view NT-Xent, and IIC-style MI."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DegenerateInputError, DimensionError
from .tensor import Tensor

NORM_FLOOR = 1e-12
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    w_sv: float = 1.0
    w_mv: float = 1.0
    w_cm: float = 1.0

    def __post_init__(self):
        for name in ("w_sv", "w_mv", "w_cm"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ContractViolation(f"loss weight {name}={value} must be finite and non-negative")


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.1

    def __post_init__(self):
        if not 0 < self.tau <= 10:
            raise ContractViolation(f"temperature {self.tau} outside (0, 10]")


@dataclass(frozen=True)
class MiConfig:
    lam: float = 10.0
    dim: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ContractViolation(f"entropy weight {self.lam} must be finite and non-negative")


def reconstruction_loss(x: Sequence, x_hat: Sequence) -> Tensor:
    """Mean over instances and views of the squared reconstruction error."""
    if len(x) != len(x_hat) or not x:
        raise DimensionError(f"{len(x)} views but {len(x_hat)} reconstructions")
    n = T.as_tensor(x[0]).shape[0]
    total = None
    for xv, xh in zip(x, x_hat):
        xv, xh = T.as_tensor(xv), T.as_tensor(xh)
        if xv.shape != xh.shape or xv.shape[0] != n:
            raise DimensionError(f"reconstruction shape {xh.shape} does not match view shape {xv.shape}")
        term = T.square(xv - xh).sum()
        total = term if total is None else total + term
    return total / float(n * len(x))


def _check_rows(z: Tensor, what: str) -> None:
    norms = np.sqrt((z.data**2).sum(axis=1))
    if np.any(norms == 0):
        raise DegenerateInputError(f"{what} has a zero-norm row at index {int(np.argmax(norms == 0))}")


def l2_normalize(z: Tensor) -> Tensor:
    norms = T.sqrt(T.clamp_min(T.square(z).sum(axis=1, keepdims=True), NORM_FLOOR**2))
    return z / norms


def pairwise_cosine_logits(z_u, z_v, tau: float) -> Tensor:
    """``(i, j) -> cos(z_u[i], z_v[j]) / tau``."""
    z_u, z_v = T.as_tensor(z_u), T.as_tensor(z_v)
    if z_u.ndim != 2 or z_u.shape != z_v.shape:
        raise DimensionError(f"cosine logits need equal n x d inputs, got {z_u.shape} and {z_v.shape}")
    if z_u.shape[0] < 2:
        raise ContractViolation("cosine logits need at least two rows")
    ContrastiveConfig(tau)
    _check_rows(z_u, "z_u")
    _check_rows(z_v, "z_v")
    return T.matmul(l2_normalize(z_u), l2_normalize(z_v).T) / tau


def contrastive_loss(z: Sequence, tau: float = 0.1) -> Tensor:
    """Multi-view NT-Xent without cluster-level negative sampling.

    For each ordered view pair ``u != v`` and instance ``i`` the positive is
    ``s_ii^(uv)`` and the negatives are ``s_ij^(uv)``, ``s_ij^(uu)`` and
    ``s_ij^(vv)`` for ``j != i`` (``3(n-1)`` terms). The result is the mean
    of ``-log(exp(pos) / sum(exp(neg)))`` over all ``n V (V-1)`` anchors.
    """
    views = [T.as_tensor(v) for v in z]
    n_views = len(views)
    if n_views < 2:
        raise ContractViolation("contrastive loss needs at least two views")
    n, d = views[0].shape
    if n < 2:
        raise ContractViolation("contrastive loss needs at least two instances")
    for v in views:
        if v.shape != (n, d):
            raise DimensionError(f"view representation shapes differ: {[t.shape for t in views]}")
        _check_rows(v, "representation")
    ContrastiveConfig(tau)

    # all views at once: block (u, v) of the Gram matrix is s^(uv)
    zn = l2_normalize(T.concatenate(views, axis=0))
    logits = T.matmul(zn, zn.T) / tau
    blocks = logits.reshape(n_views, n, n_views, n)  # [u, i, v, j]
    eye = np.eye(n)
    off_diag = (1.0 - eye)[None, :, None, :]
    # shift by the largest attainable logit; exact for the log-ratio
    top = 1.0 / tau
    row_sums = (T.exp(blocks - top) * off_diag).sum(axis=3)  # [u, i, v]
    within = (row_sums * np.eye(n_views)[:, None, :]).sum(axis=2)  # [u, i] = R^(uu)
    denom = row_sums + within[:, :, None] + T.transpose(within, (1, 0))[None, :, :]
    positives = (blocks * eye[None, :, None, :]).sum(axis=3)  # [u, i, v]
    terms = T.log(denom) + top - positives
    pair_mask = (1.0 - np.eye(n_views))[:, None, :]
    return (terms * pair_mask).sum() / float(n * n_views * (n_views - 1))


def _check_simplex(z: Tensor, what: str) -> None:
    if z.ndim != 2:
        raise DimensionError(f"{what} must be 2-d, got shape {z.shape}")
    if np.any(z.data < -SIMPLEX_TOL) or np.any(np.abs(z.data.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ContractViolation(f"{what} rows must be non-negative and sum to one")


def joint_distribution(z_u, z_v) -> Tensor:
    """Symmetrized empirical joint ``P = (P~ + P~^T)/2``, ``P~ = z_u^T z_v / n``."""
    z_u, z_v = T.as_tensor(z_u), T.as_tensor(z_v)
    if z_u.shape != z_v.shape:
        raise DimensionError(f"joint distribution needs equal shapes, got {z_u.shape} and {z_v.shape}")
    _check_simplex(z_u, "z_u")
    _check_simplex(z_v, "z_v")
    p_tilde = T.matmul(z_u.T, z_v) / float(z_u.shape[0])
    return (p_tilde + p_tilde.T) * 0.5


def mi_entropy_loss(P, lam: float = 1.0) -> Tensor:
    """``-sum_ab P_ab log(P_ab / (P_a P_b)**lam)`` = ``-(I + (lam-1)(H_u + H_v))``.

    Zero joint entries contribute nothing (``0 log 0 = 0``).
    """
    P = T.as_tensor(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"joint distribution must be square, got shape {P.shape}")
    if np.any(P.data < -SIMPLEX_TOL) or abs(P.data.sum() - 1.0) > SIMPLEX_TOL:
        raise ContractViolation("joint distribution must be non-negative and sum to one")
    MiConfig(lam)
    p_a = P.sum(axis=1, keepdims=True)
    p_b = P.sum(axis=0, keepdims=True)
    log_ratio = T.log(P) - lam * T.log(p_a) - lam * T.log(p_b)
    return -(P * log_ratio).sum()


def mi_loss_all_pairs(z: Sequence, lam: float = 1.0) -> Tensor:
    """Average of :func:`mi_entropy_loss` over unordered view pairs."""
    views = [T.as_tensor(v) for v in z]
    if len(views) < 2:
        raise ContractViolation("MI loss needs at least two views")
    pairs = list(combinations(range(len(views)), 2))
    total = None
    for u, v in pairs:
        term = mi_entropy_loss(joint_distribution(views[u], views[v]), lam)
        total = term if total is None else total + term
    return total / float(len(pairs))


def total_loss(weights: LossWeights, l_sv=None, l_mv=None, l_cm=None) -> Tensor:
    """Weighted sum of the SV-SSL, MV-SSL and CM losses; ``None`` terms are absent."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    total = T.Tensor(0.0)
    for w, term in ((weights.w_sv, l_sv), (weights.w_mv, l_mv), (weights.w_cm, l_cm)):
        if term is None:
            continue
        term = T.as_tensor(term)
        if not np.all(np.isfinite(term.data)):
            raise ContractViolation("loss component is not finite")
        total = total + w * term
    return total
