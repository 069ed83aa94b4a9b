"""How the number of separable clusters behaves under perfect alignment and more views.

``k_v`` is the number of separable clusters visible in view ``v`` and
``M_V = min(k_1, ..., k_V)``. Under perfect alignment the fused space has
``min(k, M_V ** V)`` clusters; ``M_V`` is pathwise non-increasing in ``V`` and
its expectation for iid ``k_v`` is ``sum_{x>=0} (1 - F(x)) ** V``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractViolation

PMF_TOL = 1e-9
CHUNK = 65536


@dataclass(frozen=True)
class ViewClusterabilityModel:
    """``pmf[c - 1] = P(k_v = c)`` for ``c = 1..k``."""

    pmf: tuple[float, ...]
    V: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pmf", tuple(float(p) for p in self.pmf))
        check_pmf(self.pmf)
        if self.V < 1:
            raise ContractViolation("V must be >= 1")

    @property
    def k(self) -> int:
        return len(self.pmf)


@dataclass(frozen=True)
class MinStatistic:
    V: int
    exact: float
    empirical_mean: float
    std_error: float
    trials: int
    nesting_violations: int = 0


def check_pmf(pmf) -> np.ndarray:
    p = np.asarray(pmf, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractViolation("pmf must be a non-empty vector over {1..k}")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > PMF_TOL:
        raise ContractViolation(f"pmf must be non-negative and sum to one, got sum {p.sum()}")
    return p


def kappa_aligned(k: int, k_vs) -> int:
    """Separable fused clusters under perfect alignment: ``min(k, min(k_v) ** V)``."""
    k_vs = [int(c) for c in k_vs]
    if not k_vs:
        raise ContractViolation("need at least one view")
    if any(not 1 <= c <= k for c in k_vs):
        raise ContractViolation(f"each k_v must lie in [1, {k}], got {k_vs}")
    return min(k, min(k_vs) ** len(k_vs))


def exact_expected_min(pmf, V: int) -> float:
    """``E[min of V iid draws]`` via the survival-function sum over ``x = 0..k-1``."""
    if V < 1:
        raise ContractViolation("V must be >= 1")
    return float((_survival(check_pmf(pmf)) ** V).sum())


def _survival(p: np.ndarray) -> np.ndarray:
    # 1 - F(x) for x = 0..k-1; F(0) = 0 on support {1..k}
    cdf = np.concatenate([[0.0], np.cumsum(p)[:-1]])
    return np.clip(1.0 - cdf, 0.0, 1.0)


def expected_min_sequence(pmf, V_max: int) -> list[float]:
    """``E(M_1), ..., E(M_Vmax)``, built by repeated multiplication so the
    sequence is non-increasing in floating point as well."""
    surv = _survival(check_pmf(pmf))
    power = np.ones_like(surv)
    out = []
    for _ in range(V_max):
        power = power * surv
        out.append(float(power.sum()))
    return out


def _sample(p: np.ndarray, trials: int, V: int, seed: int) -> np.ndarray:
    """``trials x V`` iid draws from ``{1..k}``; chunk ``c`` uses substream ``(seed, c)``."""
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    out = np.empty((trials, V), dtype=np.int64)
    for c, start in enumerate(range(0, trials, CHUNK)):
        stop = min(trials, start + CHUNK)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(c,))))
        u = rng.random((stop - start, V))
        out[start:stop] = np.searchsorted(cdf, u, side="right") + 1
    return np.minimum(out, len(p))


def simulate_min(pmf, V: int, trials: int, seed: int = 0) -> MinStatistic:
    """Monte-Carlo mean of ``M_V`` with its standard error.

    Views are sampled as nested suites: the violation count tallies trials
    where adding view ``w + 1`` raised the running minimum (always zero).
    """
    p = check_pmf(pmf)
    if trials < 1 or V < 1:
        raise ContractViolation("trials and V must be >= 1")
    draws = _sample(p, trials, V, seed)
    running = np.minimum.accumulate(draws, axis=1)
    violations = int((running[:, 1:] > running[:, :-1]).sum())
    m = running[:, -1].astype(np.float64)
    mean = float(m.mean())
    se = 0.0 if trials < 2 or np.all(m == m[0]) else float(m.std(ddof=1) / np.sqrt(trials))
    return MinStatistic(V, exact_expected_min(p, V), mean, se, trials, violations)


def nesting_violations(pmf, V_max: int, trials: int, seed: int = 0) -> int:
    return simulate_min(pmf, V_max, trials, seed).nesting_violations


@dataclass
class MonotonicityReport:
    pmf: tuple[float, ...]
    values: list[float]
    non_increasing: bool
    constant: bool

    def rows(self) -> list[dict]:
        return [{"V": v, "expected_min": e} for v, e in enumerate(self.values, start=1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["V", "expected_min"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def monotonicity_report(pmf, V_max: int) -> MonotonicityReport:
    if V_max < 2:
        raise ContractViolation("V_max must be >= 2")
    p = check_pmf(pmf)
    values = expected_min_sequence(p, V_max)
    diffs = np.diff(values)
    non_increasing = bool(np.all(diffs <= 0))
    if not non_increasing:
        raise AssertionError(f"E(M_V) increased: {values}")
    return MonotonicityReport(tuple(p.tolist()), values, non_increasing, bool(np.all(diffs == 0)))
