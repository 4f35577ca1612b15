"""Gaussian mechanisms, Cox-score sensitivity and Renyi-DP accounting.

The per-algorithm noise levels (``fdp_cox_sigma`` and friends) reproduce the
hard-coded variances of the estimators verbatim.  The generic calibrators
(``gaussian_sigma``, ``composed_gaussian_variance``) and the RDP accountant let
tests confirm that those hard-coded levels meet the generic requirement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._random import rng_stream
from .survival import Dataset, ModelBounds, gradient

CASES = ("censoring-only", "covariate-only", "time-only", "full-triple")


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class RdpLedger:
    """Accumulated Renyi-DP cost at a fixed order ``alpha``."""

    alpha: float
    epsilon_rdp: float = 0.0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError("RDP order must exceed 1")
        if self.epsilon_rdp < 0:
            raise ValueError("RDP epsilon must be nonnegative")

    def compose(self, eps_new: float) -> "RdpLedger":
        return rdp_compose(self, eps_new)


class SensitivityBound(NamedTuple):
    value: float
    case: str


def _check_case(case: str) -> str:
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    return case


def gaussian_sigma(sens: float, budget: PrivacyBudget) -> float:
    """Standard deviation ``sqrt(2 log(1.25/delta)) * sens / epsilon``."""
    if sens < 0:
        raise ValueError("sensitivity must be nonnegative")
    if budget.delta <= 0:
        raise ValueError("the Gaussian mechanism needs delta > 0")
    return math.sqrt(2.0 * math.log(1.25 / budget.delta)) * sens / budget.epsilon


def grad_sensitivity_bound(n: int, bounds: ModelBounds, case: str = "full-triple") -> SensitivityBound:
    """Analytic upper bound on the l2-sensitivity of the normalised Cox score."""
    _check_case(case)
    if n < 1:
        raise ValueError("n must be at least 1")
    cz, cb = bounds.c_z, bounds.c_beta
    value = 4.0 * cz / n
    if case != "censoring-only":
        growth = math.exp(2.0 * cz * cb) * math.log(n + 1) / n
        value += 2.0 * cz * growth + 3.0 * max(cz, cz * cz) * growth
    return SensitivityBound(value, case)


def _unit_ball(rng, size: int, d: int, radius: float) -> np.ndarray:
    u = rng.standard_normal((size, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(size, 1)) ** (1.0 / d)
    return u * r


def _random_covariates(rng, size, d, c_z):
    # half on the sphere, where sensitivity is largest
    z = _unit_ball(rng, size, d, c_z)
    on_sphere = rng.uniform(size=size) < 0.5
    z[on_sphere] *= c_z / np.linalg.norm(z[on_sphere], axis=1, keepdims=True)
    return z


def _neighbour(data: Dataset, case: str, rng, c_z: float) -> Dataset:
    i = int(rng.integers(data.n))
    t, e, z = data.time.copy(), data.event.copy(), data.covariates.copy()
    if case in ("censoring-only", "full-triple"):
        e[i] = 1 - e[i] if case == "censoring-only" else rng.integers(2)
    if case in ("covariate-only", "full-triple"):
        z[i] = _random_covariates(rng, 1, data.dimension, c_z)[0]
    if case in ("time-only", "full-triple"):
        t[i] = rng.uniform()
    return Dataset(t, e, z)


def _score_gap(d1: Dataset, d2: Dataset, beta) -> float:
    return float(np.linalg.norm(gradient(d1, beta) - gradient(d2, beta)))


def sensitivity_witness(n: int, d: int, case: str, bounds: ModelBounds = ModelBounds()) -> float:
    """Score gap of an explicit adversarial neighbouring pair for ``case``.

    * censoring-only: subject with the earliest time has ``Z = c_z e1`` and
      everyone else ``-c_z e1``; its event indicator is switched off.
    * covariate-only: all ``Z = c_z e1``, all events, ``beta = -c_beta e1``;
      the covariate of the last subject is sign-flipped.
    * time-only: as above with the last subject already flipped; its time is
      moved to half the smallest time.
    * full-triple: the larger of the two previous gaps.
    """
    _check_case(case)
    if n < 2:
        raise ValueError("witness constructions need n >= 2")
    cz, cb = bounds.c_z, bounds.c_beta
    e1 = np.zeros(d)
    e1[0] = 1.0
    beta = -cb * e1
    times = np.arange(1, n + 1) / (n + 1)
    events = np.ones(n, dtype=int)
    if case == "censoring-only":
        z = np.tile(-cz * e1, (n, 1))
        z[0] = cz * e1
        data = Dataset(times, events, z)
        events2 = events.copy()
        events2[0] = 0
        return _score_gap(data, Dataset(times, events2, z), beta)
    z = np.tile(cz * e1, (n, 1))
    flipped = z.copy()
    flipped[-1] = -cz * e1
    covariate_gap = _score_gap(Dataset(times, events, z), Dataset(times, events, flipped), beta)
    if case == "covariate-only":
        return covariate_gap
    moved = times.copy()
    moved[-1] = times[0] / 2
    time_gap = _score_gap(Dataset(times, events, flipped), Dataset(moved, events, flipped), beta)
    if case == "time-only":
        return time_gap
    return max(covariate_gap, time_gap)


def empirical_sensitivity(
    n: int,
    d: int,
    case: str,
    trials: int,
    seed=0,
    bounds: ModelBounds = ModelBounds(),
) -> tuple[float, float]:
    """Largest observed score gap over random neighbouring pairs, and the witness gap.

    Each trial draws a base dataset, a neighbour under the ``case`` relation
    and ``beta`` uniformly from the ``c_beta`` ball.
    """
    _check_case(case)
    if n < 2 or trials < 1:
        raise ValueError("need n >= 2 and trials >= 1")
    worst = 0.0
    for trial in range(trials):
        rng = rng_stream(seed, "audit", case, n, trial)
        data = Dataset(
            rng.uniform(size=n),
            rng.uniform(size=n) < rng.uniform(0.3, 1.0),
            _random_covariates(rng, n, d, bounds.c_z),
        )
        beta = _unit_ball(rng, 1, d, bounds.c_beta)[0]
        worst = max(worst, _score_gap(data, _neighbour(data, case, rng, bounds.c_z), beta))
    return worst, sensitivity_witness(n, d, case, bounds)


def audit_rows(ns, d: int, trials: int, seed=0, bounds: ModelBounds = ModelBounds(), cases=CASES):
    """Auditor output as dicts with keys case, n, bound, max_observed, lower_witness."""
    for case in cases:
        for n in ns:
            observed, witness = empirical_sensitivity(n, d, case, trials, seed, bounds)
            yield {
                "case": case,
                "n": n,
                "bound": grad_sensitivity_bound(n, bounds, case).value,
                "max_observed": observed,
                "lower_witness": witness,
            }


def write_audit_csv(rows, path) -> None:
    fields = ["case", "n", "bound", "max_observed", "lower_witness"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def rdp_gaussian(alpha: float, sens: float, sigma: float) -> float:
    if not alpha > 1:
        raise ValueError("RDP order must exceed 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return alpha * sens**2 / (2.0 * sigma**2)


def rdp_compose(ledger: RdpLedger, eps_new: float, alpha: float | None = None) -> RdpLedger:
    if alpha is not None and alpha != ledger.alpha:
        raise ValueError(f"cannot compose order {alpha} into a ledger of order {ledger.alpha}")
    return RdpLedger(ledger.alpha, ledger.epsilon_rdp + eps_new)


def rdp_to_dp(ledger: RdpLedger, delta: float) -> PrivacyBudget:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return PrivacyBudget(ledger.epsilon_rdp + math.log(1.0 / delta) / (ledger.alpha - 1.0), delta)


def composition_order(budget: PrivacyBudget) -> float:
    """RDP order ``2 log(1/delta)/epsilon + 1`` used for K-fold Gaussian composition."""
    return 2.0 * math.log(1.0 / budget.delta) / budget.epsilon + 1.0


def composed_gaussian_variance(sens: float, budget: PrivacyBudget, k_rounds: int) -> float:
    """Per-round variance making a K-fold adaptive Gaussian composition (eps, delta)-DP."""
    if k_rounds < 1:
        raise ValueError("k_rounds must be at least 1")
    if not 0 < budget.delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return composition_order(budget) * sens**2 / (budget.epsilon / k_rounds)


def certify_composition(sens: float, sigma: float, budget: PrivacyBudget, k_rounds: int) -> PrivacyBudget:
    """Run ``k_rounds`` Gaussian releases of noise ``sigma`` through the RDP accountant."""
    ledger = RdpLedger(composition_order(budget))
    per_round = rdp_gaussian(ledger.alpha, sens, sigma)
    for _ in range(k_rounds):
        ledger = ledger.compose(per_round)
    return rdp_to_dp(ledger, budget.delta)


# Noise levels printed in the estimators.


def _lipschitz_factor(bounds: ModelBounds) -> float:
    cz, cb = bounds.c_z, bounds.c_beta
    return max(cz, cz * cz) * math.exp(2.0 * cz * cb)


def fdp_cox_sigma(batch_size: int, budget: PrivacyBudget, bounds: ModelBounds) -> float:
    """Batched federated SGD: variance 72 log(1.25/d) max(Cz^2,Cz^4) e^{4 Cz Cb} log^2(b+1) / (eps^2 b^2)."""
    b = batch_size
    var = (
        72.0
        * math.log(1.25 / budget.delta)
        * _lipschitz_factor(bounds) ** 2
        * math.log(b + 1) ** 2
        / (budget.epsilon**2 * b**2)
    )
    return math.sqrt(var)


def composed_cox_sensitivity(n: int, bounds: ModelBounds) -> float:
    """``6 max(Cz, Cz^2) e^{2 Cz Cb} log(n+1) / n``."""
    return 6.0 * _lipschitz_factor(bounds) * math.log(n + 1) / n


def cdp_cox_sigma(n: int, budget: PrivacyBudget, k_rounds: int, bounds: ModelBounds) -> float:
    """Full-data SGD under RDP composition over ``k_rounds``."""
    return math.sqrt(composed_gaussian_variance(composed_cox_sensitivity(n, bounds), budget, k_rounds))


def breslow_node_sigma(c: float, n: int, budget: PrivacyBudget, depth: int) -> float:
    """Tree node noise: variance (1/c^4 + 3/c^2)(2 log(1/delta)/eps + 1) / (n^2 eps / h)."""
    if not c > 0:
        raise ValueError("truncation constant must be positive")
    var = (1.0 / c**4 + 3.0 / c**2) * composition_order(budget) / (n**2 * budget.epsilon / depth)
    return math.sqrt(var)


def breslow_level_sensitivity(c: float, n: int) -> float:
    """l2-sensitivity of one tree level: ``sqrt(n^2/(cn)^4 + 3/(cn)^2)``."""
    return math.sqrt(n**2 / (c * n) ** 4 + 3.0 / (c * n) ** 2)


def at_risk_sigma(n: int, budget: PrivacyBudget) -> float:
    """``sqrt(2 log(1.25/delta)) / (n eps)``."""
    return gaussian_sigma(1.0 / n, budget)
