"""Cox partial-likelihood machinery on the time horizon [0, 1].

Covariates are time-constant, so every integral against a counting process
reduces to a sum over observed event times.  The risk set at time ``t`` is
``{j : T_j >= t}``; an event subject is in its own risk set, and tied event
times share one risk set (Breslow convention).

All quantities are normalised by ``1/n`` so that they match the sensitivity
constants used by the privacy module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np


class DegenerateRiskSetError(ValueError):
    """Raised when nobody is at risk at the requested time."""


@dataclass(frozen=True)
class ModelBounds:
    """Norm bounds on covariates (``c_z``) and coefficients (``c_beta``)."""

    c_z: float = 1.0
    c_beta: float = 1.0

    def __post_init__(self):
        if not (self.c_z > 0 and self.c_beta > 0):
            raise ValueError(f"bounds must be positive, got {self}")


@dataclass(frozen=True)
class SurvivalRecord:
    observed_time: float
    event: int
    covariates: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.covariates, dtype=float).reshape(-1)
        object.__setattr__(self, "covariates", z)
        if not 0.0 <= self.observed_time <= 1.0:
            raise ValueError(f"observed_time must lie in [0, 1], got {self.observed_time}")
        if self.event not in (0, 1):
            raise ValueError(f"event must be 0 or 1, got {self.event}")


class Dataset:
    """Column store of survival records ``(T_i, Delta_i, Z_i)``.

    Parameters
    ----------
    time : array of shape (n,)
        Observed times in [0, 1].
    event : array of shape (n,)
        Event indicators in {0, 1}.
    covariates : array of shape (n, d)
    """

    __slots__ = ("time", "event", "covariates")

    def __init__(self, time, event, covariates):
        time = np.asarray(time, dtype=float).reshape(-1)
        event = np.asarray(event).reshape(-1)
        covariates = np.asarray(covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(-1, 1) if time.size != 1 else covariates.reshape(1, -1)
        if covariates.ndim != 2 or covariates.shape[1] < 1:
            raise ValueError("covariates must be a 2-d array with at least one column")
        if not (time.shape[0] == event.shape[0] == covariates.shape[0]):
            raise ValueError("time, event and covariates must have the same number of rows")
        if time.size and (np.any(time < 0.0) or np.any(time > 1.0) or not np.all(np.isfinite(time))):
            raise ValueError("observed times must lie in [0, 1]")
        if not np.all((event == 0) | (event == 1)):
            raise ValueError("event indicators must be 0 or 1")
        if not np.all(np.isfinite(covariates)):
            raise ValueError("covariates must be finite")
        self.time = time
        self.event = event.astype(np.int8)
        self.covariates = covariates
        for arr in (self.time, self.event, self.covariates):
            arr.setflags(write=False)

    @classmethod
    def from_records(cls, records, dimension=None):
        records = list(records)
        if not records:
            if dimension is None:
                raise ValueError("dimension is required for an empty dataset")
            return cls(np.empty(0), np.empty(0, dtype=int), np.empty((0, dimension)))
        return cls(
            [r.observed_time for r in records],
            [r.event for r in records],
            np.vstack([r.covariates for r in records]),
        )

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def dimension(self) -> int:
        return self.covariates.shape[1]

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[SurvivalRecord]:
        return self.records()

    def records(self) -> Iterator[SurvivalRecord]:
        for i in range(self.n):
            yield SurvivalRecord(float(self.time[i]), int(self.event[i]), self.covariates[i])

    def subset(self, index) -> "Dataset":
        return Dataset(self.time[index], self.event[index], self.covariates[index])

    def replace(self, i: int, record: SurvivalRecord) -> "Dataset":
        """Return a neighbouring dataset with row ``i`` swapped for ``record``."""
        time, event, cov = self.time.copy(), self.event.copy(), self.covariates.copy()
        time[i], event[i], cov[i] = record.observed_time, record.event, record.covariates
        return Dataset(time, event, cov)

    def check_bounds(self, bounds: ModelBounds, atol: float = 1e-12) -> None:
        norms = np.linalg.norm(self.covariates, axis=1)
        if norms.size and norms.max() > bounds.c_z + atol:
            raise ValueError(
                f"covariate norm {norms.max():.6g} exceeds the configured bound c_z={bounds.c_z}"
            )

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.dimension}, events={int(self.event.sum())})"


class Moments(NamedTuple):
    s0: float
    s1: np.ndarray
    s2: np.ndarray

    @property
    def zbar(self) -> np.ndarray:
        return self.s1 / self.s0

    @property
    def variance(self) -> np.ndarray:
        zbar = self.zbar
        return self.s2 / self.s0 - np.outer(zbar, zbar)


def at_risk(record: SurvivalRecord, t: float) -> int:
    return int(record.observed_time >= t)


def _check_nonempty(data: Dataset, beta) -> np.ndarray:
    if data.n == 0:
        raise ValueError("estimation requires a nonempty dataset")
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.dimension:
        raise ValueError(f"beta has dimension {beta.shape[0]}, data has {data.dimension}")
    return beta


def s_moments(data: Dataset, t: float, beta) -> Moments:
    """Weighted moments ``S^(k)(t, beta)``, k = 0, 1, 2, of the risk set at ``t``."""
    beta = _check_nonempty(data, beta)
    y = data.time >= t
    z = data.covariates[y]
    w = np.exp(z @ beta)
    n = data.n
    s0 = w.sum() / n
    if s0 == 0.0:
        raise DegenerateRiskSetError(f"no subject at risk at t={t}")
    s1 = w @ z / n
    s2 = (z * w[:, None]).T @ z / n
    return Moments(s0, s1, s2)


class _RiskSetSums(NamedTuple):
    """Unnormalised risk-set sums evaluated at each event time."""

    events: np.ndarray  # indices of event subjects
    s0: np.ndarray  # (m,)
    s1: np.ndarray  # (m, d)
    s2: np.ndarray | None  # (m, d, d)


def _risk_set_sums(data: Dataset, beta: np.ndarray, second: bool = False) -> _RiskSetSums:
    events = np.flatnonzero(data.event)
    order = np.argsort(-data.time, kind="stable")
    neg_sorted = -data.time[order]
    # last position (descending order) of each subject's tie group
    last = np.searchsorted(neg_sorted, neg_sorted, side="right") - 1
    rank = np.empty(data.n, dtype=np.intp)
    rank[order] = np.arange(data.n)
    pos = last[rank[events]]

    z = data.covariates[order]
    w = np.exp(z @ beta)
    s0 = np.cumsum(w)[pos]
    wz = z * w[:, None]
    s1 = np.cumsum(wz, axis=0)[pos]
    s2 = None
    if second:
        s2 = np.cumsum(wz[:, :, None] * z[:, None, :], axis=0)[pos]
    return _RiskSetSums(events, s0, s1, s2)


def partial_log_likelihood(data: Dataset, beta) -> float:
    """Normalised log partial likelihood ``(1/n) sum_events [beta'Z_i - log sum_{j at risk} exp(beta'Z_j)]``."""
    beta = _check_nonempty(data, beta)
    sums = _risk_set_sums(data, beta)
    if sums.events.size == 0:
        return 0.0
    linear = data.covariates[sums.events] @ beta
    return float((linear.sum() - np.log(sums.s0).sum()) / data.n)


def gradient(data: Dataset, beta) -> np.ndarray:
    """Score ``(1/n) sum_events (Z_i - Zbar(T_i, beta))``."""
    beta = _check_nonempty(data, beta)
    sums = _risk_set_sums(data, beta)
    if sums.events.size == 0:
        return np.zeros(data.dimension)
    zbar = sums.s1 / sums.s0[:, None]
    return (data.covariates[sums.events] - zbar).sum(axis=0) / data.n


def hessian(data: Dataset, beta) -> np.ndarray:
    """``(1/n) sum_events V(T_i, beta)``.

    This is the information matrix, i.e. minus the second derivative of
    :func:`partial_log_likelihood`; it is symmetric positive semi-definite.
    """
    beta = _check_nonempty(data, beta)
    d = data.dimension
    sums = _risk_set_sums(data, beta, second=True)
    if sums.events.size == 0:
        return np.zeros((d, d))
    zbar = sums.s1 / sums.s0[:, None]
    v = sums.s2 / sums.s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :]
    h = v.sum(axis=0) / data.n
    return (h + h.T) / 2


def project_ball(v, radius: float) -> np.ndarray:
    if radius <= 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= radius:
        return v.copy()
    return v * (radius / norm)


def event_risk_s0(data: Dataset, beta) -> tuple[np.ndarray, np.ndarray]:
    """Indices of event subjects and ``S^(0)(T_i, beta)`` at each of their times."""
    beta = _check_nonempty(data, beta)
    sums = _risk_set_sums(data, beta)
    return sums.events, sums.s0 / data.n
