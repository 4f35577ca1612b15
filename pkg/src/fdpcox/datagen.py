"""Seeded Cox-model survival data with exponential censoring.

Event times are drawn by inverting the baseline cumulative hazard,
``T~ = Lambda0^{-1}(E * exp(-beta0'z))`` with ``E ~ Exp(1)``; censoring times are
``Exp(censoring_rate)``; observations are truncated at the horizon 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._random import as_generator, rng_stream
from .survival import Dataset, SurvivalRecord, project_ball

HORIZON = 1.0
COVARIATE_LAWS = ("uniform", "gaussian_ball")


@dataclass(frozen=True)
class ConstantHazard:
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("baseline rate must be positive")

    def cumulative(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def inverse(self, u):
        return np.asarray(u, dtype=float) / self.rate

    @property
    def max_rate(self) -> float:
        return self.rate

    def to_dict(self):
        return {"kind": "constant", "rate": self.rate}


@dataclass(frozen=True)
class TabulatedHazard:
    """Piecewise-linear cumulative hazard through ``(times[k], values[k])``.

    Beyond the last knot the final slope is extended.  The table must start at
    ``(0, 0)``, be nondecreasing, and be strictly increasing once positive,
    otherwise the inverse transform is not defined.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", tuple(t.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("need at least two (time, value) knots of equal length")
        if t[0] != 0.0 or v[0] != 0.0:
            raise ValueError("cumulative hazard table must start at (0, 0)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("knot times must be strictly increasing")
        dv = np.diff(v)
        if np.any(dv < 0):
            raise ValueError("cumulative hazard must be nondecreasing")
        first_positive = int(np.argmax(v > 0)) if np.any(v > 0) else v.size
        if first_positive == v.size or np.any(dv[first_positive:] <= 0):
            raise ValueError("cumulative hazard is not invertible: flat segment after it becomes positive")

    def _arrays(self):
        return np.asarray(self.times), np.asarray(self.values)

    def cumulative(self, t):
        times, values = self._arrays()
        t = np.asarray(t, dtype=float)
        slope = (values[-1] - values[-2]) / (times[-1] - times[-2])
        out = np.interp(t, times, values)
        return np.where(t > times[-1], values[-1] + slope * (t - times[-1]), out)

    def inverse(self, u):
        times, values = self._arrays()
        u = np.asarray(u, dtype=float)
        start = int(np.argmax(values > 0)) - 1
        tt, vv = times[start:], values[start:]
        slope = (vv[-1] - vv[-2]) / (tt[-1] - tt[-2])
        out = np.interp(u, vv, tt)
        return np.where(u > vv[-1], tt[-1] + (u - vv[-1]) / slope, out)

    @property
    def max_rate(self) -> float:
        times, values = self._arrays()
        return float(np.max(np.diff(values) / np.diff(times)))

    def to_dict(self):
        return {"kind": "tabulated", "times": list(self.times), "values": list(self.values)}


def baseline_from_dict(d):
    kind = d.get("kind", "constant")
    if kind == "constant":
        return ConstantHazard(float(d.get("rate", 1.0)))
    if kind == "tabulated":
        return TabulatedHazard(tuple(d["times"]), tuple(d["values"]))
    raise ValueError(f"unknown baseline kind {kind!r}")


@dataclass(frozen=True)
class CoxModelSpec:
    beta0: tuple
    baseline: ConstantHazard | TabulatedHazard = field(default_factory=ConstantHazard)
    censoring_rate: float = 0.3
    covariate_law: str = "uniform"
    c_beta: float = 1.0

    def __post_init__(self):
        beta0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        object.__setattr__(self, "beta0", tuple(beta0.tolist()))
        if beta0.size < 1:
            raise ValueError("beta0 must have at least one coordinate")
        if np.linalg.norm(beta0) > self.c_beta + 1e-12:
            raise ValueError(f"||beta0|| = {np.linalg.norm(beta0):.4g} exceeds c_beta = {self.c_beta}")
        if not self.censoring_rate > 0:
            raise ValueError("censoring_rate must be positive")
        if self.covariate_law not in COVARIATE_LAWS:
            raise ValueError(f"covariate_law must be one of {COVARIATE_LAWS}")

    @property
    def dimension(self) -> int:
        return len(self.beta0)

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta0)

    @classmethod
    def paper_default(cls, censoring_rate=0.3):
        """beta0 = (0, 0.5, 0.8), unit baseline hazard, uniform covariates."""
        return cls((0.0, 0.5, 0.8), ConstantHazard(1.0), censoring_rate, "uniform")

    def to_dict(self):
        return {
            "beta0": list(self.beta0),
            "baseline": self.baseline.to_dict(),
            "censoring_rate": self.censoring_rate,
            "covariate_law": self.covariate_law,
            "c_beta": self.c_beta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["beta0"]),
            baseline_from_dict(d.get("baseline", {"kind": "constant", "rate": 1.0})),
            float(d.get("censoring_rate", 0.3)),
            d.get("covariate_law", "uniform"),
            float(d.get("c_beta", 1.0)),
        )


def truncated_gaussian_beta(d: int, rng, radius: float = 1.0) -> np.ndarray:
    """Draw ``N(0, I_d)`` coefficients and project them onto the ``radius`` ball."""
    rng = as_generator(rng)
    return project_ball(rng.standard_normal(d), radius)


def _covariates(spec: CoxModelSpec, n: int, rng) -> np.ndarray:
    d = spec.dimension
    if spec.covariate_law == "uniform":
        half = 1.0 / math.sqrt(d)
        return rng.uniform(-half, half, size=(n, d))
    z = rng.standard_normal((n, d)) / math.sqrt(d)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.maximum(norms, 1.0)


def sample_covariates(spec: CoxModelSpec, rng) -> np.ndarray:
    return _covariates(spec, 1, as_generator(rng))[0]


def event_time_from_exponential(spec: CoxModelSpec, z, e):
    """Inverse-hazard transform of unit-exponential draws ``e``."""
    z = np.asarray(z, dtype=float)
    return spec.baseline.inverse(np.asarray(e, dtype=float) * np.exp(-(z @ spec.beta)))


def sample_event_time(spec: CoxModelSpec, z, rng) -> float:
    e = as_generator(rng).standard_exponential()
    return float(event_time_from_exponential(spec, z, e))


def observe(event_time, censor_time):
    """Horizon-truncated observation ``(min(T~, C, 1), 1{T~ <= min(1, C)})``."""
    event_time = np.asarray(event_time, dtype=float)
    censor_time = np.asarray(censor_time, dtype=float)
    t = np.minimum(np.minimum(event_time, censor_time), HORIZON)
    delta = (event_time <= np.minimum(HORIZON, censor_time)).astype(np.int8)
    if t.ndim == 0:
        return float(t), int(delta)
    return t, delta


def sample_record(spec: CoxModelSpec, rng) -> SurvivalRecord:
    rng = as_generator(rng)
    z = sample_covariates(spec, rng)
    t_event = sample_event_time(spec, z, rng)
    t_censor = rng.exponential(1.0 / spec.censoring_rate)
    t, delta = observe(t_event, t_censor)
    return SurvivalRecord(t, delta, z)


def simulate(spec: CoxModelSpec, n: int, seed, *keys) -> Dataset:
    """Draw ``n`` records.

    Covariates, event clocks and censoring clocks come from three separate
    streams keyed by ``(seed, *keys)``, so the first ``m`` records of an
    ``n``-sample equal an ``m``-sample drawn with the same keys.
    """
    if isinstance(seed, np.random.Generator):
        rngs = [seed] * 3
    else:
        rngs = [rng_stream(seed, *keys, purpose) for purpose in ("covariates", "event", "censoring")]
    z = _covariates(spec, n, rngs[0])
    e = rngs[1].standard_exponential(n)
    c = rngs[2].standard_exponential(n) / spec.censoring_rate
    t, delta = observe(event_time_from_exponential(spec, z, e), c)
    return Dataset(np.atleast_1d(t), np.atleast_1d(delta), z)


def true_cumulative_hazard(spec: CoxModelSpec, t):
    out = spec.baseline.cumulative(t)
    return float(out) if np.ndim(out) == 0 else out


def at_risk_probability(spec: CoxModelSpec, n_samples: int = 200_000, seed: int = 0) -> float:
    """Monte-Carlo estimate of ``P(Y(1) = 1) = P(T >= 1)``."""
    data = simulate(spec, n_samples, seed, "p0-oracle")
    return float(np.mean(data.time >= HORIZON))


def write_dataset_csv(data: Dataset, path, servers=None) -> None:
    """Columns ``time, event, z1..zd`` and, if given, a trailing ``server`` label."""
    header = ["time", "event"] + [f"z{j + 1}" for j in range(data.dimension)]
    if servers is not None:
        servers = np.asarray(servers).reshape(-1)
        if servers.shape[0] != data.n:
            raise ValueError("one server label per record is required")
        header.append("server")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.time[i])), int(data.event[i])] + [repr(float(z)) for z in data.covariates[i]]
            if servers is not None:
                row.append(servers[i])
            writer.writerow(row)


def read_dataset_csv(path):
    """Inverse of :func:`write_dataset_csv`; returns ``(dataset, servers or None)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["time", "event"]:
            raise ValueError(f"{path}: header must start with time,event")
        zcols = [j for j, name in enumerate(header) if name.startswith("z") and name[1:].isdigit()]
        if not zcols:
            raise ValueError(f"{path}: no covariate columns z1..zd")
        server_col = header.index("server") if "server" in header else None
        time, event, cov, servers = [], [], [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                time.append(float(row[0]))
                event.append(int(float(row[1])))
                cov.append([float(row[j]) for j in zcols])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{line}: {exc}") from None
            if server_col is not None:
                servers.append(row[server_col])
    data = Dataset(np.array(time), np.array(event, dtype=int), np.array(cov).reshape(len(time), len(zcols)))
    return data, (np.array(servers) if server_col is not None else None)
