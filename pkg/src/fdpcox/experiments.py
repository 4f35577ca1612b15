"""Monte-Carlo experiment runner.

A :class:`Scenario` names a model, a grid of settings and a number of
replications.  :func:`run_scenario` walks the grid (grid-major,
replication-minor), simulates fresh data for every replication, runs the
selected private pipeline and yields one :class:`ResultRow` per metric.

Random streams are keyed by ``(seed, "rep", r, purpose, ...)`` and never by the
privacy budget or sample size, so grid points within a replication share
common random numbers: larger samples extend smaller ones and every budget sees
the same standard-normal noise draws.
"""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator

import numpy as np

from ._random import rng_stream
from ._validation import per_server_budgets
from .breslow import (
    HazardEstimate,
    clip_probability,
    estimate_at_risk_probability,
    run_fdp_breslow,
)
from .cox import ALGORITHMS, SgdParams, default_rounds, fit_private_cox
from .datagen import CoxModelSpec, at_risk_probability, simulate, truncated_gaussian_beta
from .privacy import composed_cox_sensitivity
from .survival import ModelBounds

METRICS = ("beta_sq_error", "hazard_sup_error", "survival_sup_error", "p_hat_error")
TASKS = ("beta", "hazard")
AXES = ("n", "epsilon", "delta", "servers", "dimension", "censoring_rate", "step_size", "noise_constant")
BETA_SOURCES = ("estimate", "oracle")
BETA0_LAWS = ("fixed", "gaussian-truncated")

EPSILON_GRID = (0.75, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
N_GRID = (20000, 25000, 30000, 35000, 40000, 45000, 50000)
DELTA = 0.001
FULL_REPLICATIONS = 200
# a noise constant C is the gradient sensitivity used at this sample size;
# other sizes follow the log(n)/n shape of the sensitivity bound
NOISE_CONSTANT_N = 30000


# ---------------------------------------------------------------- metrics


def beta_sq_error(beta_hat, beta0) -> float:
    beta_hat = np.asarray(beta_hat, dtype=float).reshape(-1)
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    if beta_hat.shape != beta0.shape:
        raise ValueError(f"dimension mismatch: {beta_hat.shape[0]} vs {beta0.shape[0]}")
    return float(np.sum((beta_hat - beta0) ** 2))


class SupError(float):
    """Grid maximum with the Lipschitz slack attached as ``.upper``."""

    upper: float

    def __new__(cls, value, upper):
        obj = super().__new__(cls, value)
        obj.upper = float(upper)
        return obj


def hazard_sup_error(estimate: HazardEstimate, spec: CoxModelSpec) -> SupError:
    """``max |Lambda_hat - Lambda_0|`` over ``{m / 2^h}``.

    Between grid points the estimate is flat and the truth rises by at most
    ``max_rate / 2^h``, so ``.upper`` bounds the sup over all of [0, 1].
    """
    grid = estimate.grid()
    gap = np.abs(np.asarray(estimate.cumulative_hazard(grid)) - spec.baseline.cumulative(grid))
    value = float(gap.max())
    return SupError(value, value + spec.baseline.max_rate / 2**estimate.depth)


def survival_sup_error(estimate: HazardEstimate, spec: CoxModelSpec) -> float:
    grid = estimate.grid()
    truth = np.exp(-spec.baseline.cumulative(grid))
    return float(np.max(np.abs(estimate.survival(grid) - truth)))


@functools.lru_cache(maxsize=64)
def _p0(spec_json: str) -> float:
    return at_risk_probability(CoxModelSpec.from_dict(json.loads(spec_json)), n_samples=400_000, seed=0)


def true_at_risk_probability(spec: CoxModelSpec) -> float:
    """Cached Monte-Carlo value of ``P(T >= 1)`` (4e5 draws)."""
    return _p0(json.dumps(spec.to_dict(), sort_keys=True))


def p_hat_error(p_hat: float, spec: CoxModelSpec) -> float:
    return abs(float(p_hat) - true_at_risk_probability(spec))


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class Tuning:
    step_size: float = 0.5
    rounds_constant: float = 6.0
    noise_multiplier: float = 1.0
    p_fraction: float = 0.1
    c_z: float = 1.0
    c_beta: float = 1.0
    weight_mode: str = "hazard-weights"


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one experiment.

    ``grid`` maps axis names from :data:`AXES` to value lists; absent axes
    take the model's own value (dimension, censoring rate), the tuning value
    (step size) or the defaults ``servers=1, delta=0.001``.  A
    ``noise_constant`` C replaces the Cox gradient sensitivity by
    ``C (log(n)/n) / (log(N)/N)`` with ``N = 30000``, so C is the sensitivity
    level at the published sample size.
    """

    name: str
    spec: CoxModelSpec
    grid: dict
    algorithm: str = "cdp"
    tasks: tuple = ("beta",)
    replications: int = 1
    seed: int = 0
    tuning: Tuning = field(default_factory=Tuning)
    beta_source: str = "estimate"
    beta0_law: str = "fixed"

    def __post_init__(self):
        object.__setattr__(self, "grid", {k: tuple(v) for k, v in self.grid.items()})
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        unknown = set(self.grid) - set(AXES)
        if unknown:
            raise ValueError(f"unknown grid axes {sorted(unknown)}")
        if "n" not in self.grid or "epsilon" not in self.grid:
            raise ValueError("grid needs at least the n and epsilon axes")
        if any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid axes must be nonempty")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not self.tasks or set(self.tasks) - set(TASKS):
            raise ValueError(f"tasks must be a nonempty subset of {TASKS}")
        if self.beta_source not in BETA_SOURCES:
            raise ValueError(f"beta_source must be one of {BETA_SOURCES}")
        if self.beta0_law not in BETA0_LAWS:
            raise ValueError(f"beta0_law must be one of {BETA0_LAWS}")
        if self.beta_source == "oracle" and "beta" in self.tasks:
            raise ValueError("an oracle beta leaves nothing to estimate in the beta task")

    def points(self) -> list[dict]:
        defaults = {
            "delta": (DELTA,),
            "servers": (1,),
            "dimension": (self.spec.dimension,),
            "censoring_rate": (self.spec.censoring_rate,),
            "step_size": (self.tuning.step_size,),
            "noise_constant": (None,),
        }
        axes = [self.grid.get(a, defaults.get(a)) for a in AXES]
        return [dict(zip(AXES, values)) for values in itertools.product(*axes)]

    def metrics(self) -> tuple:
        out = []
        if "beta" in self.tasks or (self.beta_source == "estimate" and "hazard" in self.tasks):
            out.append("beta_sq_error")
        if "hazard" in self.tasks:
            out += ["hazard_sup_error", "survival_sup_error", "p_hat_error"]
        return tuple(out)

    def scaled(self, scale: float = 0.1, replications: int | None = None) -> "Scenario":
        """Multiply every ``n`` by ``scale``; replications default to ``round(200 scale)``."""
        if not scale > 0:
            raise ValueError("scale must be positive")
        grid = dict(self.grid)
        grid["n"] = tuple(max(1, int(round(n * scale))) for n in grid["n"])
        reps = replications or max(1, int(round(FULL_REPLICATIONS * scale)))
        return replace(self, grid=grid, replications=reps)

    def with_grid(self, **axes) -> "Scenario":
        return replace(self, grid={**self.grid, **axes})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "spec": self.spec.to_dict(),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "algorithm": self.algorithm,
            "tasks": list(self.tasks),
            "replications": self.replications,
            "seed": self.seed,
            "tuning": asdict(self.tuning),
            "beta_source": self.beta_source,
            "beta0_law": self.beta0_law,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        spec = CoxModelSpec.from_dict(d["spec"]) if "spec" in d else CoxModelSpec.paper_default()
        return cls(
            name=d["name"],
            spec=spec,
            grid=d["grid"],
            algorithm=d.get("algorithm", "cdp"),
            tasks=tuple(d.get("tasks", ("beta",))),
            replications=int(d.get("replications", 1)),
            seed=int(d.get("seed", 0)),
            tuning=Tuning(**d.get("tuning", {})),
            beta_source=d.get("beta_source", "estimate"),
            beta0_law=d.get("beta0_law", "fixed"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- presets


def _paper_scenario(name, grid, **kw) -> Scenario:
    return Scenario(name, CoxModelSpec.paper_default(), grid, **kw)


def _cdp_beta_grid():
    return _paper_scenario("cdp-beta-grid", {"n": N_GRID, "epsilon": EPSILON_GRID})


def _cdp_hazard_grid():
    return _paper_scenario("cdp-hazard-grid", {"n": N_GRID, "epsilon": EPSILON_GRID}, tasks=("hazard",))


def _dimension_study():
    return _paper_scenario(
        "dimension-study",
        {"n": (30000,), "epsilon": EPSILON_GRID, "dimension": tuple(range(2, 9))},
        beta0_law="gaussian-truncated",
    )


def _sensitivity_noise():
    constants = tuple(0.005 + 0.0025 * i for i in range(7))
    return _paper_scenario(
        "sensitivity-noise", {"n": (30000,), "epsilon": EPSILON_GRID, "noise_constant": constants}
    )


def _sensitivity_step():
    steps = tuple(round(0.2 + 0.1 * i, 10) for i in range(7))
    return _paper_scenario("sensitivity-step", {"n": (30000,), "epsilon": EPSILON_GRID, "step_size": steps})


def _censoring_study():
    rates = tuple(round(0.1 + 0.2 * i, 10) for i in range(7))
    return _paper_scenario(
        "censoring-study",
        {"n": (30000,), "epsilon": EPSILON_GRID, "censoring_rate": rates},
        tasks=("beta", "hazard"),
    )


def _fdp_grid():
    return _paper_scenario(
        "fdp-grid",
        {"n": (25000,), "epsilon": EPSILON_GRID, "servers": (2, 4, 8, 12, 16, 20)},
        algorithm="fdp",
        tasks=("beta", "hazard"),
    )


def _interactive_grid():
    return _paper_scenario(
        "interactive-grid",
        {"n": (10000,), "epsilon": EPSILON_GRID, "servers": tuple(range(2, 9))},
        algorithm="interactive",
    )


PRESETS = {
    "cdp-beta-grid": _cdp_beta_grid,
    "cdp-hazard-grid": _cdp_hazard_grid,
    "dimension-study": _dimension_study,
    "sensitivity-noise": _sensitivity_noise,
    "sensitivity-step": _sensitivity_step,
    "censoring-study": _censoring_study,
    "fdp-grid": _fdp_grid,
    "interactive-grid": _interactive_grid,
}


def preset(name: str, scale: float = 0.1, seed: int = 0, replications: int | None = None) -> Scenario:
    """A named study at ``scale`` times its published sample sizes."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name]().scaled(scale, replications), seed=seed)


# ---------------------------------------------------------------- runner


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    point: dict
    replication: int
    metric: str
    value: float
    runtime: float = 0.0
    upper: float | None = None
    error: str | None = None


def _point_spec(scenario: Scenario, point: dict) -> CoxModelSpec:
    spec = scenario.spec
    d = point["dimension"]
    if scenario.beta0_law == "gaussian-truncated":
        beta0 = truncated_gaussian_beta(d, rng_stream(scenario.seed, "beta0", d), spec.c_beta)
    elif d != spec.dimension:
        raise ValueError(f"model has dimension {spec.dimension}; a fixed beta0 cannot be used at d={d}")
    else:
        beta0 = spec.beta
    return replace(spec, beta0=tuple(beta0), censoring_rate=point["censoring_rate"])


def _cox_multiplier(scenario: Scenario, point: dict, bounds: ModelBounds) -> float:
    constant = point["noise_constant"]
    if constant is None:
        return scenario.tuning.noise_multiplier
    n = point["n"]
    sens = constant * (math.log(n) / n) / (math.log(NOISE_CONSTANT_N) / NOISE_CONSTANT_N)
    return scenario.tuning.noise_multiplier * sens / composed_cox_sensitivity(n, bounds)


def _datasets(spec, n, servers, seed, r, purpose):
    return [simulate(spec, n, (seed, "rep", r, purpose, s)) for s in range(servers)]


def _run_one(scenario: Scenario, point: dict, r: int) -> list[tuple]:
    """Metrics ``(name, value, upper)`` for one grid point and replication."""
    tuning = scenario.tuning
    spec = _point_spec(scenario, point)
    n, S, d = point["n"], point["servers"], point["dimension"]
    budgets = per_server_budgets(point["epsilon"], point["delta"], S)
    bounds = ModelBounds(tuning.c_z, tuning.c_beta)
    seed = scenario.seed
    algorithm = scenario.algorithm
    if algorithm == "cdp" and S != 1:
        raise ValueError("the central algorithm runs on a single server")
    out = []

    beta_hat = spec.beta
    if scenario.beta_source == "estimate":
        rounds = default_rounds(n * S, d, tuning.rounds_constant)
        params = SgdParams(rounds, point["step_size"], bounds, _cox_multiplier(scenario, point, bounds))
        data = _datasets(spec, n, S, seed, r, "beta-data")
        fit = fit_private_cox(algorithm, data, budgets, params, (seed, "rep", r, "beta-noise"))
        beta_hat = fit.beta_hat
        out.append(("beta_sq_error", beta_sq_error(beta_hat, spec.beta), None))

    if "hazard" in scenario.tasks:
        n_p = max(1, int(round(tuning.p_fraction * n)))
        p_data = _datasets(spec, n_p, S, seed, r, "p-data")
        p_raw = estimate_at_risk_probability(
            p_data, budgets, (seed, "rep", r, "p-noise"), tuning.noise_multiplier
        )
        p_hat = clip_probability(p_raw, n_p * S)
        h_data = _datasets(spec, n, S, seed, r, "hazard-data")
        estimate = run_fdp_breslow(
            h_data, budgets, beta_hat, p_hat, tuning.c_z, (seed, "rep", r, "hazard-noise"),
            tuning.weight_mode, tuning.noise_multiplier,
        )
        sup = hazard_sup_error(estimate, spec)
        out.append(("hazard_sup_error", float(sup), sup.upper))
        out.append(("survival_sup_error", survival_sup_error(estimate, spec), None))
        out.append(("p_hat_error", p_hat_error(p_hat, spec), None))
    return out


def _task(args) -> list[ResultRow]:
    scenario, point, r = args
    start = time.perf_counter()
    try:
        metrics = _run_one(scenario, point, r)
    except (ValueError, ArithmeticError) as exc:
        elapsed = time.perf_counter() - start
        msg = f"{type(exc).__name__}: {exc}"
        return [ResultRow(scenario.name, point, r, m, math.nan, elapsed, None, msg) for m in scenario.metrics()]
    elapsed = time.perf_counter() - start
    return [ResultRow(scenario.name, point, r, m, v, elapsed, u) for m, v, u in metrics]


def run_scenario(scenario: Scenario, workers: int = 1) -> Iterator[ResultRow]:
    """Yield rows grid-major, replication-minor.

    Failing grid points produce rows with ``value = nan`` and an ``error``
    message; the run continues.  ``workers > 1`` spreads replications over
    processes; rows come back in the same order either way.
    """
    tasks = [(scenario, p, r) for p in scenario.points() for r in range(scenario.replications)]
    if workers <= 1:
        for t in tasks:
            yield from _task(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for rows in pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))):
            yield from rows


# ---------------------------------------------------------------- csv

CSV_COLUMNS = ("scenario", *AXES, "replication", "metric", "value", "upper", "error")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def emit_csv(rows: Iterable[ResultRow], path, include_runtime: bool = False) -> int:
    """Write rows in the order given; returns the row count.

    Runtimes vary between runs, so they are left out unless asked for.
    """
    columns = CSV_COLUMNS + (("runtime",) if include_runtime else ())
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            cells = [row.scenario, *(row.point.get(a) for a in AXES), row.replication, row.metric,
                     row.value, row.upper, row.error]
            if include_runtime:
                cells.append(row.runtime)
            writer.writerow([_cell(c) for c in cells])
            count += 1
    return count


def _parse_number(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(
                ResultRow(
                    scenario=rec["scenario"],
                    point={a: _parse_number(rec[a]) for a in AXES},
                    replication=int(rec["replication"]),
                    metric=rec["metric"],
                    value=float(rec["value"]),
                    runtime=float(rec["runtime"]) if rec.get("runtime") else 0.0,
                    upper=float(rec["upper"]) if rec["upper"] else None,
                    error=rec["error"] or None,
                )
            )
    return rows


def mean_by(rows: Iterable[ResultRow], metric: str, *axes: str) -> dict:
    """Mean value of ``metric`` keyed by the tuple of ``axes`` values, skipping failed rows."""
    sums: dict = {}
    for row in rows:
        if row.metric != metric or row.error:
            continue
        key = tuple(row.point[a] for a in axes)
        total, count = sums.get(key, (0.0, 0))
        sums[key] = (total + row.value, count + 1)
    return {k: t / c for k, (t, c) in sums.items()}
