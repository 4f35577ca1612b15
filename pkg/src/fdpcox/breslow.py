"""Private cumulative-hazard estimation with dyadic trees.

Each server cuts [0, 1] into ``2^h`` equal intervals, computes the truncated
Breslow mass in each (the leaves), sums pairs upwards into a binary tree and
adds Gaussian noise to every node.  Any prefix ``Lambda(t)`` is then a sum of at
most ``h`` noised nodes.  Server trees are combined with fixed weights.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import as_generator, rng_stream
from ._validation import check_survival_data, per_server_budgets, split_groups
from .federation import FederationConfig, Message, Transcript, effective_weights, make_servers, run_rounds
from .privacy import PrivacyBudget, at_risk_sigma, breslow_node_sigma
from .survival import Dataset, event_risk_s0


def tree_depth(config: FederationConfig) -> int:
    """``floor(log2(sum_s min(n_s, n_s^2 eps_s^2)) / 2)``."""
    eff = sum(min(n, n * n * b.epsilon**2) for n, b in zip(config.sizes, config.budgets))
    if eff < 2:
        raise ValueError(f"effective sample size {eff:.4g} is below 2")
    h = int(math.floor(0.5 * math.log2(eff)))
    # guard against log2 rounding just below an exact power of four
    if 4 ** (h + 1) <= eff:
        h += 1
    if h < 1:
        raise ValueError(f"effective sample size {eff:.4g} gives a tree of depth 0")
    return h


def truncation_constant(beta_hat, p_hat: float, c_z: float) -> float:
    """``0.9 exp(-c_z ||beta_hat||) p_hat``: floor for the at-risk average."""
    if not p_hat > 0:
        raise ValueError(f"at-risk probability estimate must be positive, got {p_hat}")
    return 0.9 * math.exp(-c_z * float(np.linalg.norm(beta_hat))) * p_hat


def clip_probability(p_hat: float, total_n: int) -> float:
    """Clamp a noised probability into ``[1/total_n, 1]``."""
    return float(min(max(p_hat, 1.0 / total_n), 1.0))


def leaf_index(t, h: int):
    """Leaf of time ``t``: intervals ``[(m-1)/2^h, m/2^h)``, the last one closed at 1."""
    return np.minimum(np.floor(np.asarray(t) * 2**h).astype(np.int64), 2**h - 1)


def breslow_increments(data: Dataset, beta_hat, c: float, h: int) -> np.ndarray:
    """Truncated Breslow mass ``sum 1/(n max(c, S0(T_i)))`` of events in each leaf."""
    if not c > 0:
        raise ValueError("truncation constant must be positive")
    if h < 1:
        raise ValueError("depth must be at least 1")
    leaves = np.zeros(2**h)
    if data.n == 0:
        return leaves
    events, s0 = event_risk_s0(data, beta_hat)
    if events.size:
        np.add.at(leaves, leaf_index(data.time[events], h), 1.0 / (data.n * np.maximum(c, s0)))
    return leaves


def tree_levels(leaves: np.ndarray) -> list[np.ndarray]:
    """Levels ``1..h`` of the sum tree over ``leaves``; level ``l`` has ``2^l`` nodes."""
    leaves = np.asarray(leaves, dtype=float)
    h = int(round(math.log2(leaves.size)))
    if 2**h != leaves.size or h < 1:
        raise ValueError("number of leaves must be a power of two >= 2")
    levels = [leaves]
    for _ in range(h - 1):
        prev = levels[-1]
        levels.append(prev[0::2] + prev[1::2])
    return levels[::-1]


@dataclass
class HazardTree:
    depth: int
    levels: list  # levels[l-1] holds the 2^l nodes of level l
    sigma: float
    c: float
    server: int = 0

    @property
    def node_count(self) -> int:
        return sum(level.size for level in self.levels)

    def node(self, level: int, m: int) -> float:
        """Node ``x_{level, m}`` with 1-based ``level`` and ``m``."""
        return float(self.levels[level - 1][m - 1])

    def prefix(self, j: int) -> float:
        """Sum of the first ``j`` leaves from at most ``depth`` nodes."""
        h = self.depth
        if j <= 0:
            return 0.0
        if j >= 2**h:
            return float(self.levels[0][0] + self.levels[0][1])
        total = 0.0
        for level in range(1, h + 1):
            if (j >> (h - level)) & 1:
                total += self.levels[level - 1][(j >> (h - level)) - 1]
        return float(total)


def build_private_tree(
    data: Dataset,
    budget: PrivacyBudget,
    beta_hat,
    p_hat: float,
    h: int,
    c_z: float,
    seed=None,
    server: int = 0,
    noise_multiplier: float = 1.0,
) -> HazardTree:
    c = truncation_constant(beta_hat, p_hat, c_z)
    sigma = noise_multiplier * breslow_node_sigma(c, data.n, budget, h)
    levels = tree_levels(breslow_increments(data, beta_hat, c, h))
    rng = as_generator(seed)
    noised = [level + sigma * rng.standard_normal(level.size) for level in levels]
    return HazardTree(h, noised, sigma, c, server)


@dataclass
class HazardEstimate:
    trees: list
    weights: np.ndarray
    transcript: Transcript = field(default=None, repr=False)

    @property
    def depth(self) -> int:
        return self.trees[0].depth

    def cumulative_hazard(self, t):
        t = np.asarray(t, dtype=float)
        if np.any((t < 0) | (t > 1)):
            raise ValueError("query times must lie in [0, 1]")
        h = self.depth
        js = np.minimum(np.floor(t * 2**h).astype(np.int64), 2**h)
        out = np.array(
            [sum(w * tree.prefix(int(j)) for w, tree in zip(self.weights, self.trees)) for j in js.ravel()]
        ).reshape(js.shape)
        return float(out) if out.ndim == 0 else out

    def survival(self, t):
        return survival_from_hazard(self.cumulative_hazard(t))

    def grid(self) -> np.ndarray:
        return np.arange(2**self.depth + 1) / 2**self.depth

    def write_csv(self, path) -> None:
        grid = self.grid()
        hazard = self.cumulative_hazard(grid)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "cumulative_hazard", "survival"])
            for t, lam in zip(grid, hazard):
                writer.writerow([repr(float(t)), repr(float(lam)), repr(float(survival_from_hazard(lam)))])


def survival_from_hazard(lam):
    """``exp(-Lambda)`` clamped to [0, 1]; noise can push Lambda below 0."""
    if np.ndim(lam):
        return np.exp(-np.maximum(np.asarray(lam, dtype=float), 0.0))
    return math.exp(-max(float(lam), 0.0))


def query_hazard(estimate: HazardEstimate, t: float) -> float:
    return estimate.cumulative_hazard(t)


def survival_estimate(estimate: HazardEstimate, t: float) -> float:
    return estimate.survival(t)


def run_fdp_breslow(
    datasets,
    budgets,
    beta_hat,
    p_hat: float,
    c_z: float = 1.0,
    seed=None,
    weight_mode: str = "hazard-weights",
    noise_multiplier: float = 1.0,
    depth: int | None = None,
) -> HazardEstimate:
    """One-shot federated release of per-server trees and their weighted combination."""
    d = datasets[0].dimension
    config = FederationConfig(tuple(x.n for x in datasets), tuple(budgets), 1, d)
    h = depth or tree_depth(config)
    for b in budgets:
        if not 0 < b.delta < 1:
            raise ValueError("tree noise needs 0 < delta < 1")
    trees = {}

    def release(server, data, state, k, rng):
        tree = build_private_tree(
            data, server.budget, beta_hat, p_hat, h, c_z, rng, server.id, noise_multiplier
        )
        trees[server.id] = tree
        return Message(k, server.id, "tree", list(tree.levels), tree.sigma)

    transcript = run_rounds(config, make_servers(config, datasets), release, seed, batched=False)
    weights = effective_weights(config, weight_mode)
    return HazardEstimate([trees[s] for s in range(config.n_servers)], weights, transcript)


def release_at_risk(datasets, budgets, seed=None, noise_multiplier: float = 1.0) -> Transcript:
    """Each server releases its noised fraction of records with ``T >= 1``."""
    config = FederationConfig(tuple(x.n for x in datasets), tuple(budgets), 1, datasets[0].dimension)

    def release(server, data, state, k, rng):
        sigma = noise_multiplier * at_risk_sigma(data.n, server.budget)
        p = float(np.mean(data.time >= 1.0)) + sigma * rng.standard_normal()
        return Message(k, server.id, "scalar", p, sigma)

    return run_rounds(config, make_servers(config, datasets), release, seed, batched=False)


def estimate_at_risk_probability(datasets, budgets, seed=None, noise_multiplier: float = 1.0) -> float:
    """Sample-size weighted average of per-server private at-risk fractions."""
    transcript = release_at_risk(datasets, budgets, seed, noise_multiplier)
    sizes = np.array([x.n for x in datasets], dtype=float)
    p = np.array([m.payload for m in transcript.messages])
    return float(sizes @ p / sizes.sum())


class PrivateBreslow(BaseEstimator):
    """Private baseline cumulative hazard for a fitted Cox model.

    ``coef`` and ``at_risk_probability`` passed to :meth:`fit` must come from
    data independent of ``X, y`` (e.g. :class:`PrivateCoxPH` and
    :class:`PrivateAtRiskProbability` fitted on other splits).
    """

    def __init__(
        self,
        epsilon=1.0,
        delta=1e-3,
        c_z=1.0,
        weight_mode="hazard-weights",
        noise_multiplier=1.0,
        depth=None,
        random_state=None,
    ):
        self.epsilon = epsilon
        self.delta = delta
        self.c_z = c_z
        self.weight_mode = weight_mode
        self.noise_multiplier = noise_multiplier
        self.depth = depth
        self.random_state = random_state

    def fit(self, X, y, groups=None, coef=None, at_risk_probability=None):
        if at_risk_probability is None:
            raise ValueError("an independent at_risk_probability estimate is required")
        data = check_survival_data(X, y)
        coef = np.zeros(data.dimension) if coef is None else np.asarray(coef, dtype=float)
        datasets, labels = split_groups(data, groups)
        budgets = per_server_budgets(self.epsilon, self.delta, len(datasets))
        p_hat = clip_probability(at_risk_probability, data.n)
        self.estimate_ = run_fdp_breslow(
            datasets, budgets, coef, p_hat, self.c_z, self.random_state,
            self.weight_mode, self.noise_multiplier, self.depth,
        )
        self.coef_ = coef
        self.depth_ = self.estimate_.depth
        self.truncation_ = [tree.c for tree in self.estimate_.trees]
        self.server_labels_ = labels
        self.n_features_in_ = data.dimension
        return self

    def cumulative_hazard(self, times):
        check_is_fitted(self, "estimate_")
        return self.estimate_.cumulative_hazard(times)

    def survival_function(self, times):
        check_is_fitted(self, "estimate_")
        return self.estimate_.survival(times)

    def predict_survival_function(self, X, times):
        """``exp(-Lambda(t) exp(x'coef))`` for each row of ``X``; shape (n, len(times))."""
        check_is_fitted(self, "estimate_")
        X = check_array(X, dtype=float)
        lam = np.atleast_1d(self.estimate_.cumulative_hazard(np.atleast_1d(times)))
        risk = np.exp(X @ self.coef_)
        return np.clip(np.exp(-np.outer(risk, lam)), 0.0, 1.0)


class PrivateAtRiskProbability(BaseEstimator):
    """Private estimate of ``P(T >= 1)``; groups in :meth:`fit` are servers."""

    def __init__(self, epsilon=1.0, delta=1e-3, noise_multiplier=1.0, random_state=None):
        self.epsilon = epsilon
        self.delta = delta
        self.noise_multiplier = noise_multiplier
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        data = check_survival_data(X, y)
        datasets, _ = split_groups(data, groups)
        budgets = per_server_budgets(self.epsilon, self.delta, len(datasets))
        self.probability_ = estimate_at_risk_probability(
            datasets, budgets, self.random_state, self.noise_multiplier
        )
        return self
