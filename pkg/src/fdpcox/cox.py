"""Private Cox regression by noisy projected gradient ascent.

Three variants share one update, ``beta <- Proj(beta + eta * sum_s v_s (score_s + W_s))``:

* :func:`run_fdp_cox` -- each server spends a fresh batch of ``floor(n_s/K)``
  records per round, so each round is separately ``(eps_s, delta_s)``-DP.
* :func:`run_cdp_cox` -- one data holder uses all records every round; the
  K releases are composed in Renyi DP.
* :func:`run_fdp_cox_interactive` -- the federated version of the previous one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_survival_data, per_server_budgets, split_groups
from .federation import FederationConfig, Message, Server, Transcript, effective_weights, make_servers, run_rounds
from .privacy import PrivacyBudget, cdp_cox_sigma, fdp_cox_sigma
from .survival import Dataset, ModelBounds, gradient, partial_log_likelihood, project_ball

ALGORITHMS = ("fdp", "cdp", "interactive")


def default_rounds(total_n: int, d: int, constant: float = 6.0) -> int:
    """``ceil(constant * log(total_n / d^2))``, at least one round."""
    return max(1, math.ceil(constant * math.log(total_n / d**2)))


@dataclass(frozen=True)
class SgdParams:
    rounds: int
    step_size: float = 0.5
    bounds: ModelBounds = field(default_factory=ModelBounds)
    noise_multiplier: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be nonnegative")


@dataclass
class CoxFitResult:
    beta_hat: np.ndarray
    trajectory: np.ndarray  # (K + 1, d)
    sigmas: np.ndarray  # (K, S), noise standard deviation per round and server
    weights: np.ndarray
    noise_multiplier: float
    transcript: Transcript = field(repr=False, default=None)

    def to_dict(self):
        return {
            "beta_hat": self.beta_hat.tolist(),
            "trajectory": self.trajectory.tolist(),
            "sigmas": self.sigmas.tolist(),
            "weights": self.weights.tolist(),
            "noise_multiplier": self.noise_multiplier,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _ascent(config, servers, params, seed, weights, sigma_of, batched) -> CoxFitResult:
    bounds = params.bounds
    d = config.dimension
    sigmas = {s.id: params.noise_multiplier * sigma_of(s) for s in servers}
    weight_of = {s.id: w for s, w in zip(servers, weights)}

    def release(server, data, beta, k, rng):
        noise = sigmas[server.id] * rng.standard_normal(d)
        return Message(k, server.id, "vector", gradient(data, beta) + noise, sigmas[server.id])

    def update(beta, messages):
        step = sum(weight_of[m.server] * m.payload for m in messages)
        return project_ball(beta + params.step_size * step, bounds.c_beta)

    for server in servers:
        server.data.check_bounds(bounds)
    transcript = run_rounds(config, servers, release, seed, np.zeros(d), update, batched=batched)
    trajectory = np.vstack(transcript.states)
    sig = np.array([[m.sigma for m in transcript.round_messages(k)] for k in range(config.rounds)])
    return CoxFitResult(trajectory[-1].copy(), trajectory, sig, weights, params.noise_multiplier, transcript)


def _with_rounds(config: FederationConfig, rounds: int) -> FederationConfig:
    if config.rounds == rounds:
        return config
    return FederationConfig(config.sizes, config.budgets, rounds, config.dimension)


def _servers_for(config, servers):
    return [Server(s.id, s.data, s.budget, config.rounds) for s in servers]


def run_fdp_cox(config: FederationConfig, servers, params: SgdParams, seed=None) -> CoxFitResult:
    """Batched federated private SGD; round k of server s uses records ``[k b_s, (k+1) b_s)``."""
    config = _with_rounds(config, params.rounds)
    config.check_batched()
    servers = _servers_for(config, servers)
    weights = effective_weights(config, "beta-weights")
    return _ascent(
        config,
        servers,
        params,
        seed,
        weights,
        lambda s: fdp_cox_sigma(s.batch_size, s.budget, params.bounds),
        batched=True,
    )


def run_fdp_cox_interactive(config: FederationConfig, servers, params: SgdParams, seed=None) -> CoxFitResult:
    """Every server uses all of its records in every round; noise composed over K rounds."""
    config = _with_rounds(config, params.rounds)
    servers = _servers_for(config, servers)
    for s in servers:
        if not 0 < s.budget.delta < 1:
            raise ValueError("RDP composition needs 0 < delta < 1")
    weights = effective_weights(config, "beta-weights", sizes=config.sizes)
    return _ascent(
        config,
        servers,
        params,
        seed,
        weights,
        lambda s: cdp_cox_sigma(s.data.n, s.budget, params.rounds, params.bounds),
        batched=False,
    )


def run_cdp_cox(data: Dataset, budget: PrivacyBudget, params: SgdParams, seed=None) -> CoxFitResult:
    """Central version: a single data holder, full data every round."""
    if data.n < 1:
        raise ValueError("need at least one record")
    config = FederationConfig((data.n,), (budget,), params.rounds, data.dimension)
    return run_fdp_cox_interactive(config, make_servers(config, [data]), params, seed)


def fit_private_cox(algorithm, datasets, budgets, params: SgdParams, seed=None) -> CoxFitResult:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}")
    if algorithm == "cdp":
        if len(datasets) != 1:
            raise ValueError("the central algorithm takes exactly one dataset")
        return run_cdp_cox(datasets[0], budgets[0], params, seed)
    config = FederationConfig(
        tuple(d.n for d in datasets), tuple(budgets), params.rounds, datasets[0].dimension
    )
    servers = make_servers(config, datasets)
    runner = run_fdp_cox if algorithm == "fdp" else run_fdp_cox_interactive
    return runner(config, servers, params, seed)


class PrivateCoxPH(BaseEstimator):
    """Differentially private Cox proportional-hazards regression.

    Parameters
    ----------
    algorithm : {"cdp", "fdp", "interactive"}
        ``cdp`` fits a single data holder with full-data rounds; ``fdp`` and
        ``interactive`` treat each ``groups`` label in :meth:`fit` as a server.
    epsilon, delta : float or array-like
        Privacy budget, per server when array-like.
    n_rounds : int, optional
        Number of gradient rounds; defaults to
        ``ceil(rounds_constant * log(n_total / d^2))``.
    step_size : float
    c_z, c_beta : float
        Norm bounds on covariate rows and on the coefficient vector.
    noise_multiplier : float
        Scales every noise standard deviation; 0 gives the non-private fit.
    random_state : int, optional
    """

    def __init__(
        self,
        algorithm="cdp",
        epsilon=1.0,
        delta=1e-3,
        n_rounds=None,
        rounds_constant=6.0,
        step_size=0.5,
        c_z=1.0,
        c_beta=1.0,
        noise_multiplier=1.0,
        random_state=None,
    ):
        self.algorithm = algorithm
        self.epsilon = epsilon
        self.delta = delta
        self.n_rounds = n_rounds
        self.rounds_constant = rounds_constant
        self.step_size = step_size
        self.c_z = c_z
        self.c_beta = c_beta
        self.noise_multiplier = noise_multiplier
        self.random_state = random_state

    def fit(self, X, y, groups=None):
        bounds = ModelBounds(self.c_z, self.c_beta)
        data = check_survival_data(X, y, bounds)
        datasets, labels = split_groups(data, groups)
        rounds = self.n_rounds or default_rounds(data.n, data.dimension, self.rounds_constant)
        params = SgdParams(rounds, self.step_size, bounds, self.noise_multiplier)
        budgets = per_server_budgets(self.epsilon, self.delta, len(datasets))
        result = fit_private_cox(self.algorithm, datasets, budgets, params, self.random_state)
        self.coef_ = result.beta_hat
        self.trajectory_ = result.trajectory
        self.noise_sigmas_ = result.sigmas
        self.weights_ = result.weights
        self.transcript_ = result.transcript
        self.server_labels_ = labels
        self.n_iter_ = rounds
        self.n_features_in_ = data.dimension
        self.result_ = result
        return self

    def predict(self, X):
        """Linear predictor ``X @ coef_`` (log relative risk)."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_

    def score(self, X, y):
        """Normalised log partial likelihood at ``coef_``."""
        check_is_fitted(self, "coef_")
        return partial_log_likelihood(check_survival_data(X, y), self.coef_)
