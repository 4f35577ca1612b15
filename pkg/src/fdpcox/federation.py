"""Single-process simulation of servers exchanging privatised messages.

Servers keep their raw :class:`~fdpcox.survival.Dataset` private.  Each round,
every server sees only its own batch and the broadcast state built from earlier
messages, and must return a :class:`Message` whose payload is a noised vector,
scalar, or list of tree levels.  Anything else is rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._random import rng_stream
from .privacy import PrivacyBudget
from .survival import Dataset, SurvivalRecord

MESSAGE_KINDS = ("vector", "scalar", "tree")


class IsolationError(RuntimeError):
    """A server tried to release something outside the message schema."""


@dataclass(frozen=True)
class FederationConfig:
    """Per-server sample sizes and budgets, number of rounds and dimension."""

    sizes: tuple
    budgets: tuple
    rounds: int = 1
    dimension: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "budgets", tuple(self.budgets))
        if len(self.sizes) != len(self.budgets) or not self.sizes:
            raise ValueError("need one budget per server and at least one server")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        if min(self.sizes) < 1:
            raise ValueError("every server needs at least one record")

    @classmethod
    def homogeneous(cls, n_servers, n, epsilon, delta, rounds=1, dimension=1):
        budget = PrivacyBudget(epsilon, delta)
        return cls((n,) * n_servers, (budget,) * n_servers, rounds, dimension)

    @property
    def n_servers(self) -> int:
        return len(self.sizes)

    def batch_sizes(self) -> tuple:
        return tuple(n // self.rounds for n in self.sizes)

    def check_batched(self):
        if min(self.batch_sizes()) < 1:
            raise ValueError(
                f"floor(n_s / K) must be at least 1; sizes={self.sizes}, K={self.rounds}"
            )

    def to_dict(self):
        return {
            "sizes": list(self.sizes),
            "budgets": [[b.epsilon, b.delta] for b in self.budgets],
            "rounds": self.rounds,
            "dimension": self.dimension,
        }


@dataclass
class Server:
    id: int
    data: Dataset
    budget: PrivacyBudget
    rounds: int = 1

    @property
    def batch_size(self) -> int:
        return self.data.n // self.rounds

    def batch_ranges(self) -> list[range]:
        b = self.batch_size
        return [range(k * b, (k + 1) * b) for k in range(self.rounds)]

    def batch(self, k: int) -> Dataset:
        b = self.batch_size
        if b < 1:
            raise ValueError(f"server {self.id}: empty batch (n={self.data.n}, K={self.rounds})")
        return self.data.subset(slice(k * b, (k + 1) * b))


def make_servers(config: FederationConfig, datasets: Sequence[Dataset]) -> list[Server]:
    if len(datasets) != config.n_servers:
        raise ValueError("need one dataset per server")
    servers = []
    for s, (data, n, budget) in enumerate(zip(datasets, config.sizes, config.budgets)):
        if data.n != n:
            raise ValueError(f"server {s}: config says n={n} but dataset has {data.n} records")
        if data.dimension != config.dimension:
            raise ValueError(f"server {s}: dimension {data.dimension} != {config.dimension}")
        servers.append(Server(s, data, budget, config.rounds))
    return servers


def effective_weights(config: FederationConfig, mode: str = "beta-weights", sizes=None) -> np.ndarray:
    """Aggregation weights proportional to each server's effective sample size.

    ``beta-weights`` use ``min(b, b^2 eps^2 / d)`` with ``b`` the batch size (or
    ``sizes`` if given); ``hazard-weights`` use ``min(n, n^2 eps^2)``;
    ``hazard-weights-literal`` reuses the batched, dimension-normalised form.
    """
    eps = np.array([b.epsilon for b in config.budgets])
    if mode == "beta-weights" or mode == "hazard-weights-literal":
        b = np.array(config.batch_sizes() if sizes is None else sizes, dtype=float)
        eff = np.minimum(b, b**2 * eps**2 / config.dimension)
    elif mode == "hazard-weights":
        n = np.array(config.sizes if sizes is None else sizes, dtype=float)
        eff = np.minimum(n, n**2 * eps**2)
    else:
        raise ValueError(f"unknown weight mode {mode!r}")
    total = eff.sum()
    if total <= 0:
        raise ValueError("all effective sample sizes are zero")
    return eff / total


@dataclass(frozen=True)
class Message:
    round: int
    server: int
    kind: str
    payload: object
    sigma: float

    def to_json(self) -> str:
        if self.kind == "tree":
            payload = [np.asarray(level).tolist() for level in self.payload]
        elif self.kind == "vector":
            payload = np.asarray(self.payload).tolist()
        else:
            payload = float(self.payload)
        return json.dumps(
            {"round": self.round, "server": self.server, "kind": self.kind, "payload": payload, "sigma": self.sigma}
        )


def _is_float_array(x, ndim) -> bool:
    return isinstance(x, np.ndarray) and x.ndim == ndim and x.dtype.kind == "f"


def validate_message(msg) -> Message:
    """Schema check applied to every released message."""
    if not isinstance(msg, Message):
        raise IsolationError(f"round function returned {type(msg).__name__}, expected Message")
    if msg.kind not in MESSAGE_KINDS:
        raise IsolationError(f"unknown message kind {msg.kind!r}")
    p = msg.payload
    if isinstance(p, (Dataset, SurvivalRecord)):
        raise IsolationError("raw records cannot leave a server")
    if msg.kind == "vector":
        ok = _is_float_array(p, 1)
    elif msg.kind == "scalar":
        ok = isinstance(p, (float, np.floating)) and not isinstance(p, bool)
    else:
        ok = isinstance(p, (list, tuple)) and all(_is_float_array(level, 1) for level in p)
    if not ok:
        raise IsolationError(f"payload of type {type(p).__name__} does not match kind {msg.kind!r}")
    if not (isinstance(msg.sigma, (float, int)) and msg.sigma >= 0 and math.isfinite(msg.sigma)):
        raise IsolationError("every message must record a finite noise level")
    return msg


@dataclass
class Transcript:
    messages: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def sigmas(self) -> list[float]:
        return [m.sigma for m in self.messages]

    def round_messages(self, k: int) -> list[Message]:
        return [m for m in self.messages if m.round == k]

    def to_jsonl(self) -> str:
        return "".join(m.to_json() + "\n" for m in self.messages)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())


RoundFn = Callable[[Server, Dataset, object, int, np.random.Generator], Message]


def run_rounds(
    config: FederationConfig,
    servers: Sequence[Server],
    round_fn: RoundFn,
    seed,
    initial_state=None,
    update_fn: Callable[[object, list], object] | None = None,
    batched: bool = True,
) -> Transcript:
    """Run ``config.rounds`` rounds of ``round_fn`` across ``servers``.

    ``round_fn(server, data, state, k, rng)`` receives the server's k-th batch
    (or its full data when ``batched`` is false), the current broadcast state
    and a private noise stream.  After each round ``update_fn(state, messages)``
    produces the next broadcast state.  Servers are processed in id order.
    """
    if batched:
        config.check_batched()
    transcript = Transcript(states=[initial_state])
    state = initial_state
    for k in range(config.rounds):
        released = []
        for server in sorted(servers, key=lambda s: s.id):
            data = server.batch(k) if batched else server.data
            rng = rng_stream(seed, "noise", k, server.id)
            msg = validate_message(round_fn(server, data, state, k, rng))
            if msg.round != k or msg.server != server.id:
                raise IsolationError("message header does not match the releasing server and round")
            released.append(msg)
        transcript.messages.extend(released)
        if update_fn is not None:
            state = update_fn(state, released)
        transcript.states.append(state)
    return transcript
