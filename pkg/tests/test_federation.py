import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdpcox.datagen import CoxModelSpec, simulate
from fdpcox.federation import (
    FederationConfig,
    IsolationError,
    Message,
    Server,
    effective_weights,
    make_servers,
    run_rounds,
    validate_message,
)
from fdpcox.privacy import PrivacyBudget
from fdpcox.survival import SurvivalRecord


def _config(sizes, eps=(1.0,), rounds=1, d=3):
    eps = eps * len(sizes) if len(eps) == 1 else eps
    return FederationConfig(tuple(sizes), tuple(PrivacyBudget(e, 1e-3) for e in eps), rounds, d)


def test_config_validation():
    with pytest.raises(ValueError):
        FederationConfig((10,), (), 1, 1)
    with pytest.raises(ValueError):
        FederationConfig((0,), (PrivacyBudget(1, 0.1),), 1, 1)
    with pytest.raises(ValueError):
        _config((5,), rounds=6).check_batched()


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(1, 40))
def test_batches_partition_prefix(n, k):
    data = simulate(CoxModelSpec.paper_default(), n, 0)
    server = Server(0, data, PrivacyBudget(1.0, 0.1), k)
    ranges = server.batch_ranges()
    seen = set()
    for r in ranges:
        assert len(r) == n // k
        assert seen.isdisjoint(r)
        seen.update(r)
    assert seen == set(range(k * (n // k)))


def test_make_servers_checks_sizes():
    data = simulate(CoxModelSpec.paper_default(), 10, 0)
    with pytest.raises(ValueError):
        make_servers(_config((11,)), [data])


def test_weights_homogeneous_are_uniform():
    w = effective_weights(_config((100, 100, 100), rounds=4), "beta-weights")
    np.testing.assert_allclose(w, [1 / 3] * 3)


def test_weights_values():
    cfg = _config((100, 400), eps=(0.05, 1.0), rounds=1, d=2)
    # min(100, 100^2 0.0025 / 2) = 12.5 and min(400, 400^2 / 2) = 400
    np.testing.assert_allclose(effective_weights(cfg, "beta-weights"), [12.5 / 412.5, 400 / 412.5])
    # min(100, 25) = 25 and 400
    np.testing.assert_allclose(effective_weights(cfg, "hazard-weights"), [25 / 425, 400 / 425])
    with pytest.raises(ValueError):
        effective_weights(cfg, "equal")


def test_validate_message_rejects_raw_records():
    rec = SurvivalRecord(0.5, 1, [0.1])
    with pytest.raises(IsolationError):
        validate_message(Message(0, 0, "vector", rec, 1.0))
    with pytest.raises(IsolationError):
        validate_message(Message(0, 0, "vector", [0.1, 0.2], 1.0))
    with pytest.raises(IsolationError):
        validate_message(Message(0, 0, "scalar", 0.2, float("nan")))
    with pytest.raises(IsolationError):
        validate_message(Message(0, 0, "matrix", np.zeros(2), 1.0))
    with pytest.raises(IsolationError):
        validate_message("hello")


def test_run_rounds_wiring_and_determinism():
    cfg = _config((20, 30), rounds=2, d=1)
    datasets = [simulate(CoxModelSpec((0.3,)), n, 1, s) for s, n in enumerate(cfg.sizes)]

    def release(server, data, state, k, rng):
        assert data.n == server.batch_size
        return Message(k, server.id, "scalar", float(data.time.mean() + rng.standard_normal()), 1.0)

    def update(state, msgs):
        return state + sum(m.payload for m in msgs)

    a = run_rounds(cfg, make_servers(cfg, datasets), release, 5, 0.0, update)
    b = run_rounds(cfg, make_servers(cfg, datasets), release, 5, 0.0, update)
    assert a.to_jsonl() == b.to_jsonl()
    assert len(a) == 4 and len(a.states) == 3
    assert [m.server for m in a.round_messages(1)] == [0, 1]
    assert json.loads(a.to_jsonl().splitlines()[0])["kind"] == "scalar"


def test_run_rounds_rejects_spoofed_header():
    cfg = _config((10,), rounds=1, d=1)
    data = [simulate(CoxModelSpec((0.3,)), 10, 1)]

    def spoof(server, data, state, k, rng):
        return Message(k, server.id + 1, "scalar", 0.0, 1.0)

    with pytest.raises(IsolationError):
        run_rounds(cfg, make_servers(cfg, data), spoof, 0)
