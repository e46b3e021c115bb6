import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnlqr.controllers import OptimalController, make_open_loop_controller
from gnnlqr.gnn import init_gnn
from gnnlqr.filters import default_interval
from gnnlqr.network import CostSpec, DistributedSystem, random_system
from gnnlqr.numerics import PreconditionError, RngStream, l21_norm, sym_eig
from gnnlqr.simulation import (
    Disturbance,
    NotApplicableError,
    TrajectoryRecord,
    classify_stable,
    iss_check,
    rollout,
    rollout_batch,
    stable_mask,
    write_records_csv,
)
from gnnlqr.stability import stability_constant

from oracles import loop_rollout


def scalar_system(a, b=1.0):
    return DistributedSystem(np.zeros((1, 1)), [[a]], [[1.0]], [[b]], [[1.0]])


def record(norms, diverged_at=None):
    return TrajectoryRecord([], [], [], 0.0, list(norms), False, diverged_at)


def test_zero_state_gives_zero_trajectory():
    d = random_system(10, 3, rng=RngStream(0))
    p = init_gnn([1, 4, 1], [2, 0], RngStream(1))
    rec = rollout(d, p, np.zeros((10, 1)), 20)
    assert rec.total_cost == 0.0
    assert all(n == 0.0 for n in rec.state_norms)
    assert rec.stable


def test_scalar_geometric_cost():
    # A = 0.5, B = 0: cost Σ_{t<50} 0.25^t, within 1e-12 of 4/3
    d = scalar_system(0.5, 0.0)
    rec = rollout(d, make_open_loop_controller(), np.ones((1, 1)), 50)
    assert rec.total_cost == pytest.approx(sum(0.25**t for t in range(50)), rel=1e-15)
    assert abs(rec.total_cost - 4.0 / 3.0) < 1e-12


def test_rollout_matches_plain_loop():
    d = random_system(12, 4, rng=RngStream(2))
    p = init_gnn([1, 4, 1], [2, 0], RngStream(3), interval=default_interval([d.support]))
    x0 = RngStream(4).normal((12, 1))
    rec = rollout(d, p, x0, 15)
    ref, states = loop_rollout(d.sys_graph, d.sys_feat, d.ctrl_graph, d.ctrl_feat,
                               lambda t, x: p(x, d.support), x0, 15)
    assert rec.total_cost == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(rec.states[-1], states[-1], atol=1e-12)


def test_weighted_costs():
    d = scalar_system(0.5)
    cost = CostSpec(np.array([[3.0]]), np.array([[2.0]]))
    ctrl = lambda x, s=None: -0.1 * x  # noqa: E731
    rec = rollout(d, ctrl, np.ones((1, 1)), 3, cost)
    xs = [1.0, 0.4, 0.16]
    assert rec.total_cost == pytest.approx(sum(3 * x * x + 2 * 0.01 * x * x for x in xs), rel=1e-14)


def test_batch_matches_single_rollouts():
    d = random_system(8, 3, rng=RngStream(5))
    p = init_gnn([1, 3, 1], [2, 0], RngStream(6))
    xs = RngStream(7).normal((4, 8, 1))
    b = rollout_batch(d, p, xs, 10)
    for i, x in enumerate(xs):
        rec = rollout(d, p, x, 10)
        assert b["step_costs"][i].sum() == pytest.approx(rec.total_cost, rel=1e-13)


def test_optimal_cost_close_to_value_on_fast_system():
    # with a fast-decaying closed loop the T = 50 truncation is invisible
    d = random_system(20, 5, 0.5, 1.0, RngStream(8))
    c = OptimalController(d)
    x0 = RngStream(9).normal((20, 1))
    rec = rollout(d, c, x0, 50)
    assert rec.total_cost == pytest.approx(float(c.value(x0)), rel=1e-2)


def test_divergence_recorded():
    d = scalar_system(1e5, 0.0)
    rec = rollout(d, make_open_loop_controller(), np.ones((1, 1)), 10)
    assert rec.diverged_at == 3
    assert not rec.stable
    assert len(rec.state_norms) == 4


def test_rollout_preconditions():
    d = scalar_system(0.5)
    with pytest.raises(PreconditionError):
        rollout(d, make_open_loop_controller(), np.ones((1, 1)), 0)
    with pytest.raises(PreconditionError):
        rollout(d, make_open_loop_controller(), np.ones((2, 1)), 3)


def test_classification_rules():
    assert classify_stable(record([0.0, 0.0, 0.0]))
    assert not classify_stable(record([0.0, 1.0, 0.0]))
    assert classify_stable(record([1.0, 0.5, 0.25]))
    # the final norm must be strictly smaller
    assert not classify_stable(record([1.0, 0.5, 1.0]))
    # a 10³ excursion is a blow-up even if the state comes back
    assert not classify_stable(record([1.0, 1001.0, 0.1]))
    assert classify_stable(record([1.0, 999.0, 0.1]))
    assert not classify_stable(record([1.0, 0.5], diverged_at=1))


def test_open_loop_decays_for_stable_a():
    d = random_system(20, 5, 0.995, 1.0, RngStream(10))
    rec = rollout(d, make_open_loop_controller(), RngStream(11).normal((20, 1)), 100)
    assert rec.state_norms[-1] < rec.state_norms[0]
    assert rec.stable


def test_open_loop_unstable_for_a_above_one():
    d = random_system(20, 5, 1.01, 1.0, RngStream(12))
    spec = sym_eig(d.sys_graph)
    w, v = spec.eigenvalues, spec.eigenvectors
    top = v[:, [int(np.argmax(np.abs(w)))]]
    rec = rollout(d, make_open_loop_controller(), top, 50)
    assert rec.state_norms[-1] > rec.state_norms[0]
    assert not rec.stable
    # from a random state the growing mode needs a long horizon to dominate
    rec = rollout(d, make_open_loop_controller(), RngStream(13).normal((20, 1)), 1500)
    assert not rec.stable


def test_stable_mask_agrees_with_records():
    d = random_system(10, 3, 1.01, 1.0, RngStream(14))
    xs = RngStream(15).normal((6, 10, 1))
    xs[0] = 0.0
    b = rollout_batch(d, make_open_loop_controller(), xs, 600)
    mask = stable_mask(b)
    for i, x in enumerate(xs):
        assert mask[i] == rollout(d, make_open_loop_controller(), x, 600).stable
    assert mask[0]


def test_disturbance_enters_the_control():
    d = scalar_system(0.0)
    dist = Disturbance.geometric(np.ones((1, 1)), 0.5, 4)
    rec = rollout(d, make_open_loop_controller(), np.zeros((1, 1)), 4, dist=dist)
    np.testing.assert_allclose([s[0, 0] for s in rec.states], [0.0, 1.0, 0.5, 0.25, 0.125])
    assert dist.summable_norm == pytest.approx(1.875)
    with pytest.raises(PreconditionError):
        Disturbance(np.ones((2, 2)))


def small_stable_gnn(d, seed):
    p = init_gnn([1, 4, 1], [2, 0], RngStream(seed), interval=default_interval([d.support]))
    rep = stability_constant(d, p)
    # shrink the output layer until ξ < 1
    scale = min(1.0, 0.5 * (1 - rep.a_term) / max(rep.c_phi * rep.b_term, 1e-12))
    arrays = p.arrays()
    arrays[-1] = arrays[-1] * scale
    return p.with_arrays(arrays)


def test_iss_zero_everything():
    d = random_system(10, 3, 0.9, 1.0, RngStream(16))
    p = small_stable_gnn(d, 17)
    lhs, rhs, ok = iss_check(d, p, np.zeros((10, 1)), Disturbance(np.zeros((20, 10, 1))), 20)
    assert lhs == 0.0 and rhs == 0.0 and ok


def test_iss_no_disturbance_bounded_by_beta0():
    d = random_system(10, 3, 0.9, 1.0, RngStream(18))
    p = small_stable_gnn(d, 19)
    x0 = RngStream(20).normal((10, 1))
    lhs, rhs, ok = iss_check(d, p, x0, Disturbance(np.zeros((30, 10, 1))), 30)
    rep = stability_constant(d, p)
    assert rhs == pytest.approx(l21_norm(x0) / (1 - rep.xi))
    assert ok and lhs <= rhs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_iss_geometric_disturbance(seed):
    d = random_system(8, 3, 0.9, 1.0, RngStream(seed))
    p = small_stable_gnn(d, seed + 1)
    e0 = RngStream(seed, 2).normal((8, 1))
    x0 = RngStream(seed, 3).normal((8, 1))
    _, _, ok = iss_check(d, p, x0, Disturbance.geometric(e0, 0.5, 30), 30)
    assert ok


def test_iss_not_applicable_when_xi_large():
    d = random_system(8, 3, 0.995, 1.0, RngStream(21))
    p = init_gnn([1, 4, 1], [2, 0], RngStream(22))
    arrays = [10.0 * a for a in p.arrays()]
    with pytest.raises(NotApplicableError):
        iss_check(d, p.with_arrays(arrays), np.ones((8, 1)), Disturbance(np.zeros((5, 8, 1))), 5)


def test_record_csv():
    d = scalar_system(0.5)
    rec = rollout(d, make_open_loop_controller(), np.ones((1, 1)), 2)
    lines = rec.to_csv().splitlines()
    assert lines[0] == "t,state_norm,control_norm,step_cost"
    assert lines[1] == "0,1.0,0.0,1.0"
    assert lines[3] == "2,0.25,,"
    buf = io.StringIO()
    write_records_csv([rec, rec], buf, labels=["a", "b"])
    rows = buf.getvalue().splitlines()
    assert len(rows) == 1 + 2 * 3
    assert rows[4].startswith("b,0,")


def test_rollout_is_deterministic():
    d = random_system(10, 3, rng=RngStream(23))
    p = init_gnn([1, 4, 1], [2, 0], RngStream(24))
    x0 = RngStream(25).normal((10, 1))
    a, b = rollout(d, p, x0, 25), rollout(d, p, x0, 25)
    assert a.to_csv() == b.to_csv()


def test_costs_grow_with_horizon():
    d = random_system(10, 3, rng=RngStream(26))
    p = init_gnn([1, 4, 1], [2, 0], RngStream(27))
    x0 = RngStream(28).normal((10, 1))
    totals = [rollout(d, p, x0, t).total_cost for t in (5, 10, 20)]
    assert totals[0] <= totals[1] <= totals[2]
