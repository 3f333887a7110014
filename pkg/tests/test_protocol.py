import math

import numpy as np
import pytest

from adrigidity import scenario as S
from adrigidity.errors import DivergenceError, StaleMailboxError
from adrigidity.localize import direct_localize
from adrigidity.protocol import (
    ProtocolNetwork,
    default_step,
    exponential_rate_estimate,
    matrix_flow_step,
    per_node_update,
    predicted_rate,
    random_initialization,
    run_matrix_flow,
    run_protocol,
)


def _network(sc):
    return ProtocolNetwork(sc.constraint_set(), sc.anchor_positions, sc.n, sc.n_anchors)


@pytest.fixture(scope="module")
def cube_sc():
    return S.cube()


@pytest.fixture()
def cube_net(cube_sc):
    return _network(cube_sc)


def test_truth_is_fixed_point(cube_sc, cube_net):
    truth = cube_sc.true_free_positions()
    cube_net.set_estimates(truth)
    assert np.max(np.abs(cube_net.round_increments())) <= 1e-9
    traj = run_protocol(cube_net, init=truth, truth=truth, max_iters=5)
    assert traj.rounds == 0 and traj.stop_reason == "increment"


def test_per_node_increments_equal_matrix_flow(cube_sc, cube_net):
    x = random_initialization(cube_sc.anchor_positions, 4, seed=3)
    cube_net.set_estimates(x)
    inc = cube_net.round_increments().ravel()
    rhs = cube_net.matrix_rhs()
    assert np.linalg.norm(inc - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 1.0)
    h = cube_net.default_step()
    step = matrix_flow_step(x.ravel(), cube_net.D_ff, cube_net.D_fa, cube_net.anchor_positions.ravel(), h)
    assert np.allclose(x.ravel() + h * inc, step, atol=1e-10)


def test_cost_decreases(cube_sc, cube_net):
    D = cube_net.D
    pa = cube_net.anchor_positions.ravel()
    traj = run_protocol(cube_net, seed=1, max_iters=50, tol=0.0)
    cost = [np.concatenate([pa, e.ravel()]) @ D @ np.concatenate([pa, e.ravel()]) for e in traj.estimates]
    assert np.all(np.diff(cost) <= 1e-9 * cost[0])


def test_convergence_to_truth(cube_sc, cube_net):
    truth = cube_sc.true_free_positions()
    traj = run_protocol(cube_net, seed=0, truth=truth, tol=1e-10)
    assert traj.stop_reason == "increment"
    assert traj.errors[-1].max() < 1e-6
    assert traj.estimates.shape[1:] == (4, 3) and len(traj.times) == traj.rounds + 1
    assert cube_net.check_locality()


def test_true_error_stopping(cube_sc, cube_net):
    truth = cube_sc.true_free_positions()
    traj = run_protocol(cube_net, seed=0, truth=truth, tol=1e-6, stop="true_error")
    assert traj.stop_reason == "true_error" and traj.errors[-1].max() < 1e-6
    with pytest.raises(ValueError):
        run_protocol(cube_net, stop="true_error")


def test_anchors_never_move(cube_sc, cube_net):
    before = [a.estimate.copy() for a in cube_net.agents[:4]]
    run_protocol(cube_net, seed=2, max_iters=30)
    for a, b in zip(cube_net.agents[:4], before):
        assert np.array_equal(a.estimate, b)


def test_deterministic(cube_sc):
    a = run_protocol(_network(cube_sc), seed=9, max_iters=40)
    b = run_protocol(_network(cube_sc), seed=9, max_iters=40)
    assert np.array_equal(a.estimates, b.estimates)


def test_stale_mailbox(cube_net):
    agent = cube_net.agents[5]
    agent.clear()
    with pytest.raises(StaleMailboxError):
        agent.increment()
    peers = {j: cube_net.agents[j].estimate for j in agent.peers}
    assert per_node_update(agent, peers).shape == (3,)
    assert agent.reads == agent.co_members


def test_locality_detects_extra_reads(cube_net):
    run_protocol(cube_net, seed=0, max_iters=2)
    assert cube_net.check_locality()
    cube_net.agents[4].reads.add(99)
    assert not cube_net.check_locality()


def test_not_localizable_converges_to_some_solution():
    sc = S.coplanar_anchor_counterexample()
    net = _network(sc)
    traj = run_protocol(net, seed=0, max_iters=200000, tol=1e-11)
    assert traj.stop_reason == "increment"
    x = traj.final.ravel()
    # the limit satisfies the constraints but need not be the truth
    assert np.linalg.norm(net.D_ff @ x + net.D_fa @ net.anchor_positions.ravel()) <= 1e-6


def test_large_step_diverges(cube_net):
    lam_max = np.linalg.eigvalsh(cube_net.D_ff)[-1]
    with pytest.raises(DivergenceError) as info:
        run_protocol(cube_net, seed=0, h=2.5 / lam_max, max_iters=5000)
    assert info.value.suggested_step == pytest.approx(1.0 / lam_max)


def test_step_validation(cube_net):
    with pytest.raises(ValueError):
        run_protocol(cube_net, h=-1.0)
    with pytest.raises(ValueError):
        run_protocol(cube_net, schedule="async")
    with pytest.raises(ValueError):
        matrix_flow_step(np.zeros(3), np.eye(3), np.zeros((3, 3)), np.zeros(3), 0.0)


def test_scalar_rate():
    # D_ff = 0.02 with h = 1: the error shrinks by exactly 0.98 per round
    D_ff, D_fa = 0.02 * np.eye(3), -0.02 * np.eye(3)
    pa = np.array([1.0, 2.0, 3.0])
    traj = run_matrix_flow(D_ff, D_fa, pa, np.zeros(3), 1.0, max_iters=400, tol=0.0, truth=pa)
    assert exponential_rate_estimate(traj) == pytest.approx(math.log(0.98), rel=1e-9)
    assert predicted_rate(D_ff, 1.0)[0] == pytest.approx(math.log(0.98))


def test_cube_rate_close_to_prediction(cube_sc, cube_net):
    truth = cube_sc.true_free_positions()
    traj = run_protocol(cube_net, seed=0, truth=truth, tol=1e-12)
    est = exponential_rate_estimate(traj)
    exact, linear = predicted_rate(cube_net.D_ff, traj.h)
    assert est == pytest.approx(exact, rel=0.05)
    assert abs(est - linear) <= 0.2 * abs(linear)


def test_rate_estimate_none_without_truth(cube_net):
    assert exponential_rate_estimate(run_protocol(cube_net, max_iters=20)) is None


def test_default_step_half_inverse_lambda_max():
    assert default_step(np.diag([1.0, 4.0])) == pytest.approx(0.125)


def test_zero_free_nodes():
    sc = S.cube()
    nodes = tuple(nd.__class__(nd.id, "anchor", nd.position) for nd in sc.nodes)
    allanchor = sc.with_(nodes=nodes)
    net = _network(allanchor)
    traj = run_protocol(net)
    assert traj.stop_reason == "no_free_nodes" and traj.rounds == -1 + len(traj.times)


def test_direct_and_protocol_agree():
    sc = S.planar_chain()
    net = _network(sc)
    traj = run_protocol(net, seed=4, tol=1e-13)
    direct = direct_localize(net.D, net.anchor_positions.ravel(), sc.n_anchors)
    assert np.allclose(traj.final.ravel(), direct, atol=1e-9)


def test_random_initialization_box():
    pa = np.array([(0.0, 0.0), (2.0, 0.0), (0.0, 4.0)])
    x = random_initialization(pa, 500, seed=0)
    assert x.shape == (500, 3)
    assert x[:, 0].min() >= -1.0 and x[:, 0].max() <= 3.0
    assert x[:, 1].min() >= -2.0 and x[:, 1].max() <= 6.0
    assert np.all(x[:, 2] == 0.0)
