"""Simulated distributed localization: per-node gradient updates over a message-passing harness.

The harness runs synchronous rounds. In the deliver phase every agent posts its
estimate to the mailbox of each constraint co-member; in the compute phase every
free agent reads only its own mailbox and steps. Anchors never move.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, StaleMailboxError
from .rigidity import assemble_rigidity_matrix, information_matrix, partition

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_ROUNDS = 100


def matrix_flow_step(p_f, D_ff, D_fa, p_a, h):
    """One explicit Euler step of p_f' = -D_ff p_f - D_fa p_a."""
    if h <= 0:
        raise ValueError("step size must be positive")
    return p_f + h * (-D_ff @ p_f - D_fa @ p_a)


def default_step(D_ff):
    """1 / (2 lambda_max(D_ff)), well inside the 2 / lambda_max stability limit."""
    lam_max = float(np.linalg.eigvalsh(D_ff)[-1])
    return 1.0 / (2.0 * lam_max)


@dataclass(eq=False)
class NodeAgent:
    """One node of the simulated network.

    ``centered`` holds the displacement constraints whose centre is this node,
    ``member`` those in which it is a neighbour, as (constraint, slot) pairs.
    """

    node: int
    is_anchor: bool
    estimate: np.ndarray
    centered: list = field(default_factory=list)
    member: list = field(default_factory=list)
    mailbox: dict = field(default_factory=dict)
    reads: set = field(default_factory=set)

    def __post_init__(self):
        self.estimate = np.array(self.estimate, dtype=float)
        self._compile()

    def _compile(self):
        peers = set()
        for dc in self.centered:
            peers.update(dc.members)
        for dc, _ in self.member:
            peers.update(dc.members)
        peers.discard(self.node)
        self.peers = tuple(sorted(peers))
        slot = {j: m + 1 for m, j in enumerate(self.peers)}
        slot[self.node] = 0
        cons = list(self.centered) + [dc for dc, _ in self.member]
        if not cons:
            self._center = self._nbrs = self._mu = self._weight = None
            return
        k = max(len(dc.neighbors) for dc in cons)
        self._center = np.array([slot[dc.center] for dc in cons])
        self._nbrs = np.zeros((len(cons), k), dtype=int)
        self._mu = np.zeros((len(cons), k))
        for r, dc in enumerate(cons):
            self._nbrs[r, : len(dc.neighbors)] = [slot[j] for j in dc.neighbors]
            self._mu[r, : len(dc.neighbors)] = dc.mu
        # M uses (sum mu) for constraints centred here; M-bar uses -mu_ji where i is neighbour slot
        self._weight = np.array([dc.mu.sum() for dc in self.centered]
                                + [-dc.mu[s] for dc, s in self.member])

    @property
    def co_members(self):
        return set(self.peers)

    def receive(self, sender, estimate):
        self.mailbox[sender] = np.array(estimate, dtype=float)

    def increment(self):
        """Sum of M over centred constraints plus M-bar over neighbour constraints."""
        if self.is_anchor or self._weight is None:
            return np.zeros_like(self.estimate)
        missing = [j for j in self.peers if j not in self.mailbox]
        if missing:
            raise StaleMailboxError(f"node {self.node} has no estimate from {missing}")
        self.reads.update(self.peers)
        X = np.vstack([self.estimate[None]] + [self.mailbox[j][None] for j in self.peers])
        resid = np.einsum("ck,ckd->cd", self._mu, X[self._nbrs]) - self._mu.sum(axis=1)[:, None] * X[self._center]
        return self._weight @ resid

    def clear(self):
        self.mailbox = {}


def per_node_update(agent, neighbor_estimates):
    """Increment of ``agent`` given a mapping node -> estimate for its co-members."""
    agent.clear()
    for j, p in neighbor_estimates.items():
        agent.receive(j, p)
    return agent.increment()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Estimates per round. ``estimates`` is (T, n_f, 3); ``errors`` (T, n_f) or None."""

    times: np.ndarray
    estimates: np.ndarray
    errors: np.ndarray | None
    stop_reason: str
    h: float
    free_ids: tuple = ()

    @property
    def rounds(self):
        return len(self.times) - 1

    @property
    def final(self):
        return self.estimates[-1] if len(self.estimates) else np.zeros((0, 3))

    def total_error(self):
        if self.errors is None:
            return None
        return np.sqrt((self.errors ** 2).sum(axis=1))


class ProtocolNetwork:
    """Agents and harness for one constraint set.

    Args:
        constraints: ConstraintSet
        anchor_positions: (n_a, d) array
        n: total node count
        n_anchors: anchor count
    """

    def __init__(self, constraints, anchor_positions, n, n_anchors):
        self.constraints = constraints
        self.n, self.n_anchors = n, n_anchors
        pa = np.asarray(anchor_positions, dtype=float)
        if pa.shape[1] == 2:
            pa = np.hstack([pa, np.zeros((len(pa), 1))])
        self.anchor_positions = pa
        self.R = assemble_rigidity_matrix(constraints, pa, n, n_anchors)
        D = information_matrix(self.R)
        _, _, self.D_fa, self.D_ff = partition(D, n_anchors)
        self.D = D
        centered = {i: [] for i in range(n)}
        member = {i: [] for i in range(n)}
        for dc in constraints.displacements:
            centered[dc.center].append(dc)
            for s, j in enumerate(dc.neighbors):
                member[j].append((dc, s))
        self.agents = [
            NodeAgent(i, i < n_anchors, pa[i] if i < n_anchors else np.zeros(3), centered[i], member[i])
            for i in range(n)
        ]

    @property
    def free_ids(self):
        return tuple(range(self.n_anchors, self.n))

    def set_estimates(self, free):
        free = np.asarray(free, dtype=float).reshape(-1, 3)
        for i, p in zip(self.free_ids, free):
            self.agents[i].estimate = p.copy()

    def estimates(self):
        return np.array([self.agents[i].estimate for i in self.free_ids]).reshape(-1, 3)

    def deliver(self):
        for agent in self.agents:
            agent.clear()
        for agent in self.agents:
            for j in agent.peers:
                self.agents[j].receive(agent.node, agent.estimate)

    def compute(self):
        return np.array([self.agents[i].increment() for i in self.free_ids]).reshape(-1, 3)

    def round_increments(self):
        """Deliver then compute; returns the (n_f, 3) stacked per-node increments."""
        self.deliver()
        return self.compute()

    def matrix_rhs(self):
        return -self.D_ff @ self.estimates().ravel() - self.D_fa @ self.anchor_positions.ravel()

    def default_step(self):
        return default_step(self.D_ff) if self.D_ff.size else 1.0

    def check_locality(self):
        """Every agent read exactly its co-member set (free agents) or nothing (anchors)."""
        for agent in self.agents:
            expected = set() if agent.is_anchor or agent._weight is None else agent.co_members
            if agent.reads and agent.reads != expected:
                return False
        return True


def random_initialization(anchor_positions, n_free, seed):
    """Uniform draws in the anchor bounding box scaled 2x about its centre."""
    pa = np.asarray(anchor_positions, dtype=float)
    if pa.shape[1] == 2:
        pa = np.hstack([pa, np.zeros((len(pa), 1))])
    lo, hi = pa.min(axis=0), pa.max(axis=0)
    mid, half = 0.5 * (lo + hi), (hi - lo)
    rng = np.random.default_rng(seed)
    return rng.uniform(mid - half, mid + half, size=(n_free, 3))


def run_protocol(network, init=None, seed=0, h=None, max_iters=100000, tol=1e-9, truth=None,
                 stop="increment", schedule="synchronous"):
    """Iterate synchronous rounds of the distributed protocol.

    Args:
        network: ProtocolNetwork
        init: (n_f, 3) initial free estimates; drawn from ``seed`` when None
        h: step size; defaults to 1 / (2 lambda_max(D_ff))
        tol: threshold of the stopping criterion
        truth: optional (n_f, d) true free positions for error reporting
        stop: "increment" (max per-node step length < tol, needs no ground
            truth) or "true_error" (max per-node error < tol)
    """
    if schedule != "synchronous":
        raise ValueError("only the synchronous schedule is supported")
    if stop not in ("increment", "true_error"):
        raise ValueError("stop must be 'increment' or 'true_error'")
    nf = network.n - network.n_anchors
    if truth is not None:
        truth = np.asarray(truth, dtype=float).reshape(nf, -1)
        if truth.shape[1] == 2:
            truth = np.hstack([truth, np.zeros((nf, 1))])
    elif stop == "true_error":
        raise ValueError("the true-error criterion needs ground truth")
    if nf == 0:
        return Trajectory(np.zeros(0), np.zeros((0, 0, 3)), None if truth is None else np.zeros((0, 0)),
                          "no_free_nodes", 0.0, ())
    h = network.default_step() if h is None else float(h)
    if h <= 0:
        raise ValueError("step size must be positive")
    x = random_initialization(network.anchor_positions, nf, seed) if init is None else \
        np.asarray(init, dtype=float).reshape(nf, 3).copy()
    network.set_estimates(x)

    def node_errors(est):
        return None if truth is None else np.linalg.norm(est - truth, axis=1)

    samples, errs = [x.copy()], [node_errors(x)]
    reason, above, first_inc = "max_iters", 0, None
    # overflow is expected on a diverging run and is reported as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iters):
            inc = network.round_increments()
            step_len = h * np.linalg.norm(inc, axis=1).max()
            first_inc = np.linalg.norm(inc) if first_inc is None else first_inc
            if stop == "increment" and step_len < tol:
                reason = "increment"
                break
            if stop == "true_error" and errs[-1].max() < tol:
                reason = "true_error"
                break
            if not np.all(np.isfinite(inc)):
                raise DivergenceError("estimates became non-finite", suggested_step=_suggested(network))
            x = x + h * inc
            network.set_estimates(x)
            samples.append(x.copy())
            errs.append(node_errors(x))
            if _diverging(errs, np.linalg.norm(inc), first_inc):
                above += 1
                if above >= DIVERGENCE_ROUNDS:
                    raise DivergenceError(
                        f"error exceeded {DIVERGENCE_FACTOR:g}x its initial value for {DIVERGENCE_ROUNDS} rounds "
                        f"with h={h:.3e}", suggested_step=_suggested(network))
            else:
                above = 0
    times = h * np.arange(len(samples))
    return Trajectory(times, np.array(samples), None if truth is None else np.array(errs), reason, h,
                      network.free_ids)


def _suggested(network):
    return 1.0 / float(np.linalg.eigvalsh(network.D_ff)[-1])


def _diverging(errs, inc_norm, first_inc):
    # without ground truth the increment norm stands in for the error
    if errs[0] is not None:
        return np.linalg.norm(errs[-1]) > DIVERGENCE_FACTOR * max(np.linalg.norm(errs[0]), np.finfo(float).tiny)
    return inc_norm > DIVERGENCE_FACTOR * max(first_inc, np.finfo(float).tiny)


def run_matrix_flow(D_ff, D_fa, p_a, init, h, max_iters=100000, tol=1e-9, truth=None):
    """Matrix-form Euler iteration, used for perturbed information matrices."""
    D_ff, D_fa = np.asarray(D_ff, dtype=float), np.asarray(D_fa, dtype=float)
    p_a = np.ravel(p_a)
    x = np.ravel(init).astype(float)
    nf = len(x) // 3
    truth = None if truth is None else np.ravel(truth)

    def node_errors(v):
        return None if truth is None else np.linalg.norm((v - truth).reshape(nf, 3), axis=1)

    samples, errs = [x.reshape(nf, 3).copy()], [node_errors(x)]
    reason = "max_iters"
    for _ in range(max_iters):
        inc = -D_ff @ x - D_fa @ p_a
        if h * np.linalg.norm(inc.reshape(nf, 3), axis=1).max(initial=0.0) < tol:
            reason = "increment"
            break
        x = x + h * inc
        samples.append(x.reshape(nf, 3).copy())
        errs.append(node_errors(x))
    times = h * np.arange(len(samples))
    return Trajectory(times, np.array(samples), None if truth is None else np.array(errs), reason, h)


def exponential_rate_estimate(trajectory, floor=1e-12):
    """Least-squares slope of log total error per round, fitted on the tail half.

    Returns None when fewer than 10 samples carry an error above ``floor``
    times the initial error (already converged or no ground truth).
    """
    err = trajectory.total_error()
    if err is None or len(err) == 0 or err[0] <= 0:
        return None
    keep = np.flatnonzero(err > floor * err[0])
    if len(keep) < 10:
        return None
    tail = keep[len(keep) // 2:]
    if len(tail) < 5:
        return None
    slope = np.polyfit(tail.astype(float), np.log(err[tail]), 1)[0]
    return float(slope)


def predicted_rate(D_ff, h):
    """Per-round asymptotic log-error slope ln(1 - h lambda_min) of the Euler flow and -h lambda_min."""
    lam_min = float(np.linalg.eigvalsh(D_ff)[0])
    return math.log(1.0 - h * lam_min), -h * lam_min
