"""Angle-displacement rigidity matrix, information matrix and localizability analysis.

All analysis happens in 3-D: planar scenarios are embedded with z = 0 so
out-of-plane motions stay representable. A configuration vector is the
row-major flattening of an (n, 3) position array.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .constraints import (
    ConstraintSet,
    DisplacementConstraint,
    angle_constraint,
    enumerate_displacement_tuples,
    mu_from_local_positions,
)
from .core import NetworkGraph, rank_tol
from .errors import (
    DegenerateNeighborhoodError,
    InternalConsistencyError,
    InvalidConstraintError,
)

ANCHOR_BLOCK_TOL = 1e-6


def _embed(P):
    P = np.asarray(P, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 3)
    if P.shape[1] == 2:
        P = np.hstack([P, np.zeros((len(P), 1))])
    return P


@dataclass(frozen=True, eq=False)
class RigidityMatrix:
    """R (m x 3n) with one provenance tag per row.

    Angle rows come first, then three rows (x, y, z) per displacement constraint.
    """

    R: np.ndarray
    provenance: tuple
    n: int
    n_anchors: int
    m_r: int
    m_d: int

    @property
    def shape(self):
        return self.R.shape


def assemble_rigidity_matrix(constraints, known_positions, n, n_anchors):
    """Stack the gradient rows of every angle and displacement residual.

    Args:
        constraints: ConstraintSet
        known_positions: positions (n_anchors, d) available for angle rows
        n: total node count
        n_anchors: leading anchor count; angle constraints may only touch these
    """
    P = _embed(known_positions)
    if len(P) < n_anchors:
        raise ValueError("known_positions must cover every anchor")
    rows, tags = [], []
    for idx, ac in enumerate(constraints.angles):
        if max(ac.a, ac.b, ac.c) >= n_anchors:
            raise InvalidConstraintError(
                f"angle constraint on {ac.triple} references a free node; positions are unknown")
        row = np.zeros(3 * n)
        for node, g in zip((ac.a, ac.b, ac.c), ac.gradient_blocks(P)):
            row[3 * node: 3 * node + 3] += g
        rows.append(row)
        tags.append(("angle", idx, ac.triple))
    eye = np.eye(3)
    for idx, dc in enumerate(constraints.displacements):
        block = np.zeros((3, 3 * n))
        block[:, 3 * dc.center: 3 * dc.center + 3] -= dc.mu.sum() * eye
        for j, mu in zip(dc.neighbors, dc.mu):
            block[:, 3 * j: 3 * j + 3] += mu * eye
        rows.extend(block)
        tags.extend(("displacement", idx, dc.members, axis) for axis in "xyz")
    R = np.array(rows) if rows else np.zeros((0, 3 * n))
    return RigidityMatrix(R, tuple(tags), n, n_anchors, len(constraints.angles), len(constraints.displacements))


def constraint_function(constraints, P):
    """f(P) = (B(P), L(P)): angle residuals followed by stacked displacement residuals."""
    P = _embed(P)
    B = [ac.residual(P) for ac in constraints.angles]
    L = [dc.residual(P) for dc in constraints.displacements]
    return np.concatenate([np.array(B, dtype=float), np.ravel(L) if L else np.zeros(0)])


def trivial_motion_basis(P, tol=None):
    """Translation, rotation and scaling generators of the configuration.

    Returns:
        (V, rank): V is (3n, 7) with columns [t_x, t_y, t_z, r_x, r_y, r_z, s];
        rank is the numerical rank of V (7 unless the configuration is colinear)
    """
    P = _embed(P)
    n = len(P)
    cols = [np.kron(np.ones(n), e) for e in np.eye(3)]
    for axis in range(3):
        A = np.zeros((3, 3))
        u, v = [a for a in range(3) if a != axis]
        A[u, v], A[v, u] = -1.0, 1.0
        cols.append((P @ A.T).ravel())
    cols.append(P.ravel())
    V = np.column_stack(cols)
    s = np.linalg.svd(V / np.linalg.norm(V, axis=0), compute_uv=False)
    tol = rank_tol() if tol is None else tol
    return V, int(np.sum(s > tol * s[0]))


def information_matrix(R):
    R = R.R if isinstance(R, RigidityMatrix) else np.asarray(R)
    D = R.T @ R
    return 0.5 * (D + D.T)


def partition(D, n_anchors):
    """(D_aa, D_af, D_fa, D_ff) under the anchors-first ordering."""
    k = 3 * n_anchors
    return D[:k, :k], D[:k, k:], D[k:, :k], D[k:, k:]


@dataclass(frozen=True, eq=False)
class RigidityReport:
    nullity: int
    trivial_dim: int
    is_infinitesimally_rigid: bool
    is_localizable: bool
    lambda_min_ff: float
    norm_D: float
    singular_values: np.ndarray
    nontrivial_motions: np.ndarray
    free_null_motions: np.ndarray
    anchor_block_min: float
    rank_tol: float

    def as_dict(self):
        return {
            "nullity": self.nullity,
            "trivial_dim": self.trivial_dim,
            "infinitesimally_rigid": self.is_infinitesimally_rigid,
            "localizable": self.is_localizable,
            "lambda_min_ff": self.lambda_min_ff,
            "norm_D": self.norm_D,
            "nontrivial_motion_count": int(self.nontrivial_motions.shape[1]),
            "free_null_motion_count": int(self.free_null_motions.shape[1]),
            "rank_tol": self.rank_tol,
        }


def _null_space(M, tol):
    # tall matrices already give the full right basis; avoid building a huge U
    _, s, vt = np.linalg.svd(M, full_matrices=M.shape[0] < M.shape[1])
    smax = s[0] if len(s) else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return vt[rank:].T, s, rank


def nullity_report(R, P, tol=None):
    """Rigidity and localizability verdicts for an assembled rigidity matrix.

    Infinitesimal rigidity: Null(R) equals the span of the trivial motions.
    Localizability: lambda_min(D_ff) > tol * ||D||, cross-checked against the
    requirement that every null motion of D moves some anchor.
    """
    tol = rank_tol() if tol is None else tol
    P = _embed(P)
    n, na = R.n, R.n_anchors
    N, s, rank = _null_space(R.R, tol)
    nullity = 3 * n - rank
    V, trivial_dim = trivial_motion_basis(P, tol)

    # null directions not explained by trivial motions
    Q, _ = np.linalg.qr(V / np.linalg.norm(V, axis=0))
    Q = Q[:, :trivial_dim]
    resid = N - Q @ (Q.T @ N)
    if resid.size:
        u, rs, _ = np.linalg.svd(resid, full_matrices=False)
        nontrivial = u[:, rs > 1e-6]
    else:
        nontrivial = np.zeros((3 * n, 0))

    D = information_matrix(R)
    normD = float(np.linalg.norm(D, 2)) if D.size else 0.0
    _, _, _, Dff = partition(D, na)
    if Dff.size:
        lam, vec = np.linalg.eigh(Dff)
        lam_min = float(lam[0])
        localizable = lam_min > tol * normD
        free_null = vec[:, lam <= tol * normD]
    else:
        lam_min, localizable, free_null = float("inf"), True, np.zeros((0, 0))

    # every null motion of D must move at least one anchor
    lamD, vecD = np.linalg.eigh(D)
    ND = vecD[:, lamD <= tol * normD]
    if ND.shape[1] == 0 or Dff.size == 0:
        anchor_min = float("inf")
    elif ND.shape[1] > 3 * na:
        anchor_min = 0.0
    else:
        anchor_min = float(np.linalg.svd(ND[: 3 * na], compute_uv=False)[-1])
    localizable_by_motion = anchor_min > ANCHOR_BLOCK_TOL
    if localizable_by_motion != localizable:
        raise InternalConsistencyError(
            f"D_ff test says localizable={localizable} (lambda_min={lam_min:.3e}) but null-motion test "
            f"says {localizable_by_motion} (min anchor block {anchor_min:.3e}); adjust the rank tolerance")
    return RigidityReport(
        nullity=nullity,
        trivial_dim=trivial_dim,
        is_infinitesimally_rigid=nullity == trivial_dim and nontrivial.shape[1] == 0,
        is_localizable=bool(localizable),
        lambda_min_ff=lam_min,
        norm_D=normD,
        singular_values=s,
        nontrivial_motions=nontrivial,
        free_null_motions=free_null,
        anchor_block_min=anchor_min,
        rank_tol=tol,
    )


def complete_constraint_set(config, angle_mode="full"):
    """Constraints of the complete network with every position treated as known."""
    P = config.positions
    n, dim = config.n, config.dim
    graph = NetworkGraph.complete(n, n)
    angles = []
    for i, j, k in itertools.combinations(range(n), 3):
        angles.append(angle_constraint(P, i, k, j))
        if angle_mode == "full":
            angles.append(angle_constraint(P, i, j, k))
            angles.append(angle_constraint(P, j, k, i))
    disp, skipped = [], []
    for t in enumerate_displacement_tuples(graph, dim):
        try:
            mu = mu_from_local_positions(P[list(t[1:])] - P[t[0]])
        except DegenerateNeighborhoodError as exc:
            skipped.append((t, str(exc)))
            continue
        disp.append(DisplacementConstraint(t[0], t[1:], mu))
    return ConstraintSet(tuple(angles), tuple(disp), dim, "local_position", tuple(skipped))


def complete_rigidity_matrix(config, angle_mode="full"):
    """R^kappa(p) of the complete network on ``config``."""
    cs = complete_constraint_set(config, angle_mode)
    return assemble_rigidity_matrix(cs, config.positions, config.n, config.n)


def check_congruence(R_complete, candidate, tol=None):
    """True when ``candidate`` satisfies every complete-network constraint of the reference."""
    R = R_complete.R if isinstance(R_complete, RigidityMatrix) else np.asarray(R_complete)
    x = _embed(candidate).ravel()
    if x.size != R.shape[1]:
        raise ValueError(f"candidate has {x.size} coordinates, R expects {R.shape[1]}")
    tol = rank_tol() if tol is None else tol
    return bool(np.linalg.norm(R @ x) <= tol * np.linalg.norm(R, 2) * np.linalg.norm(x))
