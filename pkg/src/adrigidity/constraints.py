"""Angle and displacement constraints built from anchor positions and local measurements.

Every ``mu_from_*`` builder returns the same canonical coefficient vector for a
given star: unit Euclidean norm, sign chosen so the first coefficient larger
than 1e-12 in magnitude is positive. Stars are passed with the centre at local
index 0 and its neighbours at 1..k.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousNullSpaceError,
    AssumptionViolationError,
    DegenerateNeighborhoodError,
    IncompleteStarError,
    InconsistentMeasurementError,
)

ZERO_DOT_TOL = 1e-9
NULL_AMBIGUITY_TOL = 1e-8
CONSISTENCY_TOL = 1e-6
SIGN_TOL = 1e-12
_COLINEAR_SIN = 1e-9


@dataclass(frozen=True)
class AngleConstraint:
    """w_ab e_ab.e_ac + w_ba e_ba.e_bc = 0 on the anchor triangle {a, b, c}.

    With (a, b, c) = (i, k, j) this is w_ik e_ik.e_ij + w_ki e_ki.e_kj = 0.
    """

    a: int
    b: int
    c: int
    w_ab: float
    w_ba: float

    @property
    def triple(self):
        return tuple(sorted((self.a, self.b, self.c)))

    def residual(self, P):
        pa, pb, pc = P[self.a], P[self.b], P[self.c]
        return self.w_ab * (pb - pa) @ (pc - pa) + self.w_ba * (pa - pb) @ (pc - pb)

    def gradient_blocks(self, P):
        """Partial derivatives of the residual w.r.t. p_a, p_b, p_c."""
        pa, pb, pc = P[self.a], P[self.b], P[self.c]
        w1, w2 = self.w_ab, self.w_ba
        ga = 2 * w1 * pa + (w2 - w1) * pc - (w1 + w2) * pb
        gb = -(w1 + w2) * pa + (w1 - w2) * pc + 2 * w2 * pb
        gc = (w2 - w1) * pa + (w1 - w2) * pb
        return ga, gb, gc


@dataclass(frozen=True, eq=False)
class DisplacementConstraint:
    """sum_k mu_k (p_{n_k} - p_center) = 0."""

    center: int
    neighbors: tuple
    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.shape != (len(self.neighbors),):
            raise ValueError("one coefficient per neighbour is required")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "neighbors", tuple(int(j) for j in self.neighbors))

    @property
    def members(self):
        return (self.center,) + self.neighbors

    def residual(self, P):
        P = np.asarray(P)
        return self.mu @ (P[list(self.neighbors)] - P[self.center])


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    angles: tuple
    displacements: tuple
    dim: int
    modality: str | None = None
    skipped: tuple = field(default=())

    @property
    def m_r(self):
        return len(self.angles)

    @property
    def m_d(self):
        return len(self.displacements)

    def replace_displacements(self, displacements):
        return ConstraintSet(self.angles, tuple(displacements), self.dim, self.modality, self.skipped)


def canonical_mu(mu):
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    lead = np.flatnonzero(np.abs(mu) > SIGN_TOL)
    if len(lead) and mu[lead[0]] < 0:
        mu = -mu
    return mu


def design_angle_params(dot_i, dot_k, norm_i=1.0, norm_k=1.0):
    """Coefficients (w_ik, w_ki) making w_ik*dot_i + w_ki*dot_k vanish.

    ``dot_i`` is e_ik.e_ij and ``dot_k`` is e_ki.e_kj. A dot product counts as
    zero when it is below ``ZERO_DOT_TOL`` times the matching edge-norm product
    (``norm_i``, ``norm_k``).
    """
    zi = abs(dot_i) < ZERO_DOT_TOL * norm_i
    zk = abs(dot_k) < ZERO_DOT_TOL * norm_k
    if not zi and not zk:
        return 1.0 / dot_i, -1.0 / dot_k
    if zi and not zk:
        return 1.0, 0.0
    if zk and not zi:
        return 0.0, 1.0
    return 1.0, 1.0


def angle_constraint(P, a, b, c):
    """Build the constraint on vertex pair (a, b) of triangle {a, b, c} from known positions."""
    eab, eac = P[b] - P[a], P[c] - P[a]
    eba, ebc = P[a] - P[b], P[c] - P[b]
    w1, w2 = design_angle_params(
        eab @ eac, eba @ ebc,
        np.linalg.norm(eab) * np.linalg.norm(eac),
        np.linalg.norm(eba) * np.linalg.norm(ebc),
    )
    return AngleConstraint(a, b, c, w1, w2)


def enumerate_angle_triples(graph):
    """All anchor triangles (i, j, k), i < j < k, whose three edges exist."""
    out = []
    for i, j, k in itertools.combinations(range(graph.n_anchors), 3):
        if graph.has_edge(i, j) and graph.has_edge(i, k) and graph.has_edge(j, k):
            out.append((i, j, k))
    return out


def enumerate_displacement_tuples(graph, dim):
    """Tuples (center, n_1 < ... < n_{dim+1}) over every node's neighbour subsets."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    out = []
    for i in range(graph.n):
        for combo in itertools.combinations(graph.neighbors(i), dim + 1):
            out.append((i,) + combo)
    return out


def null_vector(E, tol=NULL_AMBIGUITY_TOL):
    """Canonical unit vector spanning Null(E) for a wide matrix E (d x k).

    Raises AmbiguousNullSpaceError if the null space is not one-dimensional.
    """
    E = np.asarray(E, dtype=float)
    d, k = E.shape
    _, s, vt = np.linalg.svd(E, full_matrices=True)
    s = np.concatenate([s, np.zeros(max(0, k - len(s)))])[:k]
    if s[0] == 0 or k < 2 or s[-2] < tol * s[0]:
        raise AmbiguousNullSpaceError(
            f"null space has dimension > 1 (singular values {np.array2string(s, precision=3)})")
    if s[-1] > tol * s[0]:
        raise InconsistentMeasurementError("stacked star matrix has no null vector")
    return canonical_mu(vt[-1])


def mu_from_local_positions(vectors, tol=NULL_AMBIGUITY_TOL):
    """Coefficients from the centre's local relative positions.

    Args:
        vectors: array (k, d), row m is e_{i, n_m} expressed in the centre's frame
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim != 2 or V.shape[0] < V.shape[1] + 1:
        raise ValueError(f"need at least d+1 neighbour vectors, got shape {V.shape}")
    if np.any(np.linalg.norm(V, axis=1) == 0):
        raise DegenerateNeighborhoodError("a neighbour vector is zero")
    return null_vector(V.T, tol)


def _gram_from_distances(D):
    d0 = D[0, 1:]
    return 0.5 * (d0[:, None] ** 2 + d0[None, :] ** 2 - D[1:, 1:] ** 2)


def mu_from_distances(distances, dim, tol=CONSISTENCY_TOL):
    """Coefficients from the full distance matrix of a star (centre at index 0).

    The star is reconstructed up to congruence by factoring its Gram matrix
    relative to the centre; ``tol=None`` skips the rank consistency check.
    """
    D = np.asarray(distances, dtype=float)
    N = D.shape[0]
    if D.shape != (N, N) or N != dim + 2:
        raise ValueError(f"expected a ({dim + 2}, {dim + 2}) distance matrix, got {D.shape}")
    if np.any(np.isnan(D)):
        raise IncompleteStarError("star distance matrix has missing entries")
    if np.any(D[~np.eye(N, dtype=bool)] <= 0):
        raise InconsistentMeasurementError("distances must be positive")
    G = _gram_from_distances(0.5 * (D + D.T))
    lam, V = np.linalg.eigh(G)
    lam, V = lam[::-1], V[:, ::-1]
    if lam[0] <= 0:
        raise InconsistentMeasurementError("star Gram matrix is not positive")
    if tol is not None and np.max(np.abs(lam[dim:])) > tol * lam[0]:
        raise InconsistentMeasurementError(
            f"distances do not embed in {dim}-D (Gram eigenvalues {np.array2string(lam, precision=3)})")
    X = V[:, :dim] * np.sqrt(np.clip(lam[:dim], 0.0, None))
    return mu_from_local_positions(X)


@functools.lru_cache(maxsize=None)
def _ratio_index(N):
    """Index arrays of every measurable ratio (a; b, c), b < c, and its log-system row."""
    pairs = list(itertools.combinations(range(N), 2))
    col = {p: m for m, p in enumerate(pairs)}
    idx = [(a, b, c) for a in range(N) for b, c in pairs if a not in (b, c)]
    M = np.zeros((len(idx), len(pairs)))
    for r, (a, b, c) in enumerate(idx):
        M[r, col[(min(a, b), max(a, b))]] += 1.0
        M[r, col[(min(a, c), max(a, c))]] -= 1.0
    return pairs, tuple(np.array(idx).T), M


def _log_ratio_system(ratios):
    N = ratios.shape[0]
    pairs, idx, M = _ratio_index(N)
    vals = ratios[idx]
    seen = ~np.isnan(vals)
    if np.any(vals[seen] <= 0):
        raise InconsistentMeasurementError("distance ratios must be positive")
    gauge = np.zeros((1, len(pairs)))
    gauge[0, 0] = 1.0  # pair (0, 1)
    A = np.vstack([M[seen], gauge])
    rhs = np.concatenate([np.log(vals[seen]), [0.0]])
    return pairs, A, rhs


def mu_from_ratios(ratios, dim, tol=CONSISTENCY_TOL):
    """Coefficients from ratio-of-distance measurements on a star.

    Args:
        ratios: array (N, N, N); ``ratios[a, b, c]`` is d_ab / d_ac as measured
            at star node a, NaN where not measured
    """
    R = np.asarray(ratios, dtype=float)
    N = R.shape[0]
    pairs, A, b = _log_ratio_system(R)
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < len(pairs):
        raise IncompleteStarError("ratios do not determine every star distance")
    if tol is not None and np.max(np.abs(A @ x - b)) > tol:
        raise InconsistentMeasurementError("ratio cycles are inconsistent")
    D = np.zeros((N, N))
    for (a, c), v in zip(pairs, np.exp(x)):
        D[a, c] = D[c, a] = v
    return mu_from_distances(D, dim, tol)


@functools.lru_cache(maxsize=None)
def _triangle_index(N):
    """Vertex index arrays for every star triangle and the pair column opposite each vertex."""
    pairs = list(itertools.combinations(range(N), 2))
    col = {p: m for m, p in enumerate(pairs)}
    tri = np.array(list(itertools.combinations(range(N), 3)))
    opp = np.column_stack([
        [col[(b, c)] for _, b, c in tri],
        [col[(a, c)] for a, _, c in tri],
        [col[(a, b)] for a, b, _ in tri],
    ])
    return pairs, tri, opp


def _distances_from_angles(cos, sin, tol):
    """Star distances up to scale from vertex angles of every star triangle.

    ``cos[a, b, c]`` / ``sin[a, b, c]`` describe the angle at a between b and c.
    Non-degenerate triangles contribute sine-rule rows; colinear ones the
    additive relation of the middle vertex.
    """
    N = cos.shape[0]
    pairs, tri, opp = _triangle_index(N)
    a, b, c = tri.T
    C = np.column_stack([cos[a, b, c], cos[b, a, c], cos[c, a, b]])
    S = np.column_stack([sin[a, b, c], sin[b, a, c], sin[c, a, b]])
    missing = np.isnan(C).any(axis=1)
    if missing.any():
        raise IncompleteStarError(f"angles of star triangle {tuple(tri[missing][0])} are not all measured")
    T, P = len(tri), len(pairs)
    degenerate = S.max(axis=1) < _COLINEAR_SIN
    if degenerate.all():
        raise DegenerateNeighborhoodError("star is colinear")
    A = np.zeros((3 * T, P))
    rows = np.arange(T)
    for r, (u, v) in enumerate(((0, 1), (1, 2), (2, 0))):
        nrm = np.hypot(S[:, u], S[:, v])
        nrm[nrm == 0] = np.inf
        A[3 * rows + r, opp[:, u]] = S[:, v] / nrm
        A[3 * rows + r, opp[:, v]] = -S[:, u] / nrm
    for t in np.flatnonzero(degenerate):
        # the vertex with the obtuse (cos = -1) angle lies between the other two
        mid = int(np.argmin(C[t]))
        A[3 * t: 3 * t + 3] = 0.0
        A[3 * t, opp[t]] = -1.0 / math.sqrt(3.0)
        A[3 * t, opp[t, mid]] = 1.0 / math.sqrt(3.0)
    _, sv, vt = np.linalg.svd(A)
    sv = np.concatenate([sv, np.zeros(max(0, P - len(sv)))])
    if sv[-2] < NULL_AMBIGUITY_TOL * sv[0]:
        raise DegenerateNeighborhoodError("angles do not determine the star shape")
    if tol is not None and sv[-1] > tol * sv[0]:
        raise InconsistentMeasurementError("star angles are mutually inconsistent")
    x = vt[-1] * np.sign(vt[-1].sum())
    if np.any(x <= 0):
        raise InconsistentMeasurementError("angles imply non-positive distances")
    D = np.zeros((N, N))
    iu = np.array(pairs).T
    D[iu[0], iu[1]] = x
    D[iu[1], iu[0]] = x
    return D


def mu_from_angles(cosines, dim, tol=CONSISTENCY_TOL):
    """Coefficients from angle cosines measured at every star node.

    Args:
        cosines: array (N, N, N); ``cosines[a, b, c]`` = g_ab^a . g_ac^a, NaN if unmeasured
    """
    C = np.asarray(cosines, dtype=float)
    if np.any(np.abs(C[~np.isnan(C)]) > 1 + 1e-12):
        raise InconsistentMeasurementError("angle cosines must lie in [-1, 1]")
    C = np.clip(C, -1.0, 1.0)
    S = np.sqrt(1.0 - C ** 2)
    return mu_from_distances(_distances_from_angles(C, S, tol), dim, tol)


def mu_from_bearings(bearings, dim, tol=CONSISTENCY_TOL):
    """Coefficients from local bearings measured at every star node.

    Args:
        bearings: array (N, N, d); ``bearings[a, b]`` is g_ab^a in a's frame, NaN if unmeasured
    """
    B = np.asarray(bearings, dtype=float)
    with np.errstate(invalid="ignore"):
        G = B / np.linalg.norm(B, axis=-1, keepdims=True)
        C = np.clip(np.einsum("abk,ack->abc", G, G), -1.0, 1.0)
        if dim == 3:
            S = np.linalg.norm(np.cross(G[:, :, None, :], G[:, None, :, :]), axis=-1)
        else:
            S = np.abs(G[:, :, None, 0] * G[:, None, :, 1] - G[:, :, None, 1] * G[:, None, :, 0])
    return mu_from_distances(_distances_from_angles(C, S, tol), dim, tol)


# -- batched fast path -------------------------------------------------------------------------
# The per-star builders above are the reference implementation. The batched
# versions below mirror them on stacked stars and flag every star whose checks
# fail, so the caller can rerun it through the reference path for the exact error.

def _batch_null(E, tol=NULL_AMBIGUITY_TOL):
    S, d, k = E.shape
    _, s, vt = np.linalg.svd(E, full_matrices=True)
    s = np.concatenate([s, np.zeros((S, max(0, k - d)))], axis=1)[:, :k]
    ok = (s[:, 0] > 0) & (s[:, -2] >= tol * s[:, 0]) & (s[:, -1] <= tol * s[:, 0])
    v = vt[:, -1, :]
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    lead = np.argmax(np.abs(v) > SIGN_TOL, axis=1)
    v = v * np.where(v[np.arange(S), lead] < 0, -1.0, 1.0)[:, None]
    return v, ok


def _batch_from_distances(D, dim, tol):
    S, N, _ = D.shape
    off = ~np.eye(N, dtype=bool)
    ok = ~np.isnan(D).any(axis=(1, 2)) & (np.nan_to_num(D[:, off], nan=1.0) > 0).all(axis=1)
    D = np.where(ok[:, None, None], D, 1.0)
    D = 0.5 * (D + D.transpose(0, 2, 1))
    d0 = D[:, 0, 1:]
    G = 0.5 * (d0[:, :, None] ** 2 + d0[:, None, :] ** 2 - D[:, 1:, 1:] ** 2)
    lam, V = np.linalg.eigh(G)
    lam, V = lam[:, ::-1], V[:, :, ::-1]
    ok &= lam[:, 0] > 0
    if tol is not None:
        ok &= np.abs(lam[:, dim:]).max(axis=1) <= tol * lam[:, 0]
    X = V[:, :, :dim] * np.sqrt(np.clip(lam[:, None, :dim], 0.0, None))
    ok &= (np.linalg.norm(X, axis=2) > 0).all(axis=1)
    mu, ok_null = _batch_null(X.transpose(0, 2, 1))
    return mu, ok & ok_null


def _batch_from_ratios(R, dim, tol):
    S, N = R.shape[:2]
    pairs, idx, M = _ratio_index(N)
    vals = R[(slice(None),) + idx]
    ok = ~np.isnan(vals).any(axis=1) & (np.nan_to_num(vals, nan=1.0) > 0).all(axis=1)
    vals = np.where(ok[:, None], vals, 1.0)
    gauge = np.zeros((1, len(pairs)))
    gauge[0, 0] = 1.0
    A = np.vstack([M, gauge])
    rhs = np.hstack([np.log(vals), np.zeros((S, 1))])
    x = np.linalg.lstsq(A, rhs.T, rcond=None)[0].T
    if tol is not None:
        ok &= np.abs(x @ A.T - rhs).max(axis=1) <= tol
    D = np.zeros((S, N, N))
    iu = np.array(pairs).T
    D[:, iu[0], iu[1]] = D[:, iu[1], iu[0]] = np.exp(x)
    mu, ok_d = _batch_from_distances(D, dim, tol)
    return mu, ok & ok_d


def _batch_from_angle_data(C, Sn, dim, tol):
    S, N = C.shape[:2]
    pairs, tri, opp = _triangle_index(N)
    a, b, c = tri.T
    Cv = np.stack([C[:, a, b, c], C[:, b, a, c], C[:, c, a, b]], axis=2)
    Sv = np.stack([Sn[:, a, b, c], Sn[:, b, a, c], Sn[:, c, a, b]], axis=2)
    ok = ~np.isnan(Cv).any(axis=(1, 2)) & ~np.isnan(Sv).any(axis=(1, 2))
    Sv = np.nan_to_num(Sv, nan=1.0)
    ok &= (Sv.max(axis=2) >= _COLINEAR_SIN).all(axis=1)
    T, P = len(tri), len(pairs)
    A = np.zeros((S, 3 * T, P))
    rows = np.arange(T)
    for r, (u, v) in enumerate(((0, 1), (1, 2), (2, 0))):
        nrm = np.hypot(Sv[:, :, u], Sv[:, :, v])
        nrm[nrm == 0] = np.inf
        A[:, 3 * rows + r, opp[:, u]] = Sv[:, :, v] / nrm
        A[:, 3 * rows + r, opp[:, v]] = -Sv[:, :, u] / nrm
    _, sv, vt = np.linalg.svd(A)
    sv = np.concatenate([sv, np.zeros((S, max(0, P - sv.shape[1])))], axis=1)
    ok &= sv[:, -2] >= NULL_AMBIGUITY_TOL * sv[:, 0]
    if tol is not None:
        ok &= sv[:, -1] <= tol * sv[:, 0]
    x = vt[:, -1, :]
    x = x * np.sign(x.sum(axis=1))[:, None]
    ok &= (x > 0).all(axis=1)
    D = np.zeros((S, N, N))
    iu = np.array(pairs).T
    D[:, iu[0], iu[1]] = D[:, iu[1], iu[0]] = np.where(ok[:, None], x, 1.0)
    mu, ok_d = _batch_from_distances(D, dim, tol)
    return mu, ok & ok_d


def _batch_from_cosines(C, dim, tol):
    ok = ~(np.abs(np.nan_to_num(C)) > 1 + 1e-12).any(axis=(1, 2, 3))
    C = np.clip(C, -1.0, 1.0)
    mu, ok_a = _batch_from_angle_data(C, np.sqrt(1.0 - C ** 2), dim, tol)
    return mu, ok & ok_a


def _batch_from_bearings(B, dim, tol):
    with np.errstate(invalid="ignore", divide="ignore"):
        G = B / np.linalg.norm(B, axis=-1, keepdims=True)
        C = np.clip(np.einsum("sabk,sack->sabc", G, G), -1.0, 1.0)
        if dim == 3:
            Sn = np.linalg.norm(np.cross(G[:, :, :, None, :], G[:, :, None, :, :]), axis=-1)
        else:
            Sn = np.abs(G[:, :, :, None, 0] * G[:, :, None, :, 1] - G[:, :, :, None, 1] * G[:, :, None, :, 0])
    return _batch_from_angle_data(C, Sn, dim, tol)


def batch_mu_from_measurements(ms, tuples, tol=CONSISTENCY_TOL):
    """Coefficients for many stars at once.

    Returns:
        (mu, ok): mu is (S, k); rows with ``ok`` False must be recomputed with
        :func:`mu_from_measurements`, which raises the precise error
    """
    if not tuples:
        return np.zeros((0, 0)), np.zeros(0, dtype=bool)
    k = len(tuples[0]) - 1
    if any(len(t) != k + 1 for t in tuples):
        raise ValueError("all stars in a batch must have the same size")
    dim = ms.dim

    def stack(extract, shape):
        out = np.full((len(tuples),) + shape, np.nan)
        for m, t in enumerate(tuples):
            try:
                out[m] = extract(t)
            except IncompleteStarError:
                pass
        return out

    N = k + 1
    if ms.modality == "local_position":
        E = stack(lambda t: star_local_positions(ms, t[0], t[1:]).T, (dim, k))
        ok = ~np.isnan(E).any(axis=(1, 2)) & (np.linalg.norm(np.nan_to_num(E), axis=1) > 0).all(axis=1)
        mu, ok_null = _batch_null(np.where(ok[:, None, None], E, 1.0))
        return mu, ok & ok_null
    if ms.modality == "distance":
        return _batch_from_distances(stack(lambda t: star_distances(ms, t), (N, N)), dim, tol)
    if ms.modality == "local_bearing":
        return _batch_from_bearings(stack(lambda t: star_bearings(ms, t), (N, N, dim)), dim, tol)
    if ms.modality == "angle":
        return _batch_from_cosines(stack(lambda t: star_cosines(ms, t), (N, N, N)), dim, tol)
    return _batch_from_ratios(stack(lambda t: star_ratios(ms, t), (N, N, N)), dim, tol)


# -- extraction of star data from a MeasurementSet -------------------------------------------

def star_local_positions(ms, center, nbrs):
    rec = ms.at(center)
    missing = [j for j in nbrs if j not in rec]
    if missing:
        raise IncompleteStarError(f"node {center} has no local position for {missing}")
    return np.array([rec[j] for j in nbrs])


def star_distances(ms, nodes):
    N = len(nodes)
    D = np.full((N, N), np.nan)
    np.fill_diagonal(D, 0.0)
    for a, b in itertools.combinations(range(N), 2):
        u, v = nodes[a], nodes[b]
        val = ms.at(u).get(v, ms.at(v).get(u))
        if val is None:
            raise IncompleteStarError(f"distance between nodes {u} and {v} is not measured")
        D[a, b] = D[b, a] = val
    return D


def star_bearings(ms, nodes):
    N = len(nodes)
    B = np.full((N, N, ms.dim), np.nan)
    for a, b in itertools.permutations(range(N), 2):
        g = ms.at(nodes[a]).get(nodes[b])
        if g is not None:
            B[a, b] = g
    return B


def _pairwise_at(ms, nodes, invert):
    N = len(nodes)
    out = np.full((N, N, N), np.nan)
    for a in range(N):
        rec = ms.at(nodes[a])
        for b, c in itertools.permutations([v for v in range(N) if v != a], 2):
            u, v = nodes[b], nodes[c]
            if (u, v) in rec:
                out[a, b, c] = rec[(u, v)]
            elif (v, u) in rec:
                out[a, b, c] = 1.0 / rec[(v, u)] if invert else rec[(v, u)]
    return out


def star_cosines(ms, nodes):
    return _pairwise_at(ms, nodes, invert=False)


def star_ratios(ms, nodes):
    return _pairwise_at(ms, nodes, invert=True)


def mu_from_measurements(ms, center, nbrs, tol=CONSISTENCY_TOL):
    """Dispatch to the builder matching ``ms.modality`` for the star (center; nbrs)."""
    nodes = (center,) + tuple(nbrs)
    if ms.modality == "local_position":
        return mu_from_local_positions(star_local_positions(ms, center, nbrs))
    if ms.modality == "distance":
        return mu_from_distances(star_distances(ms, nodes), ms.dim, tol)
    if ms.modality == "local_bearing":
        return mu_from_bearings(star_bearings(ms, nodes), ms.dim, tol)
    if ms.modality == "angle":
        return mu_from_angles(star_cosines(ms, nodes), ms.dim, tol)
    return mu_from_ratios(star_ratios(ms, nodes), ms.dim, tol)


def _node_is_colinear(ms, i):
    """Whether node i and all its neighbours lie on one line, judged from i's own data."""
    rec = ms.at(i)
    if ms.modality == "local_bearing":
        g = np.array(list(rec.values()))
        return len(g) < 2 or np.linalg.matrix_rank(g, tol=_COLINEAR_SIN) < 2
    if ms.modality == "angle":
        return all(abs(abs(c) - 1.0) < _COLINEAR_SIN for c in rec.values())
    return False


def check_assumptions(graph, ms):
    """Degree and non-colinearity requirements; raises AssumptionViolationError."""
    dim = ms.dim
    for i in range(graph.n_anchors):
        k = sum(1 for j in graph.neighbors(i) if graph.is_anchor(j))
        if k < 2:
            raise AssumptionViolationError(
                f"anchor {i} has {k} neighbouring anchors; at least 2 are required", node=i)
    for i in range(graph.n_anchors, graph.n):
        if graph.degree(i) < dim + 1:
            raise AssumptionViolationError(
                f"free node {i} has {graph.degree(i)} neighbours; at least {dim + 1} are required in {dim}-D",
                node=i)
        if ms.modality in ("local_bearing", "angle") and _node_is_colinear(ms, i):
            raise AssumptionViolationError(f"free node {i} and its neighbours are colinear", node=i)


def build_constraint_set(graph, anchor_positions, measurements, stars=None, angle_mode="single",
                         tol=CONSISTENCY_TOL, check=True):
    """Angle constraints on every anchor triangle plus displacement constraints per star.

    Args:
        graph: NetworkGraph with anchors first
        anchor_positions: array (n_a, d) of known anchor positions
        measurements: MeasurementSet of a single modality
        stars: optional explicit list of (center, n_1, ..., n_{d+1}); defaults to
            every tuple of the neighbour hypergraph. Enumerated stars that are
            degenerate or incompletely measured are skipped and listed in
            ``ConstraintSet.skipped``; explicit stars raise instead.
        angle_mode: "single" (one constraint per triangle) or "full" (three)
        tol: consistency tolerance for reconstructed stars, None disables it
    """
    if angle_mode not in ("single", "full"):
        raise ValueError("angle_mode must be 'single' or 'full'")
    if check:
        check_assumptions(graph, measurements)
    P = np.asarray(anchor_positions, dtype=float)
    angles = []
    for i, j, k in enumerate_angle_triples(graph):
        angles.append(angle_constraint(P, i, k, j))
        if angle_mode == "full":
            angles.append(angle_constraint(P, i, j, k))
            angles.append(angle_constraint(P, j, k, i))

    explicit = stars is not None
    tuples = [tuple(s) for s in stars] if explicit else enumerate_displacement_tuples(graph, measurements.dim)
    sizes = {len(t) for t in tuples}
    fast = {}
    for size in sizes:
        group = [t for t in tuples if len(t) == size]
        with np.errstate(all="ignore"):
            mus, ok = batch_mu_from_measurements(measurements, group, tol)
        fast.update((t, mu) for t, mu, good in zip(group, mus, ok) if good)
    disp, skipped = [], []
    for t in tuples:
        center, nbrs = t[0], tuple(t[1:])
        if t in fast:
            disp.append(DisplacementConstraint(center, nbrs, fast[t]))
            continue
        try:
            mu = mu_from_measurements(measurements, center, nbrs, tol)
        except (DegenerateNeighborhoodError, IncompleteStarError) as exc:
            if explicit:
                raise
            skipped.append((t, str(exc)))
            continue
        disp.append(DisplacementConstraint(center, nbrs, mu))
    return ConstraintSet(tuple(angles), tuple(disp), measurements.dim, measurements.modality, tuple(skipped))
