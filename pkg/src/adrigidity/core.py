"""Geometric primitives, the network graph and similarity transforms.

Nodes are indexed from 0. Anchors always occupy indices ``0 .. n_anchors - 1``
and free nodes follow; every matrix partition in the package relies on this.
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import CollocationError

DEFAULT_RANK_TOL = 1e-8
DEFAULT_COLLOCATION_TOL = 1e-9


def rank_tol():
    """Relative singular-value threshold (``ADRIGIDITY_RANK_TOL`` overrides)."""
    return float(os.environ.get("ADRIGIDITY_RANK_TOL", DEFAULT_RANK_TOL))


def collocation_tol():
    """Collocation threshold relative to scene diameter (``ADRIGIDITY_COLLOCATION_TOL``)."""
    return float(os.environ.get("ADRIGIDITY_COLLOCATION_TOL", DEFAULT_COLLOCATION_TOL))


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Configuration:
    """Positions of all nodes in the global frame, anchors first.

    Args:
        positions: array (n, d) with d in {2, 3}
        n_anchors: number of leading rows that are anchors
    """

    positions: np.ndarray
    n_anchors: int

    def __post_init__(self):
        p = np.array(self.positions, dtype=float)
        if p.ndim != 2 or p.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (n, 2) or (n, 3), got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("positions must be finite")
        if not 1 <= self.n_anchors <= len(p):
            raise ValueError(f"need 1 <= n_anchors <= n, got n_anchors={self.n_anchors}, n={len(p)}")
        object.__setattr__(self, "positions", _readonly(p))
        self._check_collocation()

    def _check_collocation(self):
        p = self.positions
        if len(p) < 2:
            return
        diff = p[:, None, :] - p[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        diam = dist.max()
        np.fill_diagonal(dist, np.inf)
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        if dist[i, j] <= collocation_tol() * max(diam, np.finfo(float).tiny):
            raise CollocationError(f"nodes {min(i, j)} and {max(i, j)} are collocated")

    @property
    def n(self):
        return len(self.positions)

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def n_free(self):
        return self.n - self.n_anchors

    @property
    def anchor_positions(self):
        return self.positions[: self.n_anchors]

    @property
    def free_positions(self):
        return self.positions[self.n_anchors:]

    @property
    def diameter(self):
        p = self.positions
        return float(np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1)).max())

    def embedded(self):
        """Positions lifted to 3-D (z = 0 for planar scenarios), shape (n, 3)."""
        if self.dim == 3:
            return self.positions.copy()
        return np.hstack([self.positions, np.zeros((self.n, 1))])

    def stacked(self):
        """The embedded configuration as one vector in R^{3n}."""
        return self.embedded().ravel()

    def with_free_positions(self, free):
        free = np.asarray(free, dtype=float).reshape(self.n_free, -1)[:, : self.dim]
        return Configuration(np.vstack([self.anchor_positions, free]), self.n_anchors)


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Simple undirected graph over ``n`` nodes whose first ``n_anchors`` are anchors."""

    n: int
    n_anchors: int
    edges: frozenset

    def __post_init__(self):
        canon = set()
        for e in self.edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) references a node outside 0..{self.n - 1}")
            key = (min(i, j), max(i, j))
            if key in canon:
                raise ValueError(f"duplicate edge {key}")
            canon.add(key)
        if not 0 <= self.n_anchors <= self.n:
            raise ValueError("n_anchors out of range")
        object.__setattr__(self, "edges", frozenset(canon))
        adj = {i: [] for i in range(self.n)}
        for i, j in canon:
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "_adj", {i: tuple(sorted(v)) for i, v in adj.items()})

    @classmethod
    def complete(cls, n, n_anchors):
        return cls(n, n_anchors, frozenset(itertools.combinations(range(n), 2)))

    def neighbors(self, i):
        return self._adj[i]

    def degree(self, i):
        return len(self._adj[i])

    def has_edge(self, i, j):
        return (min(i, j), max(i, j)) in self.edges

    def is_anchor(self, i):
        return i < self.n_anchors

    def sorted_edges(self):
        return sorted(self.edges)


def random_rotation(dim, rng):
    """Uniformly distributed element of SO(dim)."""
    if dim == 3:
        return Rotation.random(random_state=rng).as_matrix()
    if dim == 2:
        a = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s], [s, c]])
    raise ValueError(f"dim must be 2 or 3, got {dim}")


def _check_special_orthogonal(Q, tol=1e-9):
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    if Q.shape != (d, d):
        raise ValueError("rotation must be square")
    if np.abs(Q.T @ Q - np.eye(d)).max() > tol or abs(np.linalg.det(Q) - 1.0) > tol:
        raise ValueError("matrix is not a proper rotation")
    return Q


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """p -> scale * rotation @ p + translation (direct similarity, no reflection)."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.scale == 0 or not np.isfinite(self.scale):
            raise ValueError("scale must be finite and nonzero")
        Q = _readonly(_check_special_orthogonal(self.rotation))
        t = _readonly(np.asarray(self.translation, dtype=float).ravel())
        if t.shape != (Q.shape[0],):
            raise ValueError("translation dimension does not match rotation")
        object.__setattr__(self, "rotation", Q)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self):
        return self.rotation.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(1.0, np.eye(dim), np.zeros(dim))

    @classmethod
    def random(cls, dim, rng, scale_range=(0.2, 5.0), translation_scale=10.0):
        return cls(rng.uniform(*scale_range), random_rotation(dim, rng), rng.normal(scale=translation_scale, size=dim))

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return self.scale * points @ self.rotation.T + self.translation


def apply_similarity(config, transform):
    """Map every position through ``transform``; anchor/free split is kept."""
    if transform.dim != config.dim:
        raise ValueError(f"transform is {transform.dim}-D but configuration is {config.dim}-D")
    return Configuration(transform.apply(config.positions), config.n_anchors)


@dataclass(frozen=True, eq=False)
class LocalFrameAssignment:
    """Unknown per-node rotations Q_i (local frame -> global frame).

    Only the measurement synthesizer reads these.
    """

    rotations: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotations, dtype=float)
        for Q in R:
            _check_special_orthogonal(Q)
        object.__setattr__(self, "rotations", _readonly(R))

    @property
    def dim(self):
        return self.rotations.shape[1]

    @classmethod
    def identity(cls, n, dim):
        return cls(np.repeat(np.eye(dim)[None], n, axis=0))

    @classmethod
    def random(cls, n, dim, seed=None):
        rng = np.random.default_rng(seed)
        return cls(np.stack([random_rotation(dim, rng) for _ in range(n)]))


def relative_quantities(config, i, j):
    """Relative position, bearing and distance of node j seen from node i.

    Returns:
        (e_ij, g_ij, d_ij) with e_ij = p_j - p_i, d_ij = |e_ij| and g_ij = e_ij / d_ij
    """
    if i == j:
        raise CollocationError(f"relative quantities need two distinct nodes, got {i} twice")
    e = config.positions[j] - config.positions[i]
    d = float(np.linalg.norm(e))
    if d <= collocation_tol() * max(config.diameter, np.finfo(float).tiny):
        raise CollocationError(f"nodes {i} and {j} are collocated")
    return e, e / d, d
