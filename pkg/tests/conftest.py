import itertools
import os

import numpy as np
import pytest

from adrigidity.constraints import (
    star_bearings,
    star_cosines,
    star_distances,
    star_local_positions,
    star_ratios,
)
from adrigidity.core import Configuration, LocalFrameAssignment, NetworkGraph
from adrigidity.measurements import synthesize_measurements

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")

CUBE = np.array([
    (20, -20, -20), (20, 20, -20), (-20, 20, -20), (20, 20, 20),
    (-20, -20, -20), (20, -20, 20), (-20, 20, 20), (-20, -20, 20),
], dtype=float)

# planar star: centre h, neighbours i, j, k
PLANAR_STAR = np.array([(3.0, 0.5), (1.0, 0.0), (3.0, 0.0), (2.0, 1.0)])
PLANAR_MU = np.array([1.0, -3.0, -2.0]) / np.sqrt(14.0)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def cube_config():
    return Configuration(CUBE, 4)


@pytest.fixture
def cube_graph():
    return NetworkGraph.complete(8, 4)


def scenario_path(name):
    return os.path.join(SCENARIOS, name)


def star_arrays(points, modality, frames_seed=None):
    """Observation array of a star (centre first) in the layout its builder expects."""
    points = np.asarray(points, dtype=float)
    N, dim = points.shape
    cfg = Configuration(points, 1)
    graph = NetworkGraph.complete(N, 1)
    frames = LocalFrameAssignment.identity(N, dim) if frames_seed is None else \
        LocalFrameAssignment.random(N, dim, frames_seed)
    ms = synthesize_measurements(cfg, graph, frames, modality)
    nodes = tuple(range(N))
    if modality == "local_position":
        return star_local_positions(ms, 0, nodes[1:])
    if modality == "distance":
        return star_distances(ms, nodes)
    if modality == "local_bearing":
        return star_bearings(ms, nodes)
    if modality == "angle":
        return star_cosines(ms, nodes)
    return star_ratios(ms, nodes)


def null_oracle(points):
    """Canonical null vector of the stacked relative positions via scipy."""
    from scipy.linalg import null_space

    E = (points[1:] - points[0]).T
    v = null_space(E)[:, 0]
    v = v / np.linalg.norm(v)
    lead = np.flatnonzero(np.abs(v) > 1e-12)[0]
    return -v if v[lead] < 0 else v


def random_star(rng, dim, min_sep=0.1, min_sv=0.05):
    """Well-separated random star: centre plus dim+1 neighbours with a well-conditioned null space."""
    while True:
        P = rng.uniform(-1.0, 1.0, size=(dim + 2, dim))
        d = np.linalg.norm(P[:, None] - P[None], axis=-1)
        if d[np.triu_indices(dim + 2, 1)].min() < min_sep:
            continue
        s = np.linalg.svd((P[1:] - P[0]).T, compute_uv=False)
        if s[-1] < min_sv * s[0]:
            continue
        # keep every star triangle away from colinear
        ok = True
        for a, b, c in itertools.combinations(range(dim + 2), 3):
            u, v = P[b] - P[a], P[c] - P[a]
            area = abs(u[0] * v[1] - u[1] * v[0]) if dim == 2 else np.linalg.norm(np.cross(u, v))
            if area < 0.02:
                ok = False
                break
        if ok:
            return P
