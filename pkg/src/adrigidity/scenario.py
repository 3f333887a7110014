"""Scenario files: a JSON document describing nodes, edges, modality, noise and protocol settings.

Canonical layout (keys in this order; ``serialize`` always emits it)::

    {
      "name": "cube",
      "dimension": 3,
      "modality": "local_position",
      "angle_mode": "single",
      "frames_seed": 0,
      "nodes": [{"id": "1", "role": "anchor", "position": [20.0, -20.0, -20.0]}, ...],
      "edges": "complete" | [["1", "2"], ...],
      "stars": [{"center": "5", "neighbors": ["1", "2", "3"], "mu": [1.0, -3.0, -2.0]}, ...],
      "noise": {"model": "matrix", "sigma": 0.0, "seed": 0, "trials": 10},
      "protocol": {"step": null, "max_iters": 100000, "tol": 1e-09, "init_seed": 0, "stop": "increment"}
    }

Anchors need positions. Free-node positions are optional; when present they
drive measurement synthesis and error reporting. A star with ``mu`` uses those
coefficients directly; without ``stars`` every neighbour tuple is enumerated.
``frames_seed`` null means every local frame equals the global one.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import (
    ConstraintSet,
    DisplacementConstraint,
    angle_constraint,
    build_constraint_set,
    canonical_mu,
    enumerate_angle_triples,
)
from .core import Configuration, LocalFrameAssignment, NetworkGraph
from .errors import LocalizationError, ScenarioError
from .fileio import atomic_write_text
from .measurements import MODALITIES, synthesize_measurements
from .rigidity import assemble_rigidity_matrix, nullity_report

NOISE_MODELS = ("matrix", "measurement")
STOP_RULES = ("increment", "true_error")


@dataclass(frozen=True)
class NoiseSpec:
    model: str = "matrix"
    sigma: float = 0.0
    seed: int = 0
    trials: int = 10


@dataclass(frozen=True)
class ProtocolSpec:
    step: float | None = None
    max_iters: int = 100000
    tol: float = 1e-9
    init_seed: int = 0
    stop: str = "increment"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    role: str
    position: tuple | None


@dataclass(frozen=True)
class StarSpec:
    center: str
    neighbors: tuple
    mu: tuple | None = None


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    dimension: int
    modality: str
    nodes: tuple
    edges: object  # "complete" or tuple of id pairs
    angle_mode: str = "single"
    frames_seed: int | None = None
    stars: tuple | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    protocol: ProtocolSpec = field(default_factory=ProtocolSpec)

    # -- index bookkeeping: anchors first, each group in file order
    @property
    def ordered(self):
        return [nd for nd in self.nodes if nd.role == "anchor"] + [nd for nd in self.nodes if nd.role == "free"]

    @property
    def index(self):
        return {nd.id: i for i, nd in enumerate(self.ordered)}

    @property
    def ids(self):
        return [nd.id for nd in self.ordered]

    @property
    def n(self):
        return len(self.nodes)

    @property
    def n_anchors(self):
        return sum(nd.role == "anchor" for nd in self.nodes)

    @property
    def free_ids(self):
        return [nd.id for nd in self.ordered if nd.role == "free"]

    @property
    def anchor_positions(self):
        return np.array([nd.position for nd in self.ordered if nd.role == "anchor"], dtype=float)

    @property
    def has_truth(self):
        return all(nd.position is not None for nd in self.nodes)

    def configuration(self):
        if not self.has_truth:
            return None
        return Configuration(np.array([nd.position for nd in self.ordered], dtype=float), self.n_anchors)

    def true_free_positions(self):
        """(n_f, 3) embedded true free positions, or None."""
        cfg = self.configuration()
        return None if cfg is None else cfg.embedded()[self.n_anchors:]

    def graph(self):
        if self.edges == "complete":
            return NetworkGraph.complete(self.n, self.n_anchors)
        idx = self.index
        return NetworkGraph(self.n, self.n_anchors, frozenset((idx[a], idx[b]) for a, b in self.edges))

    def star_tuples(self):
        if self.stars is None:
            return None
        idx = self.index
        return [(idx[s.center],) + tuple(idx[j] for j in s.neighbors) for s in self.stars]

    def frames(self):
        if self.frames_seed is None:
            return LocalFrameAssignment.identity(self.n, self.dimension)
        return LocalFrameAssignment.random(self.n, self.dimension, self.frames_seed)

    def measurements(self, frames=None, modality=None):
        cfg = self.configuration()
        if cfg is None:
            raise ScenarioError("measurement synthesis needs positions for every node")
        return synthesize_measurements(cfg, self.graph(), frames or self.frames(), modality or self.modality)

    @property
    def explicit_mu(self):
        return self.stars is not None and all(s.mu is not None for s in self.stars)

    def constraint_set(self, frames=None, modality=None, measurements=None, tol=None):
        """Constraints from explicit coefficients when every star carries ``mu``, else from measurements."""
        graph = self.graph()
        if self.explicit_mu and measurements is None:
            P = self.anchor_positions
            angles = []
            for i, j, k in enumerate_angle_triples(graph):
                angles.append(angle_constraint(P, i, k, j))
                if self.angle_mode == "full":
                    angles.append(angle_constraint(P, i, j, k))
                    angles.append(angle_constraint(P, j, k, i))
            disp = [DisplacementConstraint(t[0], t[1:], canonical_mu(s.mu))
                    for t, s in zip(self.star_tuples(), self.stars)]
            return ConstraintSet(tuple(angles), tuple(disp), self.dimension, "explicit")
        ms = measurements if measurements is not None else self.measurements(frames, modality)
        kw = {} if tol is None else {"tol": tol}
        return build_constraint_set(graph, self.anchor_positions, ms, stars=self.star_tuples(),
                                    angle_mode=self.angle_mode, **kw)

    def with_(self, **changes):
        return replace(self, **changes)


# -- parsing -----------------------------------------------------------------------------------

def _fail(path, msg):
    raise ScenarioError(f"{path}: {msg}")


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(path, f"expected a finite number, got {v!r}")
    return float(v)


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}")
    return v


def _id(v, path):
    if isinstance(v, bool) or not isinstance(v, (str, int)):
        _fail(path, f"node ids must be strings or integers, got {v!r}")
    return str(v)


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    extra = set(obj) - set(allowed)
    if extra:
        _fail(path, f"unknown field(s) {sorted(extra)}")


_TOP = ("name", "dimension", "modality", "angle_mode", "frames_seed", "nodes", "edges", "stars", "noise",
        "protocol")


def from_dict(doc):
    _check_keys(doc, _TOP, "$")
    for key in ("dimension", "nodes", "edges"):
        if key not in doc:
            _fail("$", f"missing required field {key!r}")
    name = doc.get("name", "scenario")
    if not isinstance(name, str):
        _fail("$.name", "expected a string")
    dim = _int(doc["dimension"], "$.dimension")
    if dim not in (2, 3):
        _fail("$.dimension", "must be 2 or 3")
    modality = doc.get("modality", "local_position")
    if modality not in MODALITIES:
        _fail("$.modality", f"must be one of {list(MODALITIES)}, got {modality!r}")
    angle_mode = doc.get("angle_mode", "single")
    if angle_mode not in ("single", "full"):
        _fail("$.angle_mode", "must be 'single' or 'full'")
    frames_seed = doc.get("frames_seed")
    if frames_seed is not None:
        frames_seed = _int(frames_seed, "$.frames_seed", 0)

    if not isinstance(doc["nodes"], list) or not doc["nodes"]:
        _fail("$.nodes", "expected a non-empty list")
    nodes, seen = [], set()
    for m, nd in enumerate(doc["nodes"]):
        path = f"$.nodes[{m}]"
        _check_keys(nd, ("id", "role", "position"), path)
        if "id" not in nd or "role" not in nd:
            _fail(path, "nodes need 'id' and 'role'")
        nid = _id(nd["id"], path + ".id")
        if nid in seen:
            _fail(path + ".id", f"duplicate node id {nid!r}")
        seen.add(nid)
        if nd["role"] not in ("anchor", "free"):
            _fail(path + ".role", "must be 'anchor' or 'free'")
        pos = nd.get("position")
        if pos is not None:
            if not isinstance(pos, list) or len(pos) != dim:
                _fail(path + ".position", f"expected {dim} coordinates")
            pos = tuple(_num(v, f"{path}.position[{c}]") for c, v in enumerate(pos))
        elif nd["role"] == "anchor":
            _fail(path + ".position", "anchors need a position")
        nodes.append(NodeSpec(nid, nd["role"], pos))
    if not any(nd.role == "anchor" for nd in nodes):
        _fail("$.nodes", "at least one anchor is required")

    edges = doc["edges"]
    if edges != "complete":
        if not isinstance(edges, list):
            _fail("$.edges", "expected 'complete' or a list of id pairs")
        out, pairs = [], set()
        for m, e in enumerate(edges):
            path = f"$.edges[{m}]"
            if not isinstance(e, list) or len(e) != 2:
                _fail(path, "expected a pair of node ids")
            a, b = _id(e[0], path), _id(e[1], path)
            for v in (a, b):
                if v not in seen:
                    _fail(path, f"unknown node id {v!r}")
            if a == b:
                _fail(path, "self-loop")
            key = frozenset((a, b))
            if key in pairs:
                _fail(path, "duplicate edge")
            pairs.add(key)
            out.append((a, b))
        edges = tuple(out)

    stars = doc.get("stars")
    if stars is not None:
        if not isinstance(stars, list):
            _fail("$.stars", "expected a list")
        parsed = []
        for m, st in enumerate(stars):
            path = f"$.stars[{m}]"
            _check_keys(st, ("center", "neighbors", "mu"), path)
            if "center" not in st or "neighbors" not in st:
                _fail(path, "stars need 'center' and 'neighbors'")
            c = _id(st["center"], path + ".center")
            if not isinstance(st["neighbors"], list):
                _fail(path + ".neighbors", "expected a list")
            nb = tuple(_id(v, f"{path}.neighbors[{q}]") for q, v in enumerate(st["neighbors"]))
            for v in (c,) + nb:
                if v not in seen:
                    _fail(path, f"unknown node id {v!r}")
            if len(nb) != dim + 1:
                _fail(path + ".neighbors", f"expected {dim + 1} neighbours in {dim}-D")
            mu = st.get("mu")
            if mu is not None:
                if not isinstance(mu, list) or len(mu) != len(nb):
                    _fail(path + ".mu", "expected one coefficient per neighbour")
                mu = tuple(_num(v, f"{path}.mu[{q}]") for q, v in enumerate(mu))
                if not any(mu):
                    _fail(path + ".mu", "coefficients must not all be zero")
            parsed.append(StarSpec(c, nb, mu))
        stars = tuple(parsed)

    noise = doc.get("noise", {})
    _check_keys(noise, ("model", "sigma", "seed", "trials"), "$.noise")
    nspec = NoiseSpec(
        model=noise.get("model", "matrix"),
        sigma=_num(noise.get("sigma", 0.0), "$.noise.sigma"),
        seed=_int(noise.get("seed", 0), "$.noise.seed", 0),
        trials=_int(noise.get("trials", 10), "$.noise.trials", 1),
    )
    if nspec.model not in NOISE_MODELS:
        _fail("$.noise.model", f"must be one of {list(NOISE_MODELS)}")
    if nspec.sigma < 0:
        _fail("$.noise.sigma", "must be non-negative")

    proto = doc.get("protocol", {})
    _check_keys(proto, ("step", "max_iters", "tol", "init_seed", "stop"), "$.protocol")
    step = proto.get("step")
    if step is not None:
        step = _num(step, "$.protocol.step")
        if step <= 0:
            _fail("$.protocol.step", "must be positive")
    pspec = ProtocolSpec(
        step=step,
        max_iters=_int(proto.get("max_iters", 100000), "$.protocol.max_iters", 0),
        tol=_num(proto.get("tol", 1e-9), "$.protocol.tol"),
        init_seed=_int(proto.get("init_seed", 0), "$.protocol.init_seed", 0),
        stop=proto.get("stop", "increment"),
    )
    if pspec.stop not in STOP_RULES:
        _fail("$.protocol.stop", f"must be one of {list(STOP_RULES)}")
    return Scenario(name, dim, modality, tuple(nodes), edges, angle_mode, frames_seed, stars, nspec, pspec)


def parse(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(doc)


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return parse(fh.read())
        except ScenarioError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc


# -- serialization -----------------------------------------------------------------------------

def to_dict(sc):
    doc = {
        "name": sc.name,
        "dimension": sc.dimension,
        "modality": sc.modality,
        "angle_mode": sc.angle_mode,
        "frames_seed": sc.frames_seed,
        "nodes": [
            {"id": nd.id, "role": nd.role, **({"position": list(nd.position)} if nd.position is not None else {})}
            for nd in sc.nodes
        ],
        "edges": "complete" if sc.edges == "complete" else [list(e) for e in sc.edges],
    }
    if sc.stars is not None:
        doc["stars"] = [
            {"center": s.center, "neighbors": list(s.neighbors), **({"mu": list(s.mu)} if s.mu is not None else {})}
            for s in sc.stars
        ]
    doc["noise"] = {"model": sc.noise.model, "sigma": sc.noise.sigma, "seed": sc.noise.seed,
                    "trials": sc.noise.trials}
    doc["protocol"] = {"step": sc.protocol.step, "max_iters": sc.protocol.max_iters, "tol": sc.protocol.tol,
                       "init_seed": sc.protocol.init_seed, "stop": sc.protocol.stop}
    return doc


def _compact_lists(text):
    # keep numeric/id arrays on one line for readability
    out, depth, buf = [], 0, []
    for line in text.split("\n"):
        stripped = line.strip()
        if depth:
            buf.append(stripped)
            if stripped.startswith("]"):
                depth -= 1
                if depth == 0:
                    head = buf[0]
                    body = " ".join(buf[1:-1])
                    out.append(head + body + buf[-1])
                    buf = []
            continue
        if stripped.endswith("[") and _is_leaf_list_start(line):
            depth, buf = 1, [line]
            continue
        out.append(line)
    return "\n".join(out)


def _is_leaf_list_start(line):
    key = line.strip()
    return any(key.startswith(f'"{k}"') for k in ("position", "neighbors", "mu")) or key == "["


def serialize(sc):
    """Canonical text form; parse(serialize(s)) serializes back to identical bytes."""
    text = json.dumps(to_dict(sc), indent=2, ensure_ascii=False)
    return _compact_lists(text) + "\n"


def save(sc, path):
    atomic_write_text(path, serialize(sc))


# -- builders for reference scenarios ----------------------------------------------------------

CUBE_POSITIONS = (
    (20.0, -20.0, -20.0), (20.0, 20.0, -20.0), (-20.0, 20.0, -20.0), (20.0, 20.0, 20.0),
    (-20.0, -20.0, -20.0), (20.0, -20.0, 20.0), (-20.0, 20.0, 20.0), (-20.0, -20.0, 20.0),
)


def cube(modality="local_position", frames_seed=0, angle_mode="single"):
    """Eight-node cube: four anchors, four free nodes, complete graph."""
    nodes = tuple(NodeSpec(str(i + 1), "anchor" if i < 4 else "free", p) for i, p in enumerate(CUBE_POSITIONS))
    return Scenario("cube", 3, modality, nodes, "complete", angle_mode, frames_seed,
                    protocol=ProtocolSpec(tol=1e-10))


def planar_chain():
    """Planar network with three anchors and three free nodes, each free node on a triangle star."""
    nodes = (
        NodeSpec("i", "anchor", (1.0, 0.0)),
        NodeSpec("j", "anchor", (3.0, 0.0)),
        NodeSpec("k", "anchor", (2.0, 1.0)),
        NodeSpec("h", "free", (3.0, 0.5)),
        NodeSpec("l", "free", (4.0, 0.1)),
        NodeSpec("g", "free", (3.8, 0.28)),
    )
    stars = (
        StarSpec("h", ("i", "j", "k"), (1.0, -3.0, -2.0)),
        StarSpec("l", ("i", "j", "h"), (5.0, -13.0, -2.0)),
        StarSpec("g", ("j", "h", "l"), (1.0, -2.0, -4.0)),
    )
    edges = [("i", "j"), ("i", "k"), ("j", "k")]
    for s in stars:
        edges += [(s.center, v) for v in s.neighbors]
    return Scenario("planar_chain", 2, "local_position", nodes, tuple(edges), "single", None, stars)


def coplanar_anchor_counterexample():
    """Exactly four coplanar anchors (z = 0) with free nodes off the plane: reflecting the free
    nodes through z = 0 preserves every constraint."""
    anchors = [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (10.0, 10.0, 0.0), (0.0, 10.0, 0.0)]
    frees = [(2.0, 3.0, 4.0), (7.0, 2.0, 5.0), (4.0, 8.0, 3.0), (6.0, 6.0, 7.0)]
    nodes = tuple(NodeSpec(f"a{m}", "anchor", p) for m, p in enumerate(anchors)) + \
        tuple(NodeSpec(f"f{m}", "free", p) for m, p in enumerate(frees))
    return Scenario("coplanar_anchors", 3, "local_position", nodes, "complete", "single", 0)


def colinear_anchor_counterexample():
    """Exactly three colinear anchors on the x axis with planar free nodes off the line."""
    anchors = [(0.0, 0.0), (4.0, 0.0), (9.0, 0.0)]
    frees = [(2.0, 3.0), (6.0, 4.0), (5.0, 1.5)]
    nodes = tuple(NodeSpec(f"a{m}", "anchor", p) for m, p in enumerate(anchors)) + \
        tuple(NodeSpec(f"f{m}", "free", p) for m, p in enumerate(frees))
    return Scenario("colinear_anchors", 2, "local_position", nodes, "complete", "single", 0)


def reflect_free(sc):
    """Free-node positions mirrored through the anchor plane (3-D, z = 0) or line (2-D, y = 0)."""
    P = sc.true_free_positions().copy()
    P[:, 2 if sc.dimension == 3 else 1] *= -1.0
    return P


def random_network(rng, n=None, dim=3, modality="local_position", degree=None, max_tries=50):
    """Random localizable network with generic positions and a k-nearest-neighbour graph.

    Anchors are the first ``dim + 1`` nodes (plus a few extra); the graph joins every node to its
    ``degree`` nearest neighbours and makes the anchors a clique.
    """
    for _ in range(max_tries):
        n_ = int(rng.integers(dim + 3, 21)) if n is None else n
        na = int(rng.integers(dim + 1, min(dim + 4, n_ - 1)))
        P = rng.uniform(-10.0, 10.0, size=(n_, dim))
        k = degree or min(n_ - 1, dim + 3)
        dist = np.linalg.norm(P[:, None] - P[None], axis=-1)
        edges = set()
        for i in range(n_):
            for j in np.argsort(dist[i])[1: k + 1]:
                edges.add((min(i, int(j)), max(i, int(j))))
        for i in range(na):
            for j in range(i + 1, na):
                edges.add((i, j))
        nodes = tuple(NodeSpec(str(i), "anchor" if i < na else "free", tuple(P[i])) for i in range(n_))
        sc = Scenario("random", dim, modality, nodes, tuple((str(a), str(b)) for a, b in sorted(edges)),
                      "single", int(rng.integers(0, 2 ** 31)))
        try:
            cs = sc.constraint_set()
            R = assemble_rigidity_matrix(cs, sc.anchor_positions, n_, na)
            if nullity_report(R, sc.configuration().embedded()).is_localizable:
                return sc
        except LocalizationError:
            continue
    raise ScenarioError("could not draw a localizable random network")
