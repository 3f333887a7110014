"""Synthesis of local relative measurements and sensor-level noise.

A :class:`MeasurementSet` holds what each node observes in its own (unknown)
frame. Per modality, ``observations[i]`` is:

* ``local_position``: ``{j: e_ij^i}`` for every neighbour j
* ``local_bearing``: ``{j: g_ij^i}`` for every neighbour j
* ``distance``: ``{j: d_ij}`` for every neighbour j (both endpoints see one value)
* ``angle``: ``{(j, k): g_ij^i . g_ik^i}`` for neighbour pairs j < k
* ``ratio_of_distance``: ``{(j, k): d_ij / d_ik}`` for neighbour pairs j < k
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MODALITIES = ("local_position", "distance", "local_bearing", "angle", "ratio_of_distance")


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    modality: str
    dim: int
    observations: dict

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")

    def at(self, i):
        return self.observations.get(i, {})


def synthesize_measurements(config, graph, frames, modality):
    """Generate the observations every node would make on ``config``.

    Vector observations are rotated into the local frames (``Q_i^T e_ij``);
    scalar observations are frame independent.
    """
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    if frames.dim != config.dim or len(frames.rotations) != config.n:
        raise ValueError("frame assignment does not match configuration")
    p = config.positions
    obs = {}
    for i in range(config.n):
        nbrs = graph.neighbors(i)
        e = {j: p[j] - p[i] for j in nbrs}
        d = {j: float(np.linalg.norm(v)) for j, v in e.items()}
        Qt = frames.rotations[i].T
        if modality == "local_position":
            obs[i] = {j: Qt @ e[j] for j in nbrs}
        elif modality == "local_bearing":
            obs[i] = {j: Qt @ (e[j] / d[j]) for j in nbrs}
        elif modality == "distance":
            obs[i] = dict(d)
        elif modality == "angle":
            g = {j: Qt @ (e[j] / d[j]) for j in nbrs}
            obs[i] = {(j, k): float(np.clip(g[j] @ g[k], -1.0, 1.0))
                      for j, k in itertools.combinations(nbrs, 2)}
        else:
            obs[i] = {(j, k): d[j] / d[k] for j, k in itertools.combinations(nbrs, 2)}
    return MeasurementSet(modality, config.dim, obs)


def add_measurement_noise(ms, sigma, rng):
    """Return a noisy copy of ``ms``.

    Noise per channel: additive Gaussian on local positions and bearings
    (bearings re-normalised), additive on distances (clamped positive, drawn
    once per undirected edge), additive on angle cosines (clamped to [-1, 1])
    and multiplicative log-normal on ratios.
    """
    if sigma == 0:
        return MeasurementSet(ms.modality, ms.dim, {i: dict(o) for i, o in ms.observations.items()})
    obs = {}
    edge_noise = {}
    for i in sorted(ms.observations):
        rec = ms.observations[i]
        out = {}
        for key in sorted(rec):
            v = rec[key]
            if ms.modality == "local_position":
                out[key] = v + rng.normal(scale=sigma, size=ms.dim)
            elif ms.modality == "local_bearing":
                w = v + rng.normal(scale=sigma, size=ms.dim)
                out[key] = w / np.linalg.norm(w)
            elif ms.modality == "distance":
                edge = (min(i, key), max(i, key))
                if edge not in edge_noise:
                    edge_noise[edge] = rng.normal(scale=sigma)
                out[key] = max(v + edge_noise[edge], 1e-12 * v)
            elif ms.modality == "angle":
                out[key] = float(np.clip(v + rng.normal(scale=sigma), -1.0, 1.0))
            else:
                out[key] = v * float(np.exp(rng.normal(scale=sigma)))
        obs[i] = out
    return MeasurementSet(ms.modality, ms.dim, obs)
