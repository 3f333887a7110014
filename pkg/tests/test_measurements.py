import itertools

import numpy as np
import pytest

from adrigidity.core import LocalFrameAssignment
from adrigidity.measurements import MeasurementSet, add_measurement_noise, synthesize_measurements


def test_identity_frames_give_global_relative_positions(cube_config, cube_graph):
    ms = synthesize_measurements(cube_config, cube_graph, LocalFrameAssignment.identity(8, 3), "local_position")
    P = cube_config.positions
    for i in range(8):
        for j, e in ms.at(i).items():
            assert np.array_equal(e, P[j] - P[i])


def test_local_positions_keep_length(cube_config, cube_graph):
    frames = LocalFrameAssignment.random(8, 3, seed=5)
    ms = synthesize_measurements(cube_config, cube_graph, frames, "local_position")
    P = cube_config.positions
    for i in range(8):
        for j, e in ms.at(i).items():
            assert np.isclose(np.linalg.norm(e), np.linalg.norm(P[j] - P[i]), rtol=1e-14)


def test_angles_match_global_computation(cube_config, cube_graph):
    frames = LocalFrameAssignment.random(8, 3, seed=11)
    ms = synthesize_measurements(cube_config, cube_graph, frames, "angle")
    P = cube_config.positions
    for i in range(8):
        for (j, k), c in ms.at(i).items():
            gj = (P[j] - P[i]) / np.linalg.norm(P[j] - P[i])
            gk = (P[k] - P[i]) / np.linalg.norm(P[k] - P[i])
            assert abs(c - gj @ gk) <= 1e-12


def test_bearings_are_unit_and_distances_symmetric(cube_config, cube_graph):
    frames = LocalFrameAssignment.random(8, 3, seed=2)
    b = synthesize_measurements(cube_config, cube_graph, frames, "local_bearing")
    d = synthesize_measurements(cube_config, cube_graph, frames, "distance")
    for i in range(8):
        for j, g in b.at(i).items():
            assert abs(np.linalg.norm(g) - 1.0) <= 1e-12
            assert d.at(i)[j] == d.at(j)[i]


def test_ratio_records(cube_config, cube_graph):
    ms = synthesize_measurements(cube_config, cube_graph, LocalFrameAssignment.identity(8, 3), "ratio_of_distance")
    P = cube_config.positions
    for (j, k), r in ms.at(0).items():
        assert np.isclose(r, np.linalg.norm(P[j] - P[0]) / np.linalg.norm(P[k] - P[0]))
    assert set(ms.at(0)) == set(itertools.combinations(range(1, 8), 2))


def test_unknown_modality_rejected(cube_config, cube_graph):
    with pytest.raises(ValueError):
        synthesize_measurements(cube_config, cube_graph, LocalFrameAssignment.identity(8, 3), "sonar")
    with pytest.raises(ValueError):
        MeasurementSet("sonar", 3, {})


@pytest.mark.parametrize("modality", ["local_position", "distance", "local_bearing", "angle", "ratio_of_distance"])
def test_noise_contract(cube_config, cube_graph, modality):
    ms = synthesize_measurements(cube_config, cube_graph, LocalFrameAssignment.random(8, 3, 0), modality)
    same = add_measurement_noise(ms, 0.0, np.random.default_rng(0))
    for i in range(8):
        for key, v in ms.at(i).items():
            assert np.array_equal(np.asarray(same.at(i)[key]), np.asarray(v))
    a = add_measurement_noise(ms, 0.05, np.random.default_rng(7))
    b = add_measurement_noise(ms, 0.05, np.random.default_rng(7))
    for i in range(8):
        for key in ms.at(i):
            assert np.array_equal(np.asarray(a.at(i)[key]), np.asarray(b.at(i)[key]))
            v = np.asarray(a.at(i)[key])
            if modality == "local_bearing":
                assert abs(np.linalg.norm(v) - 1.0) < 1e-12
            elif modality == "angle":
                assert -1.0 <= v <= 1.0
            elif modality in ("distance", "ratio_of_distance"):
                assert v > 0
    if modality == "distance":
        for i in range(8):
            for j in a.at(i):
                assert a.at(i)[j] == a.at(j)[i]
