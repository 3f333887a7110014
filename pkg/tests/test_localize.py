import numpy as np
import pytest

from adrigidity import scenario as S
from adrigidity.errors import BoundInapplicableError, NotLocalizableError
from adrigidity.localize import (
    NoisePerturbation,
    direct_localize,
    error_bound,
    inject_matrix_noise,
    noise_nonsingularity_check,
    perturb_from_measurement_noise,
    perturbed_solve,
    printed_error_bound,
    random_matrix_perturbation,
    solve_free,
    spectral_norm,
)
from adrigidity.rigidity import assemble_rigidity_matrix, information_matrix, partition


def _setup(sc):
    cs = sc.constraint_set()
    R = assemble_rigidity_matrix(cs, sc.anchor_positions, sc.n, sc.n_anchors)
    D = information_matrix(R)
    cfg = sc.configuration().embedded()
    return D, cfg[: sc.n_anchors].ravel(), cfg[sc.n_anchors:].ravel()


@pytest.fixture(scope="module")
def cube_system():
    return _setup(S.cube())


def test_planar_chain_recovers_truth():
    sc = S.planar_chain()
    D, pa, pf = _setup(sc)
    est = direct_localize(D, pa, sc.n_anchors)
    assert np.max(np.abs(est - pf)) <= 1e-9
    assert np.allclose(est.reshape(-1, 3)[:, 2], 0.0, atol=1e-12)


@pytest.mark.parametrize("modality", ["local_position", "angle", "ratio_of_distance"])
def test_cube_recovers_truth(modality):
    D, pa, pf = _setup(S.cube(modality, frames_seed=3))
    est = direct_localize(D, pa, 4)
    assert np.linalg.norm(est - pf) <= 4e-7
    _, _, D_fa, D_ff = partition(D, 4)
    # normal-equation residual
    assert np.linalg.norm(D_ff @ est + D_fa @ pa) <= 1e-9 * np.linalg.norm(D, 2) * np.linalg.norm(pa)


def test_identity_system():
    pa = np.arange(3.0)
    est = solve_free(np.eye(3), -np.eye(3), pa)
    assert np.allclose(est, pa)
    assert solve_free(np.zeros((0, 0)), np.zeros((0, 3)), pa).shape == (0,)


def test_singular_system_reports_motions():
    sc = S.coplanar_anchor_counterexample()
    D, pa, _ = _setup(sc)
    with pytest.raises(NotLocalizableError) as info:
        direct_localize(D, pa, sc.n_anchors)
    M = info.value.motions
    assert M is not None and M.shape[1] >= 1
    _, _, _, D_ff = partition(D, sc.n_anchors)
    assert np.linalg.norm(D_ff @ M) <= 1e-8 * np.linalg.norm(D, 2)


def test_nonsingularity_check_is_strict():
    D_ff = np.diag([2.0, 3.0])
    assert noise_nonsingularity_check(D_ff, np.diag([1.9, 0.0]))
    assert not noise_nonsingularity_check(D_ff, np.diag([2.0, 0.0]))
    with pytest.raises(BoundInapplicableError):
        error_bound(D_ff, np.diag([2.0, 0.0]), np.zeros((2, 1)), np.ones(1), np.ones(2))


def test_error_bound_zero_without_noise(cube_system):
    D, pa, pf = cube_system
    z = NoisePerturbation.zero(12, 12)
    assert error_bound(D, z.dD_ff, z.dD_fa, pa, pf, 4) == 0.0
    assert np.allclose(perturbed_solve(D, z, pa, 4), pf, atol=4e-7)


def test_error_bound_holds_on_random_perturbations(cube_system):
    D, pa, pf = cube_system
    _, _, _, D_ff = partition(D, 4)
    lam = np.linalg.eigvalsh(D_ff)[0]
    rng = np.random.default_rng(0)
    for _ in range(100):
        pert = random_matrix_perturbation(D, 4, rng, ff_norm=rng.uniform(0, 0.9) * lam,
                                          fa_norm=rng.uniform(0, 0.9) * lam)
        assert spectral_norm(pert.dD_ff) < lam
        err = np.linalg.norm(perturbed_solve(D, pert, pa, 4) - pf)
        assert err <= error_bound(D, pert.dD_ff, pert.dD_fa, pa, pf, 4) * (1 + 1e-9) + 1e-9


@pytest.mark.xfail(strict=True, reason="the printed expression underestimates the error")
def test_printed_bound_is_not_an_upper_bound(cube_system):
    D, pa, pf = cube_system
    rng = np.random.default_rng(1)
    _, _, _, D_ff = partition(D, 4)
    lam = np.linalg.eigvalsh(D_ff)[0]
    for _ in range(100):
        pert = random_matrix_perturbation(D, 4, rng, ff_norm=0.5 * lam)
        err = np.linalg.norm(perturbed_solve(D, pert, pa, 4) - pf)
        assert err <= printed_error_bound(D, pert.dD_ff, pert.dD_fa, pa, pf, 4)


def test_perturbation_shapes_and_symmetry(cube_system):
    D = cube_system[0]
    rng = np.random.default_rng(5)
    pert = random_matrix_perturbation(D, 4, rng, ff_norm=0.7, fa_norm=0.2)
    assert pert.dD_ff.shape == (12, 12) and pert.dD_fa.shape == (12, 12)
    assert np.array_equal(pert.dD_ff, pert.dD_ff.T)
    assert spectral_norm(pert.dD_ff) == pytest.approx(0.7)
    assert spectral_norm(pert.dD_fa) == pytest.approx(0.2)
    noisy = inject_matrix_noise(D, 4, 0.01, np.random.default_rng(5))
    assert np.array_equal(noisy.dD_ff, noisy.dD_ff.T)
    with pytest.raises(ValueError):
        NoisePerturbation(np.zeros((3, 2)), np.zeros((3, 1)), "matrix")


def test_measurement_noise_perturbation():
    sc = S.cube("distance", frames_seed=2)
    ms = sc.measurements()
    D0, _, _ = _setup(sc)
    D_hat, pert = perturb_from_measurement_noise(ms, 0.0, 4, sc.graph(), sc.anchor_positions)
    assert pert.provenance == "measurement"
    assert spectral_norm(pert.dD_ff) <= 1e-9 * np.linalg.norm(D0, 2)
    a = perturb_from_measurement_noise(ms, 1e-3, 4, sc.graph(), sc.anchor_positions)[1]
    b = perturb_from_measurement_noise(ms, 1e-3, 4, sc.graph(), sc.anchor_positions)[1]
    assert np.array_equal(a.dD_ff, b.dD_ff) and np.array_equal(a.dD_fa, b.dD_fa)
    assert spectral_norm(a.dD_ff) > 0
