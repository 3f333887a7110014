"""Direct localization solve and noise-perturbation analysis.

Positions are handled as stacked 3-D vectors (see :mod:`adrigidity.rigidity`):
``p_a`` has length 3 n_a and ``p_f`` length 3 n_f.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .constraints import CONSISTENCY_TOL, build_constraint_set
from .core import rank_tol
from .errors import BoundInapplicableError, NotLocalizableError
from .measurements import add_measurement_noise
from .rigidity import assemble_rigidity_matrix, information_matrix, partition


@dataclass(frozen=True, eq=False)
class NoisePerturbation:
    """Additive errors on the free blocks of the information matrix.

    ``provenance`` is "matrix" for direct injection or "measurement" when the
    error comes from rebuilding constraints out of noisy sensor data.
    """

    dD_ff: np.ndarray
    dD_fa: np.ndarray
    provenance: str

    def __post_init__(self):
        ff, fa = np.asarray(self.dD_ff, dtype=float), np.asarray(self.dD_fa, dtype=float)
        if ff.ndim != 2 or ff.shape[0] != ff.shape[1] or fa.ndim != 2 or fa.shape[0] != ff.shape[0]:
            raise ValueError(f"incompatible perturbation shapes {ff.shape} and {fa.shape}")
        object.__setattr__(self, "dD_ff", ff)
        object.__setattr__(self, "dD_fa", fa)

    @classmethod
    def zero(cls, n_free3, n_anchor3, provenance="matrix"):
        return cls(np.zeros((n_free3, n_free3)), np.zeros((n_free3, n_anchor3)), provenance)


def spectral_norm(M):
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _free_null_motions(D_ff, tol):
    lam, vec = np.linalg.eigh(D_ff)
    scale = max(abs(lam[-1]), np.finfo(float).tiny)
    return vec[:, lam <= tol * scale], float(lam[0])


def solve_free(D_ff, D_fa, p_a, tol=None):
    """Solve D_ff p_f = -D_fa p_a by Cholesky; NotLocalizableError if D_ff is singular."""
    D_ff = np.asarray(D_ff, dtype=float)
    if D_ff.size == 0:
        return np.zeros(0)
    tol = rank_tol() if tol is None else tol
    motions, lam_min = _free_null_motions(D_ff, tol)
    if motions.shape[1]:
        raise NotLocalizableError(
            f"D_ff is singular (lambda_min={lam_min:.3e}); {motions.shape[1]} free-node motion(s) "
            "leave every constraint unchanged", motions=motions, lambda_min=lam_min)
    try:
        factor = cho_factor(D_ff)
    except LinAlgError as exc:
        raise NotLocalizableError(f"D_ff is not positive definite: {exc}", lambda_min=lam_min) from exc
    return cho_solve(factor, -np.asarray(D_fa) @ np.asarray(p_a, dtype=float))


def direct_localize(D, p_a, n_anchors, tol=None):
    """Free-node positions minimizing the constraint cost for known anchors.

    Args:
        D: information matrix (3n x 3n), anchors first
        p_a: stacked anchor positions (length 3 n_anchors, or an (n_a, 3) array)
        n_anchors: anchor count

    Returns:
        stacked free positions of length 3 (n - n_anchors)
    """
    _, _, D_fa, D_ff = partition(np.asarray(D, dtype=float), n_anchors)
    return solve_free(D_ff, D_fa, np.ravel(p_a), tol)


def noise_nonsingularity_check(D_ff, dD_ff):
    """Whether ||dD_ff|| < lambda_min(D_ff), which keeps D_ff + dD_ff nonsingular."""
    D_ff = np.asarray(D_ff, dtype=float)
    if D_ff.size == 0:
        return True
    lam_min = float(np.linalg.eigvalsh(D_ff)[0])
    return spectral_norm(dD_ff) < lam_min


def error_bound(D, dD_ff, dD_fa, p_a, p_f, n_anchors=None):
    """Upper bound on ||p_f_hat - p_f|| when solving with D + dD.

    Accepts either the full information matrix together with ``n_anchors`` or
    D_ff directly (then ``n_anchors`` is None).

        ||dp|| <= (||dD_fa|| ||p_a|| + ||dD_ff|| ||p_f||) / (lambda_min(D_ff) - ||dD_ff||)
    """
    D_ff = _ff_block(D, n_anchors)
    if not noise_nonsingularity_check(D_ff, dD_ff):
        raise BoundInapplicableError("||dD_ff|| >= lambda_min(D_ff); the perturbed system may be singular")
    if D_ff.size == 0:
        return 0.0
    lam_min = float(np.linalg.eigvalsh(D_ff)[0])
    num = spectral_norm(dD_fa) * np.linalg.norm(p_a) + spectral_norm(dD_ff) * np.linalg.norm(p_f)
    return float(num / (lam_min - spectral_norm(dD_ff)))


def printed_error_bound(D, dD_ff, dD_fa, p_a, p_f, n_anchors=None):
    """(||dD_fa|| ||p_a|| + ||dD_ff|| ||p_f||) / (||I + D_ff^-1 dD_ff|| ||D_ff||).

    Kept for comparison only: this expression is not an upper bound in general.
    """
    D_ff = _ff_block(D, n_anchors)
    num = spectral_norm(dD_fa) * np.linalg.norm(p_a) + spectral_norm(dD_ff) * np.linalg.norm(p_f)
    M = np.eye(len(D_ff)) + np.linalg.solve(D_ff, dD_ff)
    return float(num / (spectral_norm(M) * spectral_norm(D_ff)))


def _ff_block(D, n_anchors):
    D = np.asarray(D, dtype=float)
    if n_anchors is None:
        return D
    return partition(D, n_anchors)[3]


def perturbed_solve(D, perturbation, p_a, n_anchors, tol=None):
    _, _, D_fa, D_ff = partition(np.asarray(D, dtype=float), n_anchors)
    return solve_free(D_ff + perturbation.dD_ff, D_fa + perturbation.dD_fa, np.ravel(p_a), tol)


def random_matrix_perturbation(D, n_anchors, rng, ff_norm, fa_norm=None, symmetric=True):
    """White-noise dD_ff, dD_fa rescaled to the requested spectral norms.

    ``fa_norm`` defaults to ``ff_norm``. With ``symmetric`` the free block is
    symmetrized before scaling so the perturbed D_ff stays symmetric.
    """
    k = 3 * n_anchors
    nf = D.shape[0] - k
    ff = rng.standard_normal((nf, nf))
    if symmetric:
        ff = 0.5 * (ff + ff.T)
    fa = rng.standard_normal((nf, k))
    fa_norm = ff_norm if fa_norm is None else fa_norm
    ff = ff * (ff_norm / spectral_norm(ff)) if ff.size else ff
    fa = fa * (fa_norm / spectral_norm(fa)) if fa.size else fa
    return NoisePerturbation(ff, fa, "matrix")


def inject_matrix_noise(D, n_anchors, sigma, rng, symmetric=True):
    """Element-wise Gaussian noise of standard deviation ``sigma`` on D_ff and D_fa."""
    k = 3 * n_anchors
    nf = D.shape[0] - k
    ff = rng.normal(scale=sigma, size=(nf, nf))
    if symmetric:
        ff = 0.5 * (ff + ff.T)
    fa = rng.normal(scale=sigma, size=(nf, k))
    return NoisePerturbation(ff, fa, "matrix")


def information_from_measurements(graph, anchor_positions, measurements, stars=None, angle_mode="single",
                                  tol=CONSISTENCY_TOL):
    cs = build_constraint_set(graph, anchor_positions, measurements, stars=stars, angle_mode=angle_mode, tol=tol)
    R = assemble_rigidity_matrix(cs, anchor_positions, graph.n, graph.n_anchors)
    return information_matrix(R), cs


def perturb_from_measurement_noise(measurements, sigma, seed, graph, anchor_positions, stars=None,
                                   angle_mode="single", D=None):
    """Rebuild D from noisy measurements and report the induced perturbation.

    The consistency check of star reconstruction is disabled for the noisy
    rebuild because noisy stars never embed exactly. Star selection follows the
    noise-free build so both matrices use the same constraints.

    Returns:
        (D_hat, NoisePerturbation)
    """
    if D is None or stars is None:
        D0, cs0 = information_from_measurements(graph, anchor_positions, measurements, stars, angle_mode)
        D = D0 if D is None else D
        if stars is None:
            stars = [dc.members for dc in cs0.displacements]
    rng = np.random.default_rng(seed)
    noisy = add_measurement_noise(measurements, sigma, rng)
    D_hat, _ = information_from_measurements(graph, anchor_positions, noisy, stars, angle_mode, tol=None)
    dD = D_hat - D
    _, _, dD_fa, dD_ff = partition(dD, graph.n_anchors)
    return D_hat, NoisePerturbation(dD_ff, dD_fa, "measurement")
