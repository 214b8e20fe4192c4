"""Recursive least-squares state for confounder residualization.

Each example contributes a design row ``[confounders..., label, 1]`` of
length ``p = k + 2`` and a feature vector ``z`` of length ``h``. The state
keeps the coefficients ``beta`` (p x h) and ``p_inv``, the running estimate
of ``(sum x x^T)^-1``. Only the confounder block of ``beta`` is removed from
features; the label and bias rows absorb signal that must be kept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import matrix
from .errors import InstabilityError, ParameterError, ShapeError, SingularityError


@dataclass(frozen=True)
class RmdnState:
    beta: np.ndarray
    p_inv: np.ndarray
    epsilon: float
    lam: float
    n_seen: int = 0

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def h(self) -> int:
        return self.beta.shape[1]

    @property
    def k(self) -> int:
        """Number of confounder columns in the design."""
        return self.p - 2

    def copy(self) -> "RmdnState":
        return replace(self, beta=self.beta.copy(), p_inv=self.p_inv.copy())


def init_state(p: int, h: int, epsilon: float, lam: float = 0.0) -> RmdnState:
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    if p < 1 or h < 1:
        raise ParameterError(f"p and h must be positive, got p={p}, h={h}")
    return RmdnState(
        beta=np.zeros((p, h)),
        p_inv=epsilon * np.eye(p),
        epsilon=float(epsilon),
        lam=float(lam),
        n_seen=0,
    )


def design_matrix(confounders, labels) -> np.ndarray:
    """Stack ``[confounders, label, 1]`` rows (B x (k + 2))."""
    conf = np.asarray(confounders, dtype=np.float64)
    if conf.ndim == 1:
        conf = conf[:, None]
    lab = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if lab.shape[0] != conf.shape[0]:
        raise ShapeError(f"{conf.shape[0]} confounder rows but {lab.shape[0]} labels")
    return np.hstack([conf, lab, np.ones_like(lab)])


def update_sample(state: RmdnState, x, z) -> RmdnState:
    """Absorb one example using the Kalman-gain form of the recursion."""
    x = matrix.as_vec(x, "x")
    z = matrix.as_vec(z, "z")
    if x.size != state.p or z.size != state.h:
        raise ShapeError(f"expected x[{state.p}], z[{state.h}]; got x[{x.size}], z[{z.size}]")
    px = state.p_inv @ x
    denom = 1.0 + x @ px
    if denom <= matrix.DENOM_TOL:
        raise InstabilityError(f"gain denominator {denom:.3e} <= {matrix.DENOM_TOL}")
    gain = px / denom
    err = z - state.beta.T @ x  # a-priori error
    beta = state.beta + np.outer(gain, err)
    p_inv = matrix.sm_rank1_inverse_update(state.p_inv, x)
    p_inv = p_inv + state.lam * np.eye(state.p)
    return replace(state, beta=beta, p_inv=p_inv, n_seen=state.n_seen + 1)


def update_batch(state: RmdnState, xb, zb) -> RmdnState:
    """Absorb a mini-batch in one block update.

    With ``G = I + xb P xb^T`` the gain is ``K = P xb^T G^-1`` and
    ``beta += K (zb - xb beta)``; ``P`` follows the Woodbury identity and
    then receives the ``lam * I`` ridge term.
    """
    xb = matrix.as_mat(xb, "xb")
    zb = matrix.as_mat(zb, "zb")
    bsz = xb.shape[0]
    if bsz < 1:
        raise ShapeError("empty batch")
    if xb.shape[1] != state.p or zb.shape != (bsz, state.h):
        raise ShapeError(f"expected xb[B x {state.p}], zb[B x {state.h}]; got {xb.shape}, {zb.shape}")
    pxt = state.p_inv @ xb.T
    gram = matrix.symmetrize(np.eye(bsz) + xb @ pxt)
    try:
        gain_t = matrix.solve_spd(gram, pxt.T)  # B x p, equals K^T
    except SingularityError as exc:
        raise InstabilityError(f"singular gain matrix: {exc}") from exc
    err = zb - xb @ state.beta
    beta = state.beta + gain_t.T @ err
    p_inv = matrix.symmetrize(state.p_inv - pxt @ gain_t)
    p_inv = p_inv + state.lam * np.eye(state.p)
    return replace(state, beta=beta, p_inv=p_inv, n_seen=state.n_seen + bsz)


def residualize(state: RmdnState, confounders, z) -> np.ndarray:
    """Remove the confounder-explained part of ``z`` using the stored betas.

    Labels are not needed; only the first ``k`` rows of ``beta`` are used.
    """
    conf = np.asarray(confounders, dtype=np.float64)
    if conf.ndim == 1:
        conf = conf[:, None]
    z = np.asarray(z, dtype=np.float64)
    if conf.shape[1] != state.k:
        raise ShapeError(f"state expects {state.k} confounders, got {conf.shape[1]}")
    if z.ndim != 2 or z.shape != (conf.shape[0], state.h):
        raise ShapeError(f"z must be {conf.shape[0]} x {state.h}, got {z.shape}")
    return z - conf @ state.beta[: state.k]


def ols_fit(x_all, z_all) -> np.ndarray:
    """Closed-form least squares ``(X^T X)^-1 X^T z``."""
    x_all = matrix.as_mat(x_all, "x_all")
    z_all = np.asarray(z_all, dtype=np.float64)
    if z_all.ndim == 1:
        z_all = z_all[:, None]
    if z_all.shape[0] != x_all.shape[0]:
        raise ShapeError(f"{x_all.shape[0]} design rows but {z_all.shape[0]} feature rows")
    if x_all.shape[0] < x_all.shape[1]:
        raise SingularityError(f"rank deficient: N={x_all.shape[0]} < p={x_all.shape[1]}")
    gram = matrix.symmetrize(x_all.T @ x_all)
    return matrix.solve_spd(gram, x_all.T @ z_all)


def mdn_batch_beta(sigma_inv, xb, zb, n_total: int) -> np.ndarray:
    """Batch MDN estimator ``N * Sigma^-1 * mean(x z^T)``.

    ``sigma_inv`` is ``(X^T X)^-1`` precomputed over the full training set.
    """
    sigma_inv = matrix.as_mat(sigma_inv, "sigma_inv")
    xb = matrix.as_mat(xb, "xb")
    zb = np.asarray(zb, dtype=np.float64)
    if zb.ndim == 1:
        zb = zb[:, None]
    if xb.shape[0] != zb.shape[0] or sigma_inv.shape != (xb.shape[1], xb.shape[1]):
        raise ShapeError(f"incompatible shapes sigma_inv={sigma_inv.shape}, xb={xb.shape}, zb={zb.shape}")
    cross = xb.T @ zb / xb.shape[0]
    return n_total * (sigma_inv @ cross)
