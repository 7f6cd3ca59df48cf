"""Prediction and measurement updates: vanilla KF, expanded-measurement update
with association weights, weighted-innovation (JPDAF-style) update, pooled
(PMHT-style) update, and the information-form recursion used as a cross-check."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import GaussianBelief, LinearModel, NumericalError, symmetrize

WEIGHT_FLOOR = 1e-6


def _solve_spd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve S X = B for symmetric PSD S: Cholesky, eigendecomposition on failure."""
    try:
        return cho_solve(cho_factor(S, lower=True, check_finite=False), B,
                         check_finite=False)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(S)
    top = evals.max(initial=0.0)
    if top <= 0.0:
        raise NumericalError("innovation covariance has no positive eigenvalues")
    good = evals > top * 1e-14
    if not np.all(good):
        cond = top / max(evals.min(), 1e-300)
        if np.count_nonzero(good) == 0:
            raise NumericalError(f"innovation covariance singular (cond={cond:.3e})")
    inv = np.where(good, 1.0 / np.where(good, evals, 1.0), 0.0)
    return evecs @ (inv[:, None] * (evecs.T @ B))


def predict(belief: GaussianBelief, model: LinearModel, u=None) -> GaussianBelief:
    """Propagate through the motion model: mean F mu + G u, cov F Sigma F^T + W."""
    mean = model.F @ belief.mean
    if u is not None:
        mean = mean + model.G @ np.asarray(u, dtype=float).reshape(-1)
    cov = symmetrize(model.F @ belief.cov @ model.F.T + model.W)
    return GaussianBelief(mean, cov)


def _gain_update(belief, z_stack, H_stack, V_stack, joseph: bool) -> GaussianBelief:
    S = symmetrize(H_stack @ belief.cov @ H_stack.T + V_stack)
    # K = Sigma H^T S^-1 via the solve S K^T = H Sigma
    K = _solve_spd(S, H_stack @ belief.cov).T
    innovation = z_stack - H_stack @ belief.mean
    mean = belief.mean + K @ innovation
    if joseph:
        A = np.eye(belief.dim) - K @ H_stack
        cov = A @ belief.cov @ A.T + K @ V_stack @ K.T
    else:
        cov = (np.eye(belief.dim) - K @ H_stack) @ belief.cov
    return GaussianBelief(mean, symmetrize(cov))


def kf_update(belief: GaussianBelief, z, model: LinearModel,
              joseph: bool = True) -> GaussianBelief:
    """Standard Kalman update with a single measurement."""
    z = np.asarray(z, dtype=float).reshape(-1)
    return _gain_update(belief, z, model.H, model.V, joseph)


def _stack_expanded(measurements, weights, model, weight_floor):
    zs = [np.asarray(z, dtype=float).reshape(-1) for z in measurements]
    ws = [float(w) for w in weights]
    if len(zs) != len(ws):
        raise ValueError("measurements and weights must have equal length")
    if any(w <= 0 for w in ws):
        raise ValueError("association weights must be strictly positive")
    m = model.meas_dim
    K = len(zs)
    z_bar = np.concatenate(zs)
    H_bar = np.tile(model.H, (K, 1))
    V_bar = np.zeros((m * K, m * K))
    for i, w in enumerate(ws):
        V_bar[i * m:(i + 1) * m, i * m:(i + 1) * m] = model.V / max(w, weight_floor)
    return z_bar, H_bar, V_bar


def pkf_update(belief: GaussianBelief, measurements, weights, model: LinearModel,
               joseph: bool = True, weight_floor: float = WEIGHT_FLOOR) -> GaussianBelief:
    """Single Kalman step against the expanded measurement model.

    All weighted candidate measurements are stacked into one observation with
    block noise V / w_k, so one gain computation absorbs every association.
    """
    if len(measurements) == 0:
        raise ValueError("pkf_update requires at least one measurement")
    z_bar, H_bar, V_bar = _stack_expanded(measurements, weights, model, weight_floor)
    return _gain_update(belief, z_bar, H_bar, V_bar, joseph)


def info_form_update(belief: GaussianBelief, measurements, weights,
                     model: LinearModel,
                     weight_floor: float = WEIGHT_FLOOR) -> GaussianBelief:
    """Information-form equivalent of the expanded update; serves as its oracle.

    Posterior information is prior information plus sum_k w_k H^T V^-1 H; the
    mean solves the corresponding linear system rather than inverting.
    """
    if len(measurements) == 0:
        return belief.copy()
    ws = [max(float(w), weight_floor) for w in weights]
    if any(float(w) <= 0 for w in weights):
        raise ValueError("association weights must be strictly positive")
    n = belief.dim
    info_prior = _solve_spd(symmetrize(belief.cov), np.eye(n))
    Vinv_H = _solve_spd(symmetrize(model.V), model.H)
    HtVinvH = model.H.T @ Vinv_H
    info = info_prior + sum(w * HtVinvH for w in ws)
    rhs = info_prior @ belief.mean
    for z, w in zip(measurements, ws):
        z = np.asarray(z, dtype=float).reshape(-1)
        rhs = rhs + w * (Vinv_H.T @ z)
    info = symmetrize(info)
    mean = _solve_spd(info, rhs)
    cov = symmetrize(_solve_spd(info, np.eye(n)))
    return GaussianBelief(mean, cov)


def jpdaf_update(belief: GaussianBelief, measurements, weights, clutter_mass: float,
                 model: LinearModel) -> GaussianBelief:
    """Moment-matched weighted-innovation update.

    weights[k] is the probability measurement k belongs to this object and
    clutter_mass the probability none does; together they must sum to one.
    """
    ws = np.asarray([float(w) for w in weights], dtype=float)
    total = ws.sum() + float(clutter_mass)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights plus clutter mass must sum to 1, got {total!r}")
    if len(measurements) == 0:
        return belief.copy()
    H, V = model.H, model.V
    S = symmetrize(H @ belief.cov @ H.T + V)
    K = _solve_spd(S, H @ belief.cov).T
    residuals = np.stack([np.asarray(z, dtype=float).reshape(-1) - H @ belief.mean
                          for z in measurements])
    nu = ws @ residuals
    mean = belief.mean + K @ nu
    P_updated = symmetrize((np.eye(belief.dim) - K @ H) @ belief.cov)
    spread = (residuals.T * ws) @ residuals - np.outer(nu, nu)
    cov = (clutter_mass * belief.cov + (1.0 - clutter_mass) * P_updated
           + K @ spread @ K.T)
    return GaussianBelief(mean, symmetrize(cov))


def pmht_update(belief: GaussianBelief, measurements, weights,
                model: LinearModel, joseph: bool = True) -> GaussianBelief:
    """Pooled-measurement update: weighted mean measurement with noise V / sum(w)."""
    ws = np.asarray([float(w) for w in weights], dtype=float)
    if len(measurements) == 0 or ws.sum() <= 0.0:
        return belief.copy()
    Z = np.stack([np.asarray(z, dtype=float).reshape(-1) for z in measurements])
    wsum = ws.sum()
    z_eff = (ws @ Z) / wsum
    return _gain_update(belief, z_eff, model.H, model.V / wsum, joseph)


def pkf_update_joint(joint_belief: GaussianBelief, n_objects: int, assignments,
                     model: LinearModel, joseph: bool = True,
                     weight_floor: float = WEIGHT_FLOOR) -> GaussianBelief:
    """Coupled-form expanded update over a stacked multi-object state.

    assignments: iterable of (measurement, object index, weight). The joint
    covariance keeps cross-object correlations; the decoupled per-track update
    is this operation with n_objects == 1.
    """
    items = [(np.asarray(z, dtype=float).reshape(-1), int(j), float(w))
             for z, j, w in assignments]
    if not items:
        return joint_belief.copy()
    if any(w <= 0 for _, _, w in items):
        raise ValueError("association weights must be strictly positive")
    n, m = model.state_dim, model.meas_dim
    if joint_belief.dim != n * n_objects:
        raise ValueError("joint belief dimension does not match n_objects")
    rows = len(items)
    z_bar = np.concatenate([z for z, _, _ in items])
    H_bar = np.zeros((rows * m, n * n_objects))
    V_bar = np.zeros((rows * m, rows * m))
    for i, (_, j, w) in enumerate(items):
        H_bar[i * m:(i + 1) * m, j * n:(j + 1) * n] = model.H
        V_bar[i * m:(i + 1) * m, i * m:(i + 1) * m] = model.V / max(w, weight_floor)
    return _gain_update(joint_belief, z_bar, H_bar, V_bar, joseph)


def joint_model(model: LinearModel, n_objects: int) -> LinearModel:
    """Block-diagonal stacking of a single-object model over n_objects."""
    eye = np.eye(n_objects)
    return LinearModel(F=np.kron(eye, model.F), G=np.kron(np.ones((n_objects, 1)), model.G),
                       W=np.kron(eye, model.W), H=np.kron(eye, model.H),
                       V=np.kron(eye, model.V))
