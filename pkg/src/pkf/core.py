"""Shared domain types, model-matrix constructors, and bounding-box conversions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidDetectionError(ValueError):
    """Detection box has non-positive width or height."""


class DegenerateStateError(ValueError):
    """Box state has non-positive area or aspect ratio."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed (singular or severely ill-conditioned matrix)."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """Force exact symmetry; applied after every covariance-producing step."""
    return 0.5 * (mat + mat.T)


@dataclass
class GaussianBelief:
    """Gaussian state estimate of one object: mean vector and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(f"cov shape {self.cov.shape} does not match mean length {n}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def copy(self) -> "GaussianBelief":
        return GaussianBelief(self.mean.copy(), self.cov.copy())

    def check_valid(self, sym_tol: float = 1e-9, psd_tol: float = 1e-9) -> None:
        """Raise if the covariance is asymmetric, indefinite, or non-finite."""
        if not np.all(np.isfinite(self.mean)) or not np.all(np.isfinite(self.cov)):
            raise ValueError("non-finite belief state")
        scale = 1.0 + np.abs(self.cov).max(initial=0.0)
        asym = np.abs(self.cov - self.cov.T).max(initial=0.0)
        if asym >= sym_tol * scale:
            raise ValueError(f"covariance asymmetry {asym:.3e} exceeds tolerance")
        eigs = np.linalg.eigvalsh(symmetrize(self.cov))
        norm = max(np.abs(eigs).max(initial=0.0), 1.0)
        if eigs.min(initial=0.0) < -psd_tol * norm:
            raise ValueError(f"covariance not PSD (min eigenvalue {eigs.min():.3e})")


@dataclass
class LinearModel:
    """Linear-Gaussian motion and measurement model (F, G, W, H, V)."""

    F: np.ndarray
    G: np.ndarray
    W: np.ndarray
    H: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        n = self.F.shape[0]
        m = self.H.shape[0]
        if self.F.shape != (n, n):
            raise ValueError("F must be square")
        if self.W.shape != (n, n):
            raise ValueError("W must match state dimension")
        if self.H.shape[1] != n:
            raise ValueError("H columns must match state dimension")
        if self.V.shape != (m, m):
            raise ValueError("V must match measurement dimension")
        if self.G.ndim != 2 or self.G.shape[0] != n:
            raise ValueError("G rows must match state dimension")

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]


@dataclass
class Detection:
    """One detected box: (left, top, width, height) pixels plus confidence."""

    bbox: tuple[float, float, float, float]
    confidence: float = 1.0
    frame: int = 1

    def __post_init__(self):
        left, top, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise InvalidDetectionError(f"non-positive box size {w}x{h}")
        self.bbox = (float(left), float(top), float(w), float(h))


def sort_motion_model() -> LinearModel:
    """Constant-velocity box model: state [u, v, s, r, du, dv, ds], measurement [u, v, s, r]."""
    F = np.eye(7)
    F[0, 4] = F[1, 5] = F[2, 6] = 1.0
    G = np.zeros((7, 1))
    W = np.diag([1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01])
    H = np.zeros((4, 7))
    H[:4, :4] = np.eye(4)
    V = np.diag([1.0, 1.0, 10.0, 10.0])
    return LinearModel(F=F, G=G, W=W, H=H, V=V)


def bbox_to_z(bbox) -> np.ndarray:
    """(left, top, w, h) -> [center u, center v, area s, aspect ratio r]."""
    left, top, w, h = (float(x) for x in bbox)
    if w <= 0 or h <= 0:
        raise InvalidDetectionError(f"non-positive box size {w}x{h}")
    return np.array([left + w / 2.0, top + h / 2.0, w * h, w / h])


def z_to_bbox(z) -> tuple[float, float, float, float]:
    """[u, v, s, r] -> (left, top, w, h); caller decides how to handle degenerate s or r."""
    u, v, s, r = (float(x) for x in np.asarray(z).reshape(-1)[:4])
    if s <= 0 or r <= 0:
        raise DegenerateStateError(f"non-positive area/aspect s={s} r={r}")
    w = np.sqrt(s * r)
    h = np.sqrt(s / r)
    return (u - w / 2.0, v - h / 2.0, w, h)


def cv2d_motion_model(meas_var: float = 0.75,
                      pos_noise: float = 1e-4,
                      vel_noise: float = 0.01) -> LinearModel:
    """Planar constant-velocity point model: state [px, py, vx, vy], measurement [px, py]."""
    F = np.eye(4)
    F[0, 2] = F[1, 3] = 1.0
    G = np.zeros((4, 1))
    W = np.diag([pos_noise, pos_noise, vel_noise, vel_noise])
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    V = np.diag([meas_var, meas_var])
    return LinearModel(F=F, G=G, W=W, H=H, V=V)
