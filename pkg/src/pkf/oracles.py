"""Brute-force reference implementations.

Everything here is deliberately naive (factorial enumeration, explicit matrix
inverses, explicit mixture moments) and independent of the production code
paths, so the two can check each other in tests and in the self-test command.
"""

from __future__ import annotations

import itertools

import numpy as np

from .core import GaussianBelief, LinearModel


def permanent_brute(Q) -> float:
    """Permanent by full enumeration of injective row-to-column assignments."""
    Q = np.asarray(Q, dtype=float)
    M, N = Q.shape
    if M > N:
        Q = Q.T
        M, N = N, M
    if M == 0:
        return 1.0
    total = 0.0
    rows = np.arange(M)
    for cols in itertools.permutations(range(N), M):
        total += float(np.prod(Q[rows, list(cols)]))
    return total


def pkf_weights_brute(Q) -> np.ndarray:
    """Association weights by summing every injective event, then row-normalizing."""
    Q = np.asarray(Q, dtype=float)
    M, N = Q.shape
    w = np.zeros((M, N))
    rows = np.arange(M)
    for cols in itertools.permutations(range(N), M):
        p = float(np.prod(Q[rows, list(cols)]))
        for k, j in enumerate(cols):
            w[k, j] += p
    sums = w.sum(axis=1, keepdims=True)
    return np.divide(w, sums, out=np.zeros_like(w), where=sums > 0)


def jpdaf_weights_brute(Q, p_detect: float, lam: float):
    """Weights plus clutter mass by enumerating clutter/object association events.

    Each event maps every measurement to an object (injectively) or to clutter;
    an event with phi clutter points and M - phi associations carries
    p_detect^(M-phi) (1-p_detect)^(N-M+phi) lam^phi times its likelihood product.
    """
    Q = np.asarray(Q, dtype=float)
    M, N = Q.shape
    w = np.zeros((M, N))
    clutter = np.zeros(M)
    Z = 0.0
    for assign in itertools.product(range(N + 1), repeat=M):
        chosen = [a for a in assign if a > 0]
        if len(chosen) != len(set(chosen)):
            continue
        phi = M - len(chosen)
        prob = (p_detect ** (M - phi)) * ((1.0 - p_detect) ** (N - M + phi)) * (lam ** phi)
        for k, a in enumerate(assign):
            if a > 0:
                prob *= Q[k, a - 1]
        if prob == 0.0:
            continue
        Z += prob
        for k, a in enumerate(assign):
            if a > 0:
                w[k, a - 1] += prob
            else:
                clutter[k] += prob
    if Z > 0:
        w /= Z
        clutter /= Z
    return w, clutter


def gaussian_density_direct(z, mean, cov) -> float:
    """Multivariate normal density via explicit inverse and determinant."""
    z = np.asarray(z, dtype=float).reshape(-1)
    mean = np.asarray(mean, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    d = z - mean
    quad = float(d @ np.linalg.inv(cov) @ d)
    norm = np.sqrt(((2.0 * np.pi) ** len(z)) * np.linalg.det(cov))
    return float(np.exp(-0.5 * quad) / norm)


def kf_update_direct(belief: GaussianBelief, z, model: LinearModel) -> GaussianBelief:
    """Textbook Kalman update written with explicit inverses."""
    z = np.asarray(z, dtype=float).reshape(-1)
    H, V = model.H, model.V
    P = belief.cov
    S = H @ P @ H.T + V
    K = P @ H.T @ np.linalg.inv(S)
    mean = belief.mean + K @ (z - H @ belief.mean)
    cov = (np.eye(belief.dim) - K @ H) @ P
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def mixture_update_moments(belief: GaussianBelief, measurements, weights,
                           clutter_mass: float, model: LinearModel):
    """Mean and covariance of the explicit posterior mixture.

    One component per associated measurement (its single-measurement Kalman
    posterior) plus the prior weighted by the clutter mass.
    """
    comps = [(float(clutter_mass), belief.mean, belief.cov)]
    for z, w in zip(measurements, weights):
        post = kf_update_direct(belief, z, model)
        comps.append((float(w), post.mean, post.cov))
    mean = sum(w * mu for w, mu, _ in comps)
    cov = np.zeros_like(belief.cov)
    for w, mu, P in comps:
        d = mu - mean
        cov += w * (P + np.outer(d, d))
    return mean, 0.5 * (cov + cov.T)


def pmht_update_direct(belief: GaussianBelief, measurements, weights,
                       model: LinearModel) -> GaussianBelief:
    """Pooled update from the written-out formula with explicit inverses."""
    ws = np.asarray([float(w) for w in weights], dtype=float)
    if len(measurements) == 0 or ws.sum() <= 0:
        return belief.copy()
    Z = np.stack([np.asarray(z, dtype=float).reshape(-1) for z in measurements])
    wsum = float(ws.sum())
    z_eff = (ws @ Z) / wsum
    H, V = model.H, model.V
    P = belief.cov
    S = H @ P @ H.T + V / wsum
    K = P @ H.T @ np.linalg.inv(S)
    mean = belief.mean + K @ (z_eff - H @ belief.mean)
    cov = (np.eye(belief.dim) - K @ H) @ P
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def best_assignment_brute(S) -> float:
    """Best total score over all full-cardinality injective assignments."""
    S = np.asarray(S, dtype=float)
    M, N = S.shape
    if M > N:
        S = S.T
        M, N = N, M
    best = -np.inf
    rows = np.arange(M)
    for cols in itertools.permutations(range(N), M):
        best = max(best, float(S[rows, list(cols)].sum()))
    return best
