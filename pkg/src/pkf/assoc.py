"""Association likelihoods, exact matrix permanents, and association-weight computation.

Weights follow the marginal-probability definition: the weight of pairing
measurement k with object j sums the probabilities of all joint association
events containing that pairing, which reduces to entry * permanent-of-minor.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import GaussianBelief, LinearModel, NumericalError

PERMANENT_SIZE_CAP = 20
_CHUNK_BITS = 16


class PermanentSizeError(ValueError):
    """Matrix exceeds the exact-permanent size cap."""


# ---------------------------------------------------------------------------
# scores and likelihoods
# ---------------------------------------------------------------------------

def iou(box_a, box_b) -> float:
    """Intersection over union of two (left, top, width, height) boxes."""
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    x1 = max(ax, bx)
    y1 = max(ay, by)
    x2 = min(ax + aw, bx + bw)
    y2 = min(ay + ah, by + bh)
    inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for two stacks of (left, top, w, h) boxes: (len_a, len_b)."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = a[:, 2:3] * a[:, 3:4] + b[None, :, 2] * b[None, :, 3] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def likelihood_from_iou(iou_score: float, alpha: float = 2.0):
    """Overlap score -> pseudo-likelihood exp(-alpha / iou); exactly 0 at iou 0."""
    s = np.asarray(iou_score, dtype=float)
    out = np.zeros_like(s)
    np.exp(np.divide(-alpha, s, out=np.full_like(s, -np.inf), where=s > 0), out=out)
    if out.ndim == 0:
        return float(out)
    return out


def gaussian_likelihood(z, belief: GaussianBelief, model: LinearModel) -> float:
    """Density of z under the predicted-measurement Gaussian N(H mu, H Sigma H^T + V)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    H, V = model.H, model.V
    S = H @ belief.cov @ H.T + V
    S = 0.5 * (S + S.T)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        cond = float(np.linalg.cond(S))
        raise NumericalError(f"singular innovation covariance (cond={cond:.3e})")
    resid = z - H @ belief.mean
    alpha = np.linalg.solve(L, resid)
    maha2 = float(alpha @ alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_pdf = -0.5 * (maha2 + logdet + len(z) * np.log(2.0 * np.pi))
    return float(np.exp(log_pdf))


def gaussian_likelihood_matrix(Z: np.ndarray, beliefs, model: LinearModel):
    """Likelihoods and squared Mahalanobis distances for all measurement/object pairs.

    Returns (likelihood (M, N), maha2 (M, N)); vectorized over measurements per object.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, model.meas_dim)
    M, N = Z.shape[0], len(beliefs)
    like = np.zeros((M, N))
    maha2 = np.full((M, N), np.inf)
    H, V = model.H, model.V
    m = model.meas_dim
    log2pi = m * np.log(2.0 * np.pi)
    for j, belief in enumerate(beliefs):
        S = H @ belief.cov @ H.T + V
        S = 0.5 * (S + S.T)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            cond = float(np.linalg.cond(S))
            raise NumericalError(f"singular innovation covariance for object {j} "
                                 f"(cond={cond:.3e})")
        resid = Z - (H @ belief.mean)[None, :]
        alpha = np.linalg.solve(L, resid.T)
        d2 = np.sum(alpha * alpha, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        like[:, j] = np.exp(-0.5 * (d2 + logdet + log2pi))
        maha2[:, j] = d2
    return like, maha2


# ---------------------------------------------------------------------------
# exact permanents (rectangular Ryser over column subsets)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _subset_tables(n: int):
    """All nonempty column subsets of {0..n-1} as a float mask plus popcounts."""
    idx = np.arange(1, 1 << n, dtype=np.uint32)
    masks = ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.float64)
    pop = masks.sum(axis=1).astype(np.intp)
    masks.setflags(write=False)
    pop.setflags(write=False)
    return masks, pop


def _chunk_tables(n: int, lo: int, hi: int):
    idx = np.arange(lo, hi, dtype=np.uint32)
    masks = ((idx[:, None] >> np.arange(n, dtype=np.uint32)) & 1).astype(np.float64)
    pop = masks.sum(axis=1).astype(np.intp)
    return masks, pop


def _ryser_scan(A: np.ndarray, want_minors: bool):
    """One inclusion-exclusion pass over column subsets of an m x n matrix, m <= n.

    Returns (per(A), G) with G[k, j] = per(A with row k and column j removed),
    or (per(A), None) when minors are not requested. Uses the identity that the
    permanent's partial derivative in entry (k, j) is the (k, j) minor permanent.
    """
    m, n = A.shape
    if m == 0:
        return 1.0, None
    binom = np.array([math.comb(n - t, n - m) for t in range(n + 1)], dtype=np.float64)
    signs = np.where(np.arange(n + 1) % 2 == 0, 1.0, -1.0)
    coef_by_pop = binom * signs

    total = 0.0
    G = np.zeros((m, n)) if want_minors else None

    def scan(masks, pop):
        nonlocal total, G
        keep = coef_by_pop[pop] != 0.0
        if not np.all(keep):
            masks, pop = masks[keep], pop[keep]
            if masks.shape[0] == 0:
                return
        coef = coef_by_pop[pop]
        rowsums = masks @ A.T                       # (subsets, m)
        fwd = np.cumprod(rowsums, axis=1)
        total += float(coef @ fwd[:, -1])
        if want_minors:
            if m == 1:
                excl = np.ones_like(rowsums)
            else:
                bwd = np.cumprod(rowsums[:, ::-1], axis=1)[:, ::-1]
                excl = np.empty_like(rowsums)
                excl[:, 0] = bwd[:, 1]
                excl[:, -1] = fwd[:, -2]
                for k in range(1, m - 1):
                    excl[:, k] = fwd[:, k - 1] * bwd[:, k + 1]
            G += (excl * coef[:, None]).T @ masks

    if n <= _CHUNK_BITS:
        masks, pop = _subset_tables(n)
        scan(masks, pop)
    else:
        for lo in range(1, 1 << n, 1 << _CHUNK_BITS):
            hi = min(lo + (1 << _CHUNK_BITS), 1 << n)
            scan(*_chunk_tables(n, lo, hi))

    parity = -1.0 if m % 2 else 1.0
    if want_minors:
        G *= parity
    return parity * total, G


def _check_permanent_input(A: np.ndarray, size_cap: int) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("permanent expects a 2-D matrix")
    if max(A.shape, default=0) > size_cap:
        raise PermanentSizeError(
            f"matrix {A.shape} exceeds exact-permanent cap {size_cap}")
    if not np.all(np.isfinite(A)):
        raise ValueError("permanent requires finite entries")
    if __debug__ and A.size and A.min() < 0:
        warnings.warn("permanent called with negative entries; association "
                      "likelihoods should be nonnegative", stacklevel=2)
    return A


def permanent(Q, size_cap: int = PERMANENT_SIZE_CAP) -> float:
    """Exact permanent of an M x N matrix (M <= N after auto-transpose).

    Sums products over all injective row-to-column assignments; the permanent
    of a matrix with zero rows is 1 (empty product).
    """
    A = _check_permanent_input(Q, size_cap)
    m, n = A.shape
    if m > n:
        A = A.T
        m, n = n, m
    if m == 0:
        return 1.0
    value, _ = _ryser_scan(A, want_minors=False)
    return value


def permanent_minors(Q, size_cap: int = PERMANENT_SIZE_CAP):
    """per(Q) together with the matrix of all row/column-deleted minor permanents."""
    A = _check_permanent_input(Q, size_cap)
    m, n = A.shape
    if m > n:
        raise ValueError("permanent_minors requires M <= N")
    if m == 0:
        return 1.0, np.zeros((0, n))
    return _ryser_scan(A, want_minors=True)


# ---------------------------------------------------------------------------
# likelihood and weight containers
# ---------------------------------------------------------------------------

@dataclass
class LikelihoodMatrix:
    """Per-pair measurement likelihoods with per-row scaling for numeric range."""

    scaled: np.ndarray
    row_scales: np.ndarray

    @classmethod
    def from_raw(cls, Q) -> "LikelihoodMatrix":
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2:
            raise ValueError("likelihood matrix must be 2-D")
        if not np.all(np.isfinite(Q)) or (Q.size and Q.min() < 0):
            raise ValueError("likelihoods must be finite and nonnegative")
        scales = Q.max(axis=1, initial=0.0) if Q.size else np.zeros(Q.shape[0])
        safe = np.where(scales > 0, scales, 1.0)
        return cls(scaled=Q / safe[:, None], row_scales=safe * (scales > 0) + (scales <= 0))

    @property
    def raw(self) -> np.ndarray:
        return self.scaled * self.row_scales[:, None]

    @property
    def shape(self):
        return self.scaled.shape


@dataclass
class WeightMatrix:
    """Marginal association probabilities; rows are measurements, columns objects."""

    w: np.ndarray
    mode: str
    clutter: np.ndarray | None = None
    degenerate_rows: list = field(default_factory=list)
    swapped_rows: list = field(default_factory=list)

    def track_weights(self, j: int, tau_weight: float = 0.0):
        """(measurement index, weight) pairs for object j with weight above threshold."""
        return [(k, float(self.w[k, j])) for k in range(self.w.shape[0])
                if self.w[k, j] > tau_weight]


@dataclass
class AmbiguityPartition:
    """Split of a score matrix into an ambiguous subset and clear one-to-one pairs."""

    ambiguous_measurements: set
    ambiguous_objects: set
    clear_pairs: list


def _as_likelihood(Q) -> LikelihoodMatrix:
    if isinstance(Q, LikelihoodMatrix):
        return Q
    return LikelihoodMatrix.from_raw(Q)


def connected_components(positive: np.ndarray):
    """Connected components of the bipartite graph on strictly positive entries.

    Returns a list of (rows, cols) index arrays, ordered by smallest row index.
    Rows or columns with no positive entry belong to no component.
    """
    M, N = positive.shape
    seen_rows = np.zeros(M, dtype=bool)
    comps = []
    for start in range(M):
        if seen_rows[start] or not positive[start].any():
            continue
        rows = {start}
        cols = set(np.flatnonzero(positive[start]))
        frontier_cols = set(cols)
        seen_rows[start] = True
        while frontier_cols:
            new_rows = set()
            for c in frontier_cols:
                for r in np.flatnonzero(positive[:, c]):
                    if not seen_rows[r]:
                        seen_rows[r] = True
                        new_rows.add(int(r))
            rows |= new_rows
            frontier_cols = set()
            for r in new_rows:
                for c in np.flatnonzero(positive[r]):
                    if c not in cols:
                        cols.add(int(c))
                        frontier_cols.add(int(c))
        comps.append((np.array(sorted(rows)), np.array(sorted(cols))))
    return comps


# ---------------------------------------------------------------------------
# association weights
# ---------------------------------------------------------------------------

def pkf_weights(Q, size_cap: int = PERMANENT_SIZE_CAP) -> WeightMatrix:
    """Joint association weights w[k, j] = Q[k, j] * per(minor), row-normalized.

    Requires M <= N: every measurement is generated by some object. The
    bipartite graph of positive entries is split into connected components and
    each component is solved independently (the permanent factorizes). A
    component holding more measurements than objects is solved with roles
    swapped (objects choose measurements); its rows are then normalized along
    the object axis and reported in `swapped_rows`.
    """
    like = _as_likelihood(Q)
    S = like.scaled
    M, N = S.shape
    if M > N:
        raise ValueError(f"pkf_weights requires M <= N, got {M}x{N}; transpose first")
    w = np.zeros((M, N))
    degenerate = [k for k in range(M) if not (S[k] > 0).any()]
    for k in degenerate:
        w[k, :] = 1.0 / N
    swapped = []
    for rows, cols in connected_components(S > 0):
        B = S[np.ix_(rows, cols)]
        if len(rows) <= len(cols):
            per, G = permanent_minors(B, size_cap=size_cap)
            wt = B * G
            if per > 0:
                w[np.ix_(rows, cols)] = wt / per
            else:
                _normalize_rows_fallback(wt, B, w, rows, cols, degenerate)
        else:
            per, G = permanent_minors(B.T, size_cap=size_cap)
            wt = B.T * G
            if per > 0:
                w[np.ix_(rows, cols)] = (wt / per).T
            else:
                _normalize_rows_fallback(wt, B.T, w, rows, cols, degenerate,
                                         transposed=True)
            swapped.extend(int(r) for r in rows)
    if degenerate:
        warnings.warn(f"pkf_weights: rows {degenerate} have no positive likelihood; "
                      "uniform weights emitted", stacklevel=2)
    return WeightMatrix(w=w, mode="pkf", degenerate_rows=sorted(degenerate),
                        swapped_rows=sorted(swapped))


def _normalize_rows_fallback(wt, B, w, rows, cols, degenerate, transposed=False):
    # No joint association has positive mass (Hall violation inside a
    # component): fall back to independent per-row normalization.
    out = np.zeros_like(B)
    for i in range(B.shape[0]):
        total = wt[i].sum()
        if total > 0:
            out[i] = wt[i] / total
        else:
            rs = B[i].sum()
            out[i] = B[i] / rs if rs > 0 else 0.0
    if transposed:
        w[np.ix_(rows, cols)] = out.T
        degenerate.extend(int(c) for c in cols)
    else:
        w[np.ix_(rows, cols)] = out
        degenerate.extend(int(r) for r in rows)


def jpdaf_weights(Q, p_detect: float, lam: float,
                  size_cap: int = PERMANENT_SIZE_CAP) -> WeightMatrix:
    """Joint association weights with missed detections and Poisson clutter.

    Association events map each measurement to an object (injectively) or to
    clutter; an event with F clutter points carries the factor
    (lam * (1 - p_detect) / p_detect)^F relative to fully-associated events.
    Events are summed exactly: for every clutter subset the remaining rows are
    marginalized with one permanent-minor scan. Returns per-pair weights plus a
    per-measurement clutter probability; each row sums to one.
    """
    if not (0.0 < p_detect <= 1.0):
        raise ValueError("p_detect must be in (0, 1]")
    if lam <= 0:
        raise ValueError("lam must be positive")
    like = _as_likelihood(Q)
    S, scales = like.scaled, like.row_scales
    M, N = S.shape
    w = np.zeros((M, N))
    clutter = np.zeros(M)
    zero_rows = [k for k in range(M) if not (S[k] > 0).any()]
    for k in zero_rows:
        clutter[k] = 1.0
    gamma = lam * (1.0 - p_detect) / p_detect
    for rows, cols in connected_components(S > 0):
        B = S[np.ix_(rows, cols)]
        wc, cc = _jpdaf_component(B, scales[rows], gamma, size_cap)
        w[np.ix_(rows, cols)] = wc
        clutter[rows] = cc
    return WeightMatrix(w=w, mode="jpdaf", clutter=clutter,
                        degenerate_rows=sorted(zero_rows))


def _jpdaf_component(B: np.ndarray, scales: np.ndarray, gamma: float, size_cap: int):
    """Exact event sum for one connected component (rows are its measurements).

    For gamma > 0 the clutter choices are folded into the matrix as one
    dedicated column per row priced gamma (inverse-scaled), so the whole event
    sum is a single permanent-minor scan of the M x (N + M) augmented matrix.
    The subset loop below covers the p_detect == 1 limit and oversized blocks.
    """
    M, N = B.shape
    phi_min = max(0, M - N)
    if gamma > 0.0 and M + N <= size_cap:
        A = np.zeros((M, N + M))
        A[:, :N] = B
        diag = np.arange(M)
        A[diag, N + diag] = gamma / scales
        per, G = permanent_minors(A, size_cap=size_cap)
        if per > 0.0:
            unnorm = A * G
            return unnorm[:, :N] / per, unnorm[diag, N + diag] / per
    # Clutter price per row; scaling a row of the raw matrix divides the
    # associated-likelihood product, so clutter picks pay the inverse scale.
    if gamma > 0.0:
        price = gamma / scales
        phis = range(phi_min, M + 1)
    else:
        # p_detect == 1: only the minimum-clutter events survive in the limit.
        price = 1.0 / scales
        phis = [phi_min]
    w_acc = np.zeros((M, N))
    cl_acc = np.zeros(M)
    Z = 0.0
    all_rows = np.arange(M)
    for phi in phis:
        for subset in itertools.combinations(range(M), phi):
            coef = float(np.prod(price[list(subset)])) if subset else 1.0
            keep = np.setdiff1d(all_rows, subset, assume_unique=True)
            if keep.size > N:
                continue
            if keep.size == 0:
                per, G = 1.0, None
            else:
                per, G = permanent_minors(B[keep], size_cap=size_cap)
            Z += coef * per
            if G is not None:
                w_acc[keep] += coef * (B[keep] * G)
            for k in subset:
                cl_acc[k] += coef * per
    if Z <= 0.0:
        # Impossible evidence under the model (e.g. p_detect == 1 with fewer
        # measurements than a perfect matching requires); spread mass via the
        # clutter-free association instead of returning NaNs.
        fallback = pkf_weights(B if M <= N else B.T, size_cap=size_cap)
        wc = fallback.w if M <= N else fallback.w.T
        return wc, np.zeros(M)
    return w_acc / Z, cl_acc / Z


# ---------------------------------------------------------------------------
# binary assignment and the ambiguity partition
# ---------------------------------------------------------------------------

def linear_assignment(scores: np.ndarray, floor: float = 0.3):
    """Score-maximizing one-to-one matching; pairs scoring below the floor drop out.

    Returns a list of (row, col) pairs sorted by row.
    """
    S = np.asarray(scores, dtype=float)
    if S.size == 0:
        return []
    if not np.all(np.isfinite(S)):
        raise ValueError("assignment scores must be finite")
    rows, cols = linear_sum_assignment(S, maximize=True)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols)
                  if S[r, c] > 0 and S[r, c] >= floor)


def ambiguity_check(S: np.ndarray, tau_ambig: float,
                    match_floor: float = 0.3) -> AmbiguityPartition:
    """Ratio-chain ambiguity detection on a nonnegative score matrix.

    Walking each measurement's scores in descending order, a run of objects
    where every successor scores at least tau_ambig times its predecessor (all
    positive) is ambiguous, together with the measurement. Binary-assignment
    partners of ambiguous entries are pulled in transitively; what remains is
    matched one-to-one.
    """
    S = np.asarray(S, dtype=float)
    M, N = S.shape
    if not (0.0 < tau_ambig <= 1.0):
        raise ValueError("tau_ambig must be in (0, 1]")
    amb_meas: set = set()
    amb_obj: set = set()
    for k in range(M):
        order = np.argsort(-S[k], kind="stable")
        chain: set = set()
        for a, b in zip(order[:-1], order[1:]):
            sa, sb = S[k, a], S[k, b]
            if sa > 0 and sb > 0 and sb >= tau_ambig * sa:
                chain.add(int(a))
                chain.add(int(b))
            else:
                break
        if chain:
            amb_meas.add(k)
            amb_obj |= chain
    pairs = linear_assignment(S, floor=match_floor)
    changed = True
    while changed:
        changed = False
        for k, j in pairs:
            if (k in amb_meas) or (j in amb_obj):
                if k not in amb_meas:
                    amb_meas.add(k)
                    changed = True
                if j not in amb_obj:
                    amb_obj.add(j)
                    changed = True
    clear = [(k, j) for k, j in pairs if k not in amb_meas and j not in amb_obj]
    return AmbiguityPartition(ambiguous_measurements=amb_meas,
                              ambiguous_objects=amb_obj,
                              clear_pairs=clear)
