"""Isometry-style recovery certificates for planted neurons.

Each checker computes, per arrangement pattern, a correlation norm that
must stay strictly below one for the associated group-l1 program to admit
the planted solution as its unique optimum. Planted patterns are recorded
in the report and excluded from the certified maximum (their own value is
exactly one by construction).
"""

from dataclasses import dataclass

import numpy as np

from .arrangements import PatternSet, pattern_of
from .errors import DegenerateStackError, InvalidInputError, MissingPlantError
from .numerics import compact_svd, stacked_pinv_apply

STRICT_MARGIN = 1e-8  # "holds" means max off-plant lhs < 1 - STRICT_MARGIN


@dataclass
class NicReport:
    kind: str  # NIC_L | NIC_1 | NNIC_1 | NIC_K | NNIC_K | SNIC_ORTH
    per_pattern: list  # (mask, lhs) in pattern order
    max_lhs: float  # over non-planted patterns
    holds: bool
    planted_indices: list
    marginal: bool  # certified maximum sits within STRICT_MARGIN of one


def _as_mat(x):
    return np.asarray(getattr(x, "mat", x), dtype=float)


def _unit(w):
    w = np.asarray(w, dtype=float)
    nrm = np.linalg.norm(w)
    if nrm == 0.0:
        raise InvalidInputError("weight vector must be nonzero")
    return w / nrm


def _mask_list(patterns):
    if isinstance(patterns, PatternSet):
        return [np.asarray(p.mask, dtype=np.uint8) for p in patterns.patterns], patterns.sampled
    return [np.asarray(m, dtype=np.uint8) for m in patterns], True


def _with_plants(masks, sampled, plant_masks):
    # ensure every planted mask is present; only sampled sets may be grown
    out = list(masks)
    for pm in plant_masks:
        if not any(np.array_equal(pm, m) for m in out):
            if not sampled:
                raise MissingPlantError("planted pattern missing from exact pattern set")
            out.append(pm)
    out.sort(key=tuple)
    idx = [next(i for i, m in enumerate(out) if np.array_equal(m, pm)) for pm in plant_masks]
    return out, idx


def _assemble(kind, masks, lhs, planted_idx):
    skip = set(planted_idx)
    off = [float(v) for i, v in enumerate(lhs) if i not in skip]
    mx = max(off) if off else 0.0
    return NicReport(kind=kind,
                     per_pattern=list(zip(masks, [float(v) for v in lhs])),
                     max_lhs=mx,
                     holds=mx < 1.0 - STRICT_MARGIN,
                     planted_indices=list(planted_idx),
                     marginal=abs(mx - 1.0) <= STRICT_MARGIN)


def nic_linear(x, w_star, patterns):
    """lhs_j = ||X^T D_j X (X^T X)^{-1} w_hat|| for every pattern."""
    mat = _as_mat(x)
    what = _unit(w_star)
    sv = compact_svd(mat)
    if sv.rank < mat.shape[1]:
        raise DegenerateStackError("X^T X is singular")
    masks, _ = _mask_list(patterns)
    c = sv.v @ ((sv.v.T @ what) / sv.s**2)
    v = mat @ c
    lhs = np.linalg.norm((np.array(masks, dtype=float) * v) @ mat, axis=1)
    return _assemble("NIC_L", masks, lhs, [])


def nic_relu_single(x, w_star, patterns):
    """lhs_j = ||X^T D_j D_i* X (X^T D_i* X)^{-1} w_hat||, i* the plant."""
    mat = _as_mat(x)
    what = _unit(w_star)
    planted = pattern_of(mat, what).mask
    masks, sampled = _mask_list(patterns)
    masks, pidx = _with_plants(masks, sampled, [planted])
    mi = masks[pidx[0]].astype(float)
    gram = mat.T @ (mi[:, None] * mat)
    sig = np.linalg.svd(gram, compute_uv=False)
    if sig.size == 0 or sig[-1] <= 1e-12 * sig[0]:
        raise DegenerateStackError("X^T D X is singular at the planted pattern")
    v = mi * (mat @ np.linalg.solve(gram, what))
    lhs = np.linalg.norm((np.array(masks, dtype=float) * v) @ mat, axis=1)
    return _assemble("NIC_1", masks, lhs, pidx)


def _normalized_target(mat, mask, w):
    # coordinates of (Xw)_+ in the left singular basis of D X, normalized
    sv = compact_svd(mask[:, None] * mat)
    coef = sv.s * (sv.v.T @ w) if sv.rank else np.zeros(0)
    nrm = np.linalg.norm(coef)
    if sv.rank == 0 or nrm == 0.0:
        raise DegenerateStackError("planted pattern annihilates the data")
    return sv.u, coef / nrm


def nnic_single(x, w_star, patterns):
    """lhs_j = ||U_j^T U_i* w_tilde|| with U from the compact SVD of D X."""
    mat = _as_mat(x)
    w = np.asarray(w_star, dtype=float)
    planted = pattern_of(mat, w).mask
    masks, sampled = _mask_list(patterns)
    masks, pidx = _with_plants(masks, sampled, [planted])
    ui, wt = _normalized_target(mat, masks[pidx[0]], w)
    t = ui @ wt
    lhs = [np.linalg.norm(compact_svd(m[:, None] * mat).u.T @ t) for m in masks]
    return _assemble("NNIC_1", masks, lhs, pidx)


def nic_multi(x, plant, patterns, normalized):
    """Multi-neuron condition for plant = [(w_i, r_i)].

    Plain variant stacks X^T D_s_i with unit targets r_i w_i / ||w_i||
    (r_i in {-1, +1}); normalized variant stacks U_s_i^T with targets
    r_i w_tilde_i. lhs_j applies the min-norm multiplier to pattern j.
    """
    mat = _as_mat(x)
    plant = [(np.asarray(w, dtype=float), float(r)) for w, r in plant]
    if not plant:
        raise InvalidInputError("need at least one planted neuron")
    for _, r in plant:
        if normalized and r == 0.0:
            raise InvalidInputError("normalized output weights must be nonzero")
        if not normalized and r not in (-1.0, 1.0):
            raise InvalidInputError("plain output weights must be +1 or -1")
    pmasks = [pattern_of(mat, w).mask for w, _ in plant]
    for a in range(len(pmasks)):
        for b in range(a + 1, len(pmasks)):
            if np.array_equal(pmasks[a], pmasks[b]):
                raise InvalidInputError("planted masks must be pairwise distinct")
    masks, sampled = _mask_list(patterns)
    masks, pidx = _with_plants(masks, sampled, pmasks)
    if normalized:
        blocks, target = [], []
        for (w, r), pm in zip(plant, pmasks):
            u, wt = _normalized_target(mat, pm, w)
            blocks.append(u.T)
            target.append(r * wt)
        lam = stacked_pinv_apply(blocks, np.concatenate(target))
        lhs = [np.linalg.norm(compact_svd(m[:, None] * mat).u.T @ lam) for m in masks]
        return _assemble("NNIC_K", masks, lhs, pidx)
    blocks = [mat.T * pm.astype(float)[None, :] for pm in pmasks]
    target = np.concatenate([r * _unit(w) for w, r in plant])
    lam = stacked_pinv_apply(blocks, target)
    lhs = np.linalg.norm((np.array(masks, dtype=float) * lam) @ mat, axis=1)
    return _assemble("NIC_K", masks, lhs, pidx)


def snic_orth(x, patterns):
    """Trace rule for column-orthonormal data: holds iff max tr(D_j) <= n - d."""
    mat = _as_mat(x)
    n, d = mat.shape
    if np.max(np.abs(mat.T @ mat - np.eye(d))) > 1e-6:
        raise InvalidInputError("data matrix must be column-orthonormal")
    masks, _ = _mask_list(patterns)
    traces = [int(np.sum(m)) for m in masks]
    denom = n - d
    lhs = [tr / denom if denom > 0 else (0.0 if tr == 0 else np.inf) for tr in traces]
    max_tr = max(traces) if traces else 0
    return NicReport(kind="SNIC_ORTH",
                     per_pattern=list(zip(masks, [float(v) for v in lhs])),
                     max_lhs=float(max(lhs) if lhs else 0.0),
                     holds=max_tr <= denom,
                     planted_indices=[],
                     marginal=max_tr == denom)


def report_to_csv(report):
    lines = ["kind,mask,lhs,holds"]
    for mask, lhs in report.per_pattern:
        bits = "".join(str(int(b)) for b in mask)
        lines.append("%s,%s,%.17g,%d" % (report.kind, bits, lhs, int(report.holds)))
    return "\n".join(lines) + "\n"
