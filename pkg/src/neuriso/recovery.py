"""Recovery judgments and network reconstruction for group-l1 solutions.

Bridges the convex side (block solutions over arrangement patterns) and the
network side (explicit two-layer weights): builds the solve-ready programs,
scores a solution against the planted model, measures test error, rebuilds
a network with balanced neuron scaling, and decides equivalence of networks
up to permutation and splitting.
"""

from dataclasses import dataclass

import numpy as np

from .arrangements import PatternSet, pattern_of
from .ensembles import PlantedModel, gen_observation
from .errors import (InconsistentSolutionError, InvalidInputError,
                     InvalidShapeError, MissingPlantError, NeurisoError,
                     SchemaError)
from .numerics import compact_svd
from .solvers import GroupProblem

ARCHES = ("plain", "skip", "normalized")
PROGRAMS = ("grelu_skip", "relu_skip_cone", "grelu_normal",
            "relu_normal_cone", "reg_grelu_skip")
MERGE_COS = 1.0 - 1e-10  # first-layer directions closer than this collapse


@dataclass
class NetworkWeights:
    arch: str
    first_layer: list  # d-vectors
    second_layer: list  # reals
    alphas: list = None  # normalized arch only
    linear_flags: list = None  # marks pass-through neurons (skip arch)

    def __post_init__(self):
        if self.arch not in ARCHES:
            raise InvalidInputError("unknown architecture %r" % (self.arch,))
        self.first_layer = [np.asarray(w, dtype=float) for w in self.first_layer]
        self.second_layer = [float(c) for c in self.second_layer]
        m = len(self.first_layer)
        if len(self.second_layer) != m:
            raise InvalidInputError("layer sizes disagree")
        if len({w.shape for w in self.first_layer}) > 1:
            raise InvalidShapeError("first-layer vectors must share a dimension")
        if self.arch == "normalized":
            if self.alphas is None or len(self.alphas) != m:
                raise InvalidInputError("normalized arch needs one alpha per neuron")
            self.alphas = [float(a) for a in self.alphas]
        elif self.alphas is not None:
            raise InvalidInputError("alphas only apply to the normalized arch")
        if self.linear_flags is None:
            self.linear_flags = ([True] + [False] * (m - 1)
                                 if self.arch == "skip" and m else [False] * m)
        self.linear_flags = [bool(f) for f in self.linear_flags]
        if len(self.linear_flags) != m:
            raise InvalidInputError("one linear flag per neuron required")
        if any(self.linear_flags) and self.arch != "skip":
            raise InvalidInputError("linear neurons require the skip arch")


@dataclass
class RecoveryVerdict:
    success: bool
    abs_distance: float
    support_match: bool
    extras: int  # spurious active blocks


def _as_mat(x):
    return np.asarray(getattr(x, "mat", x), dtype=float)


def _masks(patterns):
    if isinstance(patterns, PatternSet):
        return [np.asarray(p.mask, dtype=np.uint8) for p in patterns.patterns]
    return [np.asarray(getattr(p, "mask", p), dtype=np.uint8) for p in patterns]


def _find_mask(masks, mask):
    key = tuple(int(b) for b in mask)
    for j, m in enumerate(masks):
        if tuple(int(b) for b in m) == key:
            return j
    return -1


def build_program(x, patterns, y, program, beta=0.0):
    """Assemble the group problem for one program family.

    grelu_skip        linear block plus one gated block per pattern, beta = 0
    relu_skip_cone    linear block plus a sign-constrained (+/-) pair per pattern
    grelu_normal      one orthonormal column basis per pattern, beta = 0
    relu_normal_cone  sign-constrained pairs of the orthonormal bases
    reg_grelu_skip    grelu_skip in whitened coordinates with a group penalty
    """
    mat = _as_mat(x)
    y = np.asarray(y, dtype=float)
    if y.shape != (mat.shape[0],):
        raise InvalidShapeError("target length must match the row count")
    if program not in PROGRAMS:
        raise InvalidInputError("unknown program %r" % (program,))
    if program != "reg_grelu_skip" and beta != 0.0:
        raise InvalidInputError("%s is an interpolation program; beta must be 0" % program)
    if beta < 0.0:
        raise InvalidInputError("beta must be nonnegative")
    masks = _masks(patterns)

    if program == "grelu_skip":
        blocks = [mat] + [m[:, None] * mat for m in masks]
        return GroupProblem(blocks=blocks, target=y, beta=0.0, cones=None)

    if program == "relu_skip_cone":
        blocks, cones = [mat], [None]
        for m in masks:
            gated = m[:, None] * mat
            cone = (2.0 * m - 1.0)[:, None] * mat
            blocks += [gated, -gated]
            cones += [cone, cone]
        return GroupProblem(blocks=blocks, target=y, beta=0.0, cones=cones)

    if program == "grelu_normal":
        blocks = [compact_svd(m[:, None] * mat).u for m in masks]
        return GroupProblem(blocks=blocks, target=y, beta=0.0, cones=None)

    if program == "relu_normal_cone":
        blocks, cones = [], []
        for m in masks:
            sv = compact_svd(m[:, None] * mat)
            cone = None
            if sv.rank:
                cone = ((2.0 * m - 1.0)[:, None] * mat) @ (sv.v / sv.s)
            blocks += [sv.u, -sv.u]
            cones += [cone, cone]
        return GroupProblem(blocks=blocks, target=y, beta=0.0, cones=cones)

    sv = compact_svd(mat)  # reg_grelu_skip: whiten through the column space
    blocks = [sv.u] + [m[:, None] * sv.u for m in masks]
    return GroupProblem(blocks=blocks, target=y, beta=float(beta), cones=None)


def _split_layout(n_blocks, p):
    # block count determines the layout; at p = 1 the tie goes to skip+single
    if n_blocks == p + 1:
        return True, False
    if n_blocks == 2 * p + 1:
        return True, True
    if n_blocks == p:
        return False, False
    if n_blocks == 2 * p:
        return False, True
    raise InvalidInputError("cannot match %d blocks to %d patterns" % (n_blocks, p))


def _block_index(skip, paired, j, negative):
    return int(skip) + (2 * j + int(negative) if paired else j)


def _plant_targets(plant, mat, masks, skip, paired, whitened, sv):
    """Planted weights mapped into the solution's block coordinates."""
    if whitened and plant.variant == "normalized_relu_sum":
        raise InvalidInputError("whitened coordinates apply to gated programs only")
    targets = {}

    def add(b, vec):
        targets[b] = targets.get(b, 0.0) + vec

    for w, r in plant.neurons:
        w = np.asarray(w, dtype=float)
        if plant.variant == "linear":
            if not skip:
                raise InvalidInputError("a linear plant needs a program with a "
                                        "pass-through block")
            add(0, sv.s * (sv.v.T @ (r * w)) if whitened else r * w)
            continue
        j = _find_mask(masks, pattern_of(mat, w).mask)
        if j < 0:
            raise MissingPlantError("planted pattern missing from the pattern set")
        if plant.variant == "relu":
            vec = abs(r) * w if paired else r * w
            if whitened:
                vec = sv.s * (sv.v.T @ vec)
        else:  # normalized_relu_sum: coordinates in the pattern's basis
            svj = compact_svd(masks[j][:, None].astype(float) * mat)
            coef = svj.s * (svj.v.T @ w)
            nrm = np.linalg.norm(coef)
            if nrm == 0.0:
                raise InvalidInputError("planted neuron is dead on this data")
            vec = (abs(r) if paired else r) * coef / nrm
        add(_block_index(skip, paired, j, r < 0), vec)
    return targets


def assess_recovery(sol, plant, x, patterns, tol=1e-4, whitened=False):
    """Judge a block solution against the planted model.

    Success requires the active set to equal the planted block set and the
    stacked weight distance to fall below tol relative to the plant's own
    block norm. whitened=True reads the solution in the whitened coordinates
    of the penalized program.
    """
    mat = _as_mat(x)
    masks = _masks(patterns)
    skip, paired = _split_layout(len(sol.weights), len(masks))
    sv = compact_svd(mat) if whitened else None
    targets = _plant_targets(plant, mat, masks, skip, paired, whitened, sv)
    gap = 0.0
    scale = 0.0
    for b, vec in targets.items():
        if sol.weights[b].shape != vec.shape:
            raise InvalidInputError("block %d does not hold the plant's coordinates" % b)
        gap += float(np.sum((sol.weights[b] - vec) ** 2))
        scale += float(np.sum(vec ** 2))
    dist = float(np.sqrt(gap))
    planted = sorted(targets)
    support = sorted(sol.active_blocks) == planted
    extras = len(set(sol.active_blocks) - set(planted))
    success = support and dist < tol * np.sqrt(scale)
    return RecoveryVerdict(success=success, abs_distance=dist,
                           support_match=support, extras=extras)


def test_distance(sol, plant, x_test, program="grelu_skip", x=None, patterns=None):
    """l2 gap between the solution's prediction on fresh data and the
    noiseless plant output there.

    Gated programs predict directly from the block weights (the signed relu
    sum plus any pass-through term); normalized programs go through network
    reconstruction, which needs the training data and pattern set. The
    penalized program additionally needs the training matrix to undo the
    whitening.
    """
    xt = _as_mat(x_test)
    clean = PlantedModel(variant=plant.variant, neurons=plant.neurons,
                         noise_sigma=0.0)
    truth, _ = gen_observation(clean, xt, seed=0)

    if program not in PROGRAMS:
        raise InvalidInputError("unknown program %r" % (program,))
    if program in ("grelu_normal", "relu_normal_cone"):
        if x is None or patterns is None:
            raise InvalidInputError("normalized programs need x and patterns "
                                    "to rebuild the network")
        net = reconstruct_network(sol, x, patterns, "normalized")
        return float(np.linalg.norm(predict(net, xt) - truth))

    weights = sol.weights
    if program == "reg_grelu_skip":
        if x is None:
            raise InvalidInputError("the whitened program needs x to map "
                                    "weights back")
        sv = compact_svd(_as_mat(x))
        weights = [sv.v @ (w / sv.s) for w in weights]
    paired = program == "relu_skip_cone"
    pred = np.zeros(xt.shape[0])
    for b in sol.active_blocks:
        if b == 0:
            pred += xt @ weights[0]
        else:
            sign = -1.0 if paired and (b - 1) % 2 else 1.0
            pred += sign * np.maximum(xt @ weights[b], 0.0)
    return float(np.linalg.norm(pred - truth))


def reconstruct_network(sol, x, patterns, arch, whitened=False):
    """Explicit two-layer network from the active blocks.

    Every active block becomes a neuron with balanced scaling ||w1|| = |w2|
    (normalized arch: alpha = w2 = sqrt of the block norm). Active gated
    blocks must respect their pattern: the sign profile of X w has to match
    the mask, else the block never came from a feasible network.
    """
    if arch not in ARCHES:
        raise InvalidInputError("unknown architecture %r" % (arch,))
    mat = _as_mat(x)
    masks = _masks(patterns)
    skip, paired = _split_layout(len(sol.weights), len(masks))
    if skip != (arch == "skip"):
        raise InvalidInputError("block layout does not fit the %s arch" % arch)
    if whitened:
        if arch == "normalized":
            raise InvalidInputError("whitened coordinates apply to gated programs only")
        sv = compact_svd(mat)

    first, second, alphas, flags = [], [], [], []
    for b in sorted(sol.active_blocks):
        if skip and b == 0:
            w0 = sv.v @ (sol.weights[0] / sv.s) if whitened else sol.weights[0]
            nrm = np.linalg.norm(w0)
            first.append(w0 / np.sqrt(nrm))
            second.append(np.sqrt(nrm))
            alphas.append(1.0)
            flags.append(True)
            continue
        j = (b - int(skip)) // (2 if paired else 1)
        negative = paired and (b - int(skip)) % 2 == 1
        mask = masks[j]
        if arch == "normalized":
            svj = compact_svd(mask[:, None].astype(float) * mat)
            if sol.weights[b].shape != (svj.rank,):
                raise InvalidInputError("block %d does not hold basis coordinates" % b)
            w1 = svj.v @ (sol.weights[b] / svj.s)
        else:
            w1 = (sv.v @ (sol.weights[b] / sv.s) if whitened
                  else np.asarray(sol.weights[b], dtype=float))
        z = mat @ w1
        slack = 1e-8 * max(1.0, float(np.max(np.abs(z))))
        if np.any(z[mask == 1] < -slack) or np.any(z[mask == 0] > slack):
            raise InconsistentSolutionError(
                "active block %d violates its arrangement pattern" % b)
        if arch == "normalized":
            root = np.sqrt(np.linalg.norm(sol.weights[b]))
            first.append(w1 / np.linalg.norm(w1) * root)
        else:
            root = np.sqrt(np.linalg.norm(w1))
            first.append(w1 / root)
        second.append(-root if negative else root)
        alphas.append(root)
        flags.append(False)
    return NetworkWeights(arch=arch, first_layer=first, second_layer=second,
                          alphas=alphas if arch == "normalized" else None,
                          linear_flags=flags)


def predict(net, xs):
    """Forward pass of the two-layer network on rows of xs."""
    xs = np.asarray(xs, dtype=float)
    out = np.zeros(xs.shape[0])
    for k, (w1, w2) in enumerate(zip(net.first_layer, net.second_layer)):
        z = xs @ w1
        if net.arch == "normalized":
            act = np.maximum(z, 0.0)
            nrm = np.linalg.norm(act)
            if nrm > 0.0:  # a dead neuron contributes nothing
                out += net.alphas[k] * w2 * (act / nrm)
        elif net.linear_flags[k]:
            out += w2 * z
        else:
            out += w2 * np.maximum(z, 0.0)
    return out


def split_network(net, group, gammas):
    """Replace one neuron by positively scaled copies (weights sqrt(gamma))."""
    gammas = [float(g) for g in gammas]
    if any(g < 0.0 for g in gammas):
        raise InvalidInputError("split weights must be nonnegative")
    if abs(sum(gammas) - 1.0) > 1e-9:
        raise InvalidInputError("split weights must sum to one")
    if not 0 <= group < len(net.first_layer):
        raise InvalidInputError("no neuron at index %d" % group)
    first, second, alphas, flags = [], [], [], []
    for i, (w1, w2) in enumerate(zip(net.first_layer, net.second_layer)):
        if i != group:
            first.append(w1)
            second.append(w2)
            flags.append(net.linear_flags[i])
            if net.arch == "normalized":
                alphas.append(net.alphas[i])
            continue
        for g in gammas:
            root = np.sqrt(g)
            flags.append(net.linear_flags[i])
            if net.arch == "normalized":
                # the normalized activation ignores first-layer scale
                first.append(w1)
                second.append(root * w2)
                alphas.append(root * net.alphas[i])
            else:
                first.append(root * w1)
                second.append(root * w2)
    return NetworkWeights(arch=net.arch, first_layer=first, second_layer=second,
                          alphas=alphas if net.arch == "normalized" else None,
                          linear_flags=flags)


def _canonical(net, tol):
    """(linear part, merged relu terms) invariant under permutation/splitting."""
    lin = None
    terms = []
    for k, (w1, w2) in enumerate(zip(net.first_layer, net.second_layer)):
        if net.linear_flags[k]:
            lin = (0.0 if lin is None else lin) + w2 * w1
            continue
        nrm = np.linalg.norm(w1)
        coef = (net.alphas[k] * w2 if net.arch == "normalized"
                else float(nrm) * w2)
        if nrm == 0.0 or coef == 0.0:
            continue
        u = w1 / nrm
        for i, (v, c) in enumerate(terms):
            if float(u @ v) > MERGE_COS:
                terms[i] = (v, c + coef)
                break
        else:
            terms.append((u, coef))
    top = max((abs(c) for _, c in terms), default=0.0)
    terms = [(u, c) for u, c in terms if abs(c) > tol * max(1.0, top)]
    terms.sort(key=lambda t: tuple(t[0]))
    return lin, terms


def is_equivalent(a, b, tol=1e-9):
    """Same function up to neuron permutation and splitting."""
    if (a.arch == "normalized") != (b.arch == "normalized"):
        return False
    lin_a, ta = _canonical(a, tol)
    lin_b, tb = _canonical(b, tol)
    za = lin_a is None or not np.any(lin_a != 0.0)
    zb = lin_b is None or not np.any(lin_b != 0.0)
    if za != zb:
        return False
    if not za:
        ref = max(1.0, float(np.linalg.norm(lin_a)), float(np.linalg.norm(lin_b)))
        if np.linalg.norm(lin_a - lin_b) > tol * ref:
            return False
    if len(ta) != len(tb):
        return False
    used = [False] * len(tb)
    for u, c in ta:
        for i, (v, cv) in enumerate(tb):
            if used[i]:
                continue
            if float(u @ v) > MERGE_COS and abs(c - cv) <= tol * max(1.0, abs(c), abs(cv)):
                used[i] = True
                break
        else:
            return False
    return True


def network_to_text(net):
    """Versioned text form: one header, then one row per neuron."""
    m = len(net.first_layer)
    d = net.first_layer[0].size if m else 0
    lines = ["network-v1 %s %d %d" % (net.arch, m, d)]
    for k in range(m):
        alpha = repr(float(net.alphas[k])) if net.arch == "normalized" else "-"
        row = " ".join(repr(float(v)) for v in net.first_layer[k])
        lines.append("%d %s %s %s" % (int(net.linear_flags[k]),
                                      repr(float(net.second_layer[k])), alpha, row))
    return "\n".join(lines) + "\n"


def network_from_text(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaError("empty network file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "network-v1" or head[1] not in ARCHES:
        raise SchemaError("bad network header %r" % (lines[0],))
    try:
        m, d = int(head[2]), int(head[3])
    except ValueError:
        raise SchemaError("bad network header %r" % (lines[0],))
    if len(lines) - 1 != m:
        raise SchemaError("expected %d neuron rows, found %d" % (m, len(lines) - 1))
    first, second, alphas, flags = [], [], [], []
    for ln in lines[1:]:
        tok = ln.split()
        if len(tok) != 3 + d or tok[0] not in ("0", "1"):
            raise SchemaError("bad neuron row %r" % (ln,))
        try:
            second.append(float(tok[1]))
            if tok[2] != "-":
                alphas.append(float(tok[2]))
            first.append(np.array([float(t) for t in tok[3:]]))
        except ValueError:
            raise SchemaError("bad neuron row %r" % (ln,))
        flags.append(tok[0] == "1")
    if alphas and len(alphas) != m:
        raise SchemaError("alphas must be present on every row or none")
    if alphas and head[1] != "normalized":
        raise SchemaError("alphas only apply to the normalized arch")
    try:
        return NetworkWeights(arch=head[1], first_layer=first, second_layer=second,
                              alphas=alphas if head[1] == "normalized" else None,
                              linear_flags=flags)
    except NeurisoError as exc:
        raise SchemaError("inconsistent network file: %s" % exc)
