"""Built-in verification: gradient checks, brute-force oracles, invariants.

The gradient checker compares every analytic gradient against central
finite differences (step 1e-4) with the acceptance criterion

    max over elements of |g_analytic - g_fd| / max(1, |g_fd|) < 1e-3.

Oracle checks rerun library results against deliberately naive
re-implementations (nested loops, per-scalar gate math), and invariant
checks assert the structural properties that hold for any input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .bilinear import PoolSpec, pool_all, pool_region, upsample_bilinear
from .cap_attention import CapAttnParams, context_attention, contexts_to_features
from .errors import CapnetError, ContractViolation
from .lstm import LstmParams, encode_sequence, lstm_step
from .pixel_attention import PixelAttnParams, self_attention, self_attention_with_map
from .regions import Region, RegionPolicy, enumerate_regions
from .tensor import Tape, Tensor
from .training import cross_entropy
from .vlad import VladParams, classify, soft_assign, vlad_encode

FD_STEP = 1e-4
FD_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


# --------------------------------------------------------------------------
# Finite differences

def fd_gradient(forward: Callable[[], Tensor], x: Tensor,
                step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar-valued closure w.r.t. x."""
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    for idx in range(flat.size):
        saved = flat[idx]
        flat[idx] = saved + step
        hi = forward().item()
        flat[idx] = saved - step
        lo = forward().item()
        flat[idx] = saved
        grad[idx] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def max_rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))


def gradient_error(forward: Callable[[], Tensor], wrt: Sequence[Tensor],
                   step: float = FD_STEP) -> float:
    """Worst relative error across all tensors the loss should differentiate."""
    with Tape() as tape:
        for t in wrt:
            tape.watch(t)
        loss = forward()
    grads = tape.backward(loss)
    worst = 0.0
    for t in wrt:
        worst = max(worst, max_rel_error(grads[t], fd_gradient(forward, t, step)))
    return worst


def _project(out: Tensor, proj: Tensor) -> Tensor:
    return T.sum_all(T.mul(out, proj))


def _proj_for(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _away_from_zero(rng, shape, low=0.2, high=1.5) -> Tensor:
    # Keeps relu and |.| kinks farther than the FD step from any element.
    signs = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(signs * rng.uniform(low, high, size=shape))


def _separated_pool_input(rng, h, w, c) -> Tensor:
    # Values within each 2x2 block stay >= 0.05 apart so the max is stable
    # under FD probing.
    blocks = np.sort(rng.random((h // 2, w // 2, c, 4)), axis=-1)
    blocks += np.arange(4) * 0.05
    perm = rng.permuted(blocks, axis=-1)
    x = perm.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2)
    return Tensor(np.ascontiguousarray(x.reshape(h, w, c)))


def _grad_case_matmul(rng):
    a, b = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((4, 2)))
    proj = _proj_for(rng, (3, 2))
    return lambda: _project(T.matmul(a, b), proj), [a, b]


def _grad_case_bias_add(rng):
    a, b = Tensor(rng.standard_normal((5, 3))), Tensor(rng.standard_normal(3))
    proj = _proj_for(rng, (5, 3))
    return lambda: _project(T.add(a, b), proj), [a, b]


def _grad_case_scalar_gate(rng):
    a, g = Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal(()))
    proj = _proj_for(rng, (4, 5))
    return lambda: _project(T.mul(a, g), proj), [a, g]


def _grad_case_tanh(rng):
    x = Tensor(rng.standard_normal((4, 3)))
    proj = _proj_for(rng, (4, 3))
    return lambda: _project(T.tanh(x), proj), [x]


def _grad_case_sigmoid(rng):
    x = Tensor(rng.standard_normal((4, 3)))
    proj = _proj_for(rng, (4, 3))
    return lambda: _project(T.sigmoid(x), proj), [x]


def _grad_case_relu(rng):
    x = _away_from_zero(rng, (4, 5))
    proj = _proj_for(rng, (4, 5))
    return lambda: _project(T.relu(x), proj), [x]


def _grad_case_log(rng):
    x = Tensor(rng.uniform(0.3, 2.0, (6,)))
    proj = _proj_for(rng, (6,))
    return lambda: _project(T.log(x), proj), [x]


def _grad_case_softmax(rng):
    x = Tensor(rng.standard_normal((3, 5)))
    proj = _proj_for(rng, (3, 5))
    return lambda: _project(T.softmax(x, axis=1), proj), [x]


def _grad_case_mean(rng):
    x = Tensor(rng.standard_normal((3, 4, 2)))
    proj = _proj_for(rng, (3, 2))
    return lambda: _project(T.mean(x, axis=1), proj), [x]


def _grad_case_conv1x1(rng):
    x = Tensor(rng.standard_normal((4, 3, 3)))
    w = Tensor(rng.standard_normal((3, 2)))
    b = Tensor(rng.standard_normal(2))
    proj = _proj_for(rng, (4, 3, 2))
    return lambda: _project(T.conv1x1(x, w, b), proj), [x, w, b]


def _grad_case_conv3x3_same(rng):
    x = Tensor(rng.standard_normal((5, 6, 2)))
    w = Tensor(rng.standard_normal((3, 3, 2, 3)))
    b = Tensor(rng.standard_normal(3))
    proj = _proj_for(rng, (5, 6, 3))
    return lambda: _project(T.conv3x3(x, w, b, 1, "same"), proj), [x, w, b]


def _grad_case_conv3x3_strided(rng):
    x = Tensor(rng.standard_normal((7, 7, 2)))
    w = Tensor(rng.standard_normal((3, 3, 2, 2)))
    b = Tensor(rng.standard_normal(2))
    proj = _proj_for(rng, (3, 3, 2))
    return lambda: _project(T.conv3x3(x, w, b, 2, "valid"), proj), [x, w, b]


def _grad_case_max_pool(rng):
    x = _separated_pool_input(rng, 4, 6, 3)
    proj = _proj_for(rng, (2, 3, 3))
    return lambda: _project(T.max_pool2x2(x), proj), [x]


def _grad_case_gap(rng):
    x = Tensor(rng.standard_normal((3, 4, 2)))
    proj = _proj_for(rng, (2,))
    return lambda: _project(T.global_avg_pool(x), proj), [x]


def _grad_case_upsample(rng):
    x = Tensor(rng.standard_normal((3, 4, 2)))
    proj = _proj_for(rng, (5, 7, 2))
    return lambda: _project(upsample_bilinear(x, (5, 7)), proj), [x]


def _grad_case_pool_region(rng):
    x = Tensor(rng.standard_normal((6, 7, 2)))
    w_px = int(rng.integers(2, 6))
    h_px = int(rng.integers(2, 6))
    i = int(rng.integers(0, 7 - w_px + 1))
    j = int(rng.integers(0, 6 - h_px + 1))
    spec = PoolSpec((3, 3))
    region = Region(i, j, w_px, h_px)
    proj = _proj_for(rng, (3, 3, 2))
    return lambda: _project(pool_region(x, region, spec), proj), [x]


def _grad_case_self_attention(rng):
    x = Tensor(rng.standard_normal((3, 3, 4)))
    params = PixelAttnParams.create(4, rng)
    params.gamma = Tensor(rng.standard_normal(()))  # exercise the gate too
    proj = _proj_for(rng, (3, 3, 4))
    wrt = [x] + list(params.named().values())
    return lambda: _project(self_attention(x, params), proj), wrt


def _grad_case_context_attention(rng):
    fbars = [Tensor(rng.standard_normal((2, 2, 2))) for _ in range(3)]
    params = CapAttnParams.create(8, rng)
    projs = [_proj_for(rng, (2, 2, 2)) for _ in range(3)]

    def forward():
        contexts, _ = context_attention(fbars, params)
        total = _project(contexts[0], projs[0])
        for c, p in zip(contexts[1:], projs[1:]):
            total = T.add(total, _project(c, p))
        return total

    return forward, fbars + list(params.named().values())


def _grad_case_lstm(rng):
    xs = [Tensor(rng.standard_normal(3)) for _ in range(4)]
    params = LstmParams.create(3, 4, rng)
    projs = [_proj_for(rng, (4,)) for _ in range(4)]

    def forward():
        hidden = encode_sequence(xs, params)
        total = _project(hidden[0], projs[0])
        for h, p in zip(hidden[1:], projs[1:]):
            total = T.add(total, _project(h, p))
        return total

    return forward, xs + list(params.named().values())


def _grad_case_soft_assign(rng):
    params = VladParams.create(5, 3, 4, rng)
    h = Tensor(rng.standard_normal(5))
    proj = _proj_for(rng, (3,))
    wrt = [h, params.w_clusters, params.b_clusters]
    return lambda: _project(soft_assign(h, params), proj), wrt


def _grad_case_vlad_encode(rng):
    params = VladParams.create(4, 3, 5, rng)
    hidden = [Tensor(rng.standard_normal(4)) for _ in range(3)]
    proj = _proj_for(rng, (4, 3))
    wrt = hidden + [params.w_clusters, params.b_clusters]
    return lambda: _project(vlad_encode(hidden, params), proj), wrt


def _grad_case_classify(rng):
    params = VladParams.create(4, 3, 5, rng)
    desc = Tensor(rng.standard_normal((4, 3)))
    proj = _proj_for(rng, (5,))
    return lambda: _project(classify(desc, params), proj), [desc, params.w_out]


def _grad_case_cross_entropy(rng):
    logits = Tensor(rng.standard_normal(6))
    label = int(rng.integers(0, 6))
    return lambda: cross_entropy(T.softmax(logits, axis=0), label), [logits]


GRAD_CASES = [
    ("matmul", _grad_case_matmul),
    ("bias_add", _grad_case_bias_add),
    ("scalar_gate", _grad_case_scalar_gate),
    ("tanh", _grad_case_tanh),
    ("sigmoid", _grad_case_sigmoid),
    ("relu", _grad_case_relu),
    ("log", _grad_case_log),
    ("softmax", _grad_case_softmax),
    ("mean", _grad_case_mean),
    ("conv1x1", _grad_case_conv1x1),
    ("conv3x3_same", _grad_case_conv3x3_same),
    ("conv3x3_strided", _grad_case_conv3x3_strided),
    ("max_pool2x2", _grad_case_max_pool),
    ("global_avg_pool", _grad_case_gap),
    ("upsample_bilinear", _grad_case_upsample),
    ("pool_region", _grad_case_pool_region),
    ("self_attention", _grad_case_self_attention),
    ("context_attention", _grad_case_context_attention),
    ("lstm_sequence", _grad_case_lstm),
    ("soft_assign", _grad_case_soft_assign),
    ("vlad_encode", _grad_case_vlad_encode),
    ("classify", _grad_case_classify),
    ("cross_entropy", _grad_case_cross_entropy),
]


def gradcheck_suite(instances: int = 20, seed: int = 20240817,
                    tol: float = FD_TOL) -> list:
    results = []
    for case_idx, (name, builder) in enumerate(GRAD_CASES):
        worst = 0.0
        for k in range(instances):
            forward, wrt = builder(_rng(seed, case_idx, k))
            worst = max(worst, gradient_error(forward, wrt))
        results.append(CheckResult(f"grad.{name}", worst < tol,
                                   f"max rel err {worst:.2e} over {instances} draws"))
    return results


# --------------------------------------------------------------------------
# Brute-force oracles

def _regions_bruteforce(width, height, dx, dy, stride):
    out = []
    for j in range(0, height, 1):
        if j % stride or j + dy > height:
            continue
        for i in range(0, width, 1):
            if i % stride or i + dx > width:
                continue
            for n in range(1, height + 1):
                if j + n * dy > height:
                    continue
                for m in range(1, width + 1):
                    if i + m * dx > width:
                        continue
                    out.append(Region(i, j, m * dx, n * dy))
    return out


def _lstm_scalar_oracle(xs, params: LstmParams):
    """Pure-python per-scalar gate math over a whole sequence."""
    def sig(v):
        return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))

    n, c = params.hidden_size, params.input_size
    h = [0.0] * n
    cell = [0.0] * n
    out = []
    for x in xs:
        nh, nc = [0.0] * n, [0.0] * n
        for u in range(n):
            pre = {}
            for gate in ("i", "f", "o", "g"):
                acc = float(params.b[gate].data[u])
                for a in range(c):
                    acc += float(x[a]) * float(params.w[gate].data[a, u])
                for a in range(n):
                    acc += h[a] * float(params.u[gate].data[a, u])
                pre[gate] = acc
            gi, gf, go = sig(pre["i"]), sig(pre["f"]), sig(pre["o"])
            gg = math.tanh(pre["g"])
            nc[u] = gf * cell[u] + gi * gg
            nh[u] = go * math.tanh(nc[u])
        h, cell = nh, nc
        out.append(list(h))
    return np.array(out)


def _vlad_loop_oracle(hidden, params: VladParams):
    n, k = params.hidden_size, params.num_clusters
    out = np.zeros((n, k))
    for h in hidden:
        logits = [float(h @ params.w_clusters.data[:, kk] + params.b_clusters.data[kk])
                  for kk in range(k)]
        top = max(logits)
        weights = [math.exp(v - top) for v in logits]
        total = sum(weights)
        for kk in range(k):
            gamma = weights[kk] / total
            for o in range(n):
                out[o, kk] += gamma * float(h[o])
    return out


def oracle_suite(seed: int = 20240818) -> list:
    results = []

    # Full-mode region enumeration against the quadruple loop.
    rng = _rng(seed, 0)
    ok, detail = True, ""
    for _ in range(20):
        dx, dy = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        width = int(rng.integers(dx, 4 * dx + 1))
        height = int(rng.integers(dy, 4 * dy + 1))
        stride = int(rng.integers(1, max(dx, dy) + 2))
        policy = RegionPolicy(delta=(dx, dy), anchor_stride=stride, mode="full")
        got = enumerate_regions(width, height, policy)
        want = _regions_bruteforce(width, height, dx, dy, stride)
        if got != want:
            ok, detail = False, (f"mismatch at {width}x{height} delta ({dx},{dy}) "
                                 f"stride {stride}: {len(got)} vs {len(want)}")
            break
    results.append(CheckResult("oracle.regions_full", ok,
                               detail or "20 random grids match the quadruple loop"))

    # The known 14x14 grid must give exactly 9 regions.
    policy = RegionPolicy(delta=(7, 7), anchor_stride=7, mode="full")
    nine = enumerate_regions(14, 14, policy)
    results.append(CheckResult("oracle.regions_14x14", len(nine) == 9,
                               f"14x14, delta 7, stride 7 -> {len(nine)} regions"))

    # Every pyramid region must be a member of the stride-1 full set.
    rng = _rng(seed, 1)
    ok, detail = True, ""
    for _ in range(10):
        dx = dy = int(rng.integers(2, 6))
        width = height = int(rng.integers(3 * dx, 6 * dx))
        levels = ((1, 2), (2, 3), (3, 2))
        pyr = enumerate_regions(width, height,
                                RegionPolicy(delta=(dx, dy), mode="pyramid",
                                             pyramid_levels=levels))
        full = set(enumerate_regions(width, height,
                                     RegionPolicy(delta=(dx, dy), anchor_stride=1,
                                                  mode="full")))
        expected = sum(g * g for _, g in levels)
        if len(pyr) != expected or any(r not in full for r in pyr):
            ok, detail = False, f"pyramid broke on grid {width} cell {dx}"
            break
    results.append(CheckResult("oracle.regions_pyramid", ok,
                               detail or "pyramid sets are stride-1 full subsets"))

    # LSTM against the per-scalar oracle.
    rng = _rng(seed, 2)
    worst = 0.0
    for _ in range(5):
        params = LstmParams.create(3, 4, rng)
        xs = [rng.standard_normal(3) for _ in range(5)]
        got = np.array([h.data for h in encode_sequence([Tensor(x) for x in xs], params)])
        want = _lstm_scalar_oracle(xs, params)
        worst = max(worst, float(np.max(np.abs(got - want))))
    results.append(CheckResult("oracle.lstm", worst < 1e-10,
                               f"max |diff| {worst:.2e} vs scalar gates"))

    # VLAD loop oracle and the cluster-sum identity.
    rng = _rng(seed, 3)
    worst_loop, worst_ident = 0.0, 0.0
    for _ in range(5):
        params = VladParams.create(4, 3, 5, rng)
        hidden = [rng.standard_normal(4) for _ in range(6)]
        got = vlad_encode([Tensor(h) for h in hidden], params).data
        worst_loop = max(worst_loop, float(np.max(np.abs(
            got - _vlad_loop_oracle(hidden, params)))))
        worst_ident = max(worst_ident, float(np.max(np.abs(
            got.sum(axis=1) - np.sum(hidden, axis=0)))))
    results.append(CheckResult("oracle.vlad_loop", worst_loop < 1e-10,
                               f"max |diff| {worst_loop:.2e} vs double loop"))
    results.append(CheckResult("oracle.vlad_identity", worst_ident < 1e-10,
                               f"cluster sums match state sums to {worst_ident:.2e}"))

    # conv3x3 against the six-nested-loop definition.
    rng = _rng(seed, 4)
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal((5, 6, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        got = T.conv3x3(Tensor(x), Tensor(w), None, 1, "valid").data
        want = np.zeros((3, 4, 3))
        for oy in range(3):
            for ox in range(4):
                for oc in range(3):
                    acc = 0.0
                    for ky in range(3):
                        for kx in range(3):
                            for ic in range(2):
                                acc += x[oy + ky, ox + kx, ic] * w[ky, kx, ic, oc]
                    want[oy, ox, oc] = acc
        worst = max(worst, float(np.max(np.abs(got - want))))
    results.append(CheckResult("oracle.conv3x3", worst < 1e-12,
                               f"max |diff| {worst:.2e} vs nested loops"))
    return results


# --------------------------------------------------------------------------
# Invariants

def invariant_suite(seed: int = 20240819) -> list:
    results = []
    rng = _rng(seed, 0)

    # Softmax families normalize.
    worst = 0.0
    x = Tensor(rng.standard_normal((4, 4, 6)))
    pixel = PixelAttnParams.create(6, rng)
    _, attn = self_attention_with_map(x, pixel)
    worst = max(worst, float(np.max(np.abs(attn.data.sum(axis=1) - 1.0))))
    fbars = [Tensor(rng.standard_normal((2, 2, 3))) for _ in range(5)]
    cap = CapAttnParams.create(12, rng)
    _, alpha = context_attention(fbars, cap)
    worst = max(worst, float(np.max(np.abs(alpha.data.sum(axis=1) - 1.0))))
    vp = VladParams.create(4, 3, 5, rng)
    gam = soft_assign(Tensor(rng.standard_normal(4)), vp)
    worst = max(worst, abs(float(gam.data.sum()) - 1.0))
    probs = classify(Tensor(rng.standard_normal((4, 3))), vp)
    worst = max(worst, abs(float(probs.data.sum()) - 1.0))
    results.append(CheckResult("invariant.softmax_sums", worst < 1e-6,
                               f"worst |sum - 1| = {worst:.2e}"))

    # Identity crop is exact; pooling ones keeps ones (partition of unity).
    src = Tensor(rng.standard_normal((6, 6, 2)))
    ident = pool_region(src, Region(1, 2, 3, 3), PoolSpec((3, 3)))
    exact = np.array_equal(ident.data, src.data[2:5, 1:4])
    ones = pool_region(Tensor(np.ones((6, 6, 2))), Region(0, 0, 6, 6), PoolSpec((4, 4)))
    pou = float(np.max(np.abs(ones.data - 1.0)))
    results.append(CheckResult("invariant.bilinear_identity", exact and pou < 1e-12,
                               f"identity exact: {exact}, unity error {pou:.2e}"))

    # Pooled values stay inside the region's value range.
    ok = True
    for _ in range(10):
        m = rng.standard_normal((7, 8, 3))
        w_px, h_px = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        i = int(rng.integers(0, 8 - w_px + 1))
        j = int(rng.integers(0, 7 - h_px + 1))
        pooled = pool_region(Tensor(m), Region(i, j, w_px, h_px), PoolSpec((3, 3))).data
        slab = m[j:j + h_px, i:i + w_px]
        if pooled.min() < slab.min() - 1e-12 or pooled.max() > slab.max() + 1e-12:
            ok = False
            break
    results.append(CheckResult("invariant.bilinear_bounds", ok,
                               "pooled values stay within region extremes"))

    # Hidden states are strictly inside (-1, 1).
    lp = LstmParams.create(3, 8, rng)
    seq = [Tensor(5.0 * rng.standard_normal(3)) for _ in range(6)]
    hs = np.array([h.data for h in encode_sequence(seq, lp)])
    results.append(CheckResult("invariant.lstm_range", bool(np.all(np.abs(hs) < 1.0)),
                               f"max |h| = {np.max(np.abs(hs)):.4f}"))

    # Self-attention keeps positive weight on the region itself.
    diag_min = float(np.min(np.diag(alpha.data)))
    results.append(CheckResult("invariant.alpha_diagonal", diag_min > 0.0,
                               f"min alpha[r, r] = {diag_min:.2e}"))

    # Zero residual gate means the block is the identity.
    gate_zero = PixelAttnParams.create(6, rng)
    out = self_attention(x, gate_zero)
    same = np.array_equal(out.data, x.data)
    results.append(CheckResult("invariant.gamma_zero_identity", same,
                               "fresh block leaves the map untouched"))

    # conv1x1 equals matmul on the flattened view, bit for bit.
    xm = Tensor(rng.standard_normal((4, 5, 3)))
    wm = Tensor(rng.standard_normal((3, 2)))
    bm = Tensor(rng.standard_normal(2))
    direct = T.conv1x1(xm, wm, bm).data
    flat = (T.matmul(Tensor(xm.data.reshape(20, 3)), wm) + bm).data.reshape(4, 5, 2)
    results.append(CheckResult("invariant.conv1x1_is_matmul",
                               np.array_equal(direct, flat),
                               "flattened matmul path is bit-identical"))

    # Contract violations surface as errors.
    errors_ok = True
    try:
        upsample_bilinear(Tensor(np.zeros((4, 4, 1))), (3, 4))
        errors_ok = False
    except ContractViolation:
        pass
    try:
        with Tape() as tape:
            s = T.sum_all(Tensor(np.ones(3)))
        tape.backward(s)
        tape.backward(s)
        errors_ok = False
    except ContractViolation:
        pass
    try:
        with Tape() as tape:
            v = T.mul(Tensor(np.ones(3)), Tensor(np.ones(3)))
        tape.backward(v)
        errors_ok = False
    except ContractViolation:
        pass
    results.append(CheckResult("invariant.contract_errors", errors_ok,
                               "downscale, tape reuse, non-scalar loss all refused"))
    return results


SUITES = {
    "gradcheck": gradcheck_suite,
    "oracles": oracle_suite,
    "invariants": invariant_suite,
}


def run_suites(which: str = "all", instances: int = 20) -> list:
    if which not in ("all", *SUITES):
        raise ContractViolation(f"unknown verify suite {which!r}")
    results = []
    if which in ("all", "gradcheck"):
        results += gradcheck_suite(instances=instances)
    if which in ("all", "oracles"):
        results += oracle_suite()
    if which in ("all", "invariants"):
        results += invariant_suite()
    return results
