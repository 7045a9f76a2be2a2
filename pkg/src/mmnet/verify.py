"""Self-verification suite: loop-based oracles, gradient checks and identities.

Every check returns a :class:`CheckResult`; :func:`run_suite` collects them
for the ``verify`` subcommand.  The oracles here are deliberately naive and
share no code with the optimized ops they are compared against.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import asdict, dataclass, replace
from typing import Callable

import numpy as np

from . import archstat, ops, vtf
from .gradcheck import check_gradients
from .model import (HDBConfig, MAFConfig, SAMState, build_model, get_variant, maf_apply,
                    sam_apply, sam_weights)
from .tensor import Axis, Tensor, default_dtype
from .train import roc_auc

FAULTS = ("conv", "sam", "roc")


# ------------------------------------------------------------------ oracles

def conv_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride, padding) -> np.ndarray:
    """Direct nested-loop cross-correlation in 64-bit."""
    nd = w.ndim - 2
    stride = (stride,) * nd if isinstance(stride, int) else tuple(stride)
    padding = (padding,) * nd if isinstance(padding, int) else tuple(padding)
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin = x.shape[:2]
    cout = w.shape[0]
    k = w.shape[2:]
    xp = np.zeros((n, cin) + tuple(s + 2 * p for s, p in zip(x.shape[2:], padding)))
    xp[(slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, x.shape[2:]))] = x
    out_sp = tuple((s - kk) // st + 1 for s, kk, st in zip(xp.shape[2:], k, stride))
    y = np.zeros((n, cout) + out_sp)
    for i in range(n):
        for co in range(cout):
            for pos in itertools.product(*(range(o) for o in out_sp)):
                acc = 0.0 if b is None else float(b[co])
                for ci in range(cin):
                    for off in itertools.product(*(range(kk) for kk in k)):
                        src = tuple(p * st + o for p, st, o in zip(pos, stride, off))
                        acc += xp[(i, ci) + src] * w[(co, ci) + off]
                y[(i, co) + pos] = acc
    return y


def gap_naive(x: np.ndarray, keep: int) -> np.ndarray:
    n, extent = x.shape[0], x.shape[keep]
    out = np.zeros((n, extent))
    for i in range(n):
        for j in range(extent):
            out[i, j] = np.take(x[i], j, axis=keep - 1).astype(np.float64).mean()
    return out


def _conv1d_same(sig: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = len(kernel) // 2
    out = np.zeros_like(sig)
    for j in range(len(sig)):
        for t, kv in enumerate(kernel):
            src = j + t - half
            if 0 <= src < len(sig):
                out[j] += sig[src] * kv
    return out


def sam_weights_naive(x: np.ndarray, kernels) -> list[np.ndarray]:
    """Per-axis weights for channel, depth, height, width in 64-bit."""
    out = []
    for axis, k in zip((1, 2, 3, 4), kernels):
        pooled = gap_naive(x, axis)
        conv = np.stack([_conv1d_same(row, np.asarray(k, np.float64).ravel()) for row in pooled])
        out.append(1.0 / (1.0 + np.exp(-conv)))
    return out


def sam_apply_naive(x: np.ndarray, weights) -> np.ndarray:
    x = x.astype(np.float64)
    y = np.zeros_like(x)
    for axis, v in zip((1, 2, 3, 4), weights):
        shape = [x.shape[0], 1, 1, 1, 1]
        shape[axis] = x.shape[axis]
        y += v.reshape(shape) * x
    return y


def maf_naive(xa, xb, ka, kb, alpha) -> tuple[np.ndarray, np.ndarray]:
    wa, wb = sam_weights_naive(xa, ka), sam_weights_naive(xb, kb)
    ba = [alpha * u + (1 - alpha) * v for u, v in zip(wa, wb)]
    bb = [alpha * v + (1 - alpha) * u for u, v in zip(wa, wb)]
    return sam_apply_naive(xa, ba), sam_apply_naive(xb, bb)


def roc_auc_naive(scores, labels) -> float:
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


# ------------------------------------------------------------------- checks

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float = 0.0
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _random_conv_case(rng: np.random.Generator, nd: int):
    k = tuple(int(v) for v in rng.integers(1, 4, nd))
    stride = tuple(int(v) for v in rng.integers(1, 3, nd))
    pad = tuple(int(rng.integers(0, kk)) for kk in k)
    spatial = tuple(int(kk + rng.integers(0, 4 if nd == 3 else 6)) for kk in k)
    n, cin, cout = (int(v) for v in rng.integers(1, 4, 3))
    x = rng.normal(size=(n, cin) + spatial)
    w = rng.normal(size=(cout, cin) + k)
    b = rng.normal(size=cout) if rng.random() < 0.7 else None
    return x, w, b, stride, pad


def check_conv_oracle(n_cases: int = 120, seed: int = 0, tol: float = 1e-5, fault: str | None = None) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_cases):
        nd = 1 + i % 3
        x, w, b, stride, pad = _random_conv_case(rng, nd)
        ref = conv_naive(x, w, b, stride, pad)
        wk = w.copy()
        if fault == "conv":
            wk.flat[0] += 1e-3
        with default_dtype(np.float64):
            got = ops.conv(Tensor(x), Tensor(wk), None if b is None else Tensor(b), stride, pad).data
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("conv_oracle", worst < tol, worst, tol, detail=f"{n_cases} shapes, 1/2/3-d")


def _reference(dtype):
    # float32 graphs are differenced in float64 so the oracle is not rounding-bound
    return np.float64 if np.dtype(dtype) == np.float32 else None


def _gc(name: str, fn: Callable[[], Tensor], tensors, tol: float, rng, n_coords=20) -> CheckResult:
    errs = check_gradients(fn, tensors, n_coords=n_coords, rng=rng,
                           reference_dtype=_reference(tensors[0].dtype))
    worst = max(errs.values())
    return CheckResult(f"gradcheck_{name}", worst < tol, worst, tol)


def op_gradchecks(dtype=np.float64, seed: int = 0) -> list[CheckResult]:
    tol = 1e-5 if np.dtype(dtype) == np.float64 else 1e-3
    rng = np.random.default_rng(seed)
    res = []
    with default_dtype(dtype):
        def T(*shape, positive=False):
            a = rng.normal(size=shape)
            if positive:
                a = np.abs(a) + 0.5
            return Tensor(a, requires_grad=True)

        def weighted(fn, shape_of=None):
            # random linear functional so no output direction is missed
            out = fn()
            proj = Tensor(rng.normal(size=out.shape))
            return lambda: ops.sum_all(ops.mul(fn(), proj))

        for nd, spatial, k, s, p in ((1, (9,), (3,), 1, 1), (2, (7, 6), (3, 2), (2, 1), (1, 0)),
                                     (3, (4, 5, 5), (3, 3, 3), (1, 2, 2), 1)):
            x, w, b = T(2, 3, *spatial), T(4, 3, *k), T(4)
            res.append(_gc(f"conv{nd}d", weighted(lambda: ops.conv(x, w, b, s, p)), [x, w, b], tol, rng))
        x, g, bt = T(3, 4, 2, 3, 3), T(4, positive=True), T(4)
        res.append(_gc("batchnorm_train", weighted(lambda: ops.batchnorm(x, g, bt, "train")), [x, g, bt], tol, rng))
        rm, rv = rng.normal(size=4), rng.random(4) + 0.5
        res.append(_gc("batchnorm_eval", weighted(lambda: ops.batchnorm(x, g, bt, "eval", rm, rv)), [x, g, bt], tol, rng))
        # keep relu inputs away from the kink
        xr = Tensor(rng.choice([-1, 1], size=(2, 3, 4)) * (rng.random((2, 3, 4)) + 0.1), requires_grad=True)
        res.append(_gc("relu", weighted(lambda: ops.relu(xr)), [xr], tol, rng))
        a = T(2, 5)
        res.append(_gc("sigmoid", weighted(lambda: ops.sigmoid(a)), [a], tol, rng))
        a, c = T(2, 3, 4), T(1, 3, 1)
        res.append(_gc("add_broadcast", weighted(lambda: ops.add(a, c)), [a, c], tol, rng))
        res.append(_gc("mul_broadcast", weighted(lambda: ops.mul(a, c)), [a, c], tol, rng))
        u, v = T(2, 6), T(2, 6)
        res.append(_gc("blend", weighted(lambda: ops.blend(u, v, 0.6)), [u, v], tol, rng))
        x5 = T(2, 3, 4, 2, 3)
        for axis in (Axis.CHANNEL, Axis.DEPTH, Axis.HEIGHT, Axis.WIDTH):
            res.append(_gc(f"gap_{axis.name.lower()}", weighted(lambda: ops.gap_over(x5, axis)), [x5], tol, rng))
        res.append(_gc("fold_unfold", weighted(lambda: ops.unfold_depth(ops.fold_depth(x5), 4)), [x5], tol, rng))
        f, W, bias = T(3, 5), T(4, 5), T(4)
        res.append(_gc("linear", weighted(lambda: ops.linear(f, W, bias)), [f, W, bias], tol, rng))
        logits = T(5, 4)
        labels = rng.integers(0, 4, 5)
        res.append(_gc("softmax_cross_entropy", lambda: ops.softmax_cross_entropy(logits, labels), [logits], tol, rng))
        p, q = T(2, 3), T(2, 2)
        res.append(_gc("concat", weighted(lambda: ops.concat([p, q], 1)), [p, q], tol, rng))
        xs = T(2, 3, 3, 4, 4)
        st = SAMState(3)
        for kern in st.kernels():
            kern.data[...] = rng.normal(size=kern.shape) * 0.5
        res.append(_gc("sam", weighted(lambda: sam_apply(xs, sam_weights(xs, st))), [xs, *st.kernels()], tol, rng))
    return res


def gradcheck_spec(dims=(1, 2, 8, 8)):
    """MMNet-tiny layer structure on a reduced grid so the full-model check stays fast."""
    return replace(get_variant("mmnet-tiny"), input_dims=dims)


def model_gradcheck(dtype=np.float64, seed: int = 0, n_coords: int = 8, batch: int = 2,
                    dims=(1, 2, 8, 8)) -> CheckResult:
    tol = 1e-4 if np.dtype(dtype) == np.float64 else 1e-2
    rng = np.random.default_rng(seed)
    with default_dtype(dtype):
        model = build_model(gradcheck_spec(dims), seed=seed, maf=MAFConfig(0.6))
        # non-trivial attention so its gradients are exercised
        for s in model.sam_a + model.sam_b:
            if s is not None:
                for kern in s.kernels():
                    kern.data[...] = rng.normal(size=kern.shape) * 0.3
        xa = Tensor(rng.normal(size=(batch,) + dims))
        xb = Tensor(rng.normal(size=(batch,) + dims))
        y = rng.integers(0, model.spec.num_classes, batch)
        names, params = zip(*model.named_parameters())
        errs = check_gradients(lambda: ops.softmax_cross_entropy(model(xa, xb), y), list(params),
                               n_coords=n_coords, rng=rng, names=names,
                               reference_dtype=_reference(dtype), promote=(xa, xb))
    worst_name = max(errs, key=errs.get)
    bits = 64 if np.dtype(dtype) == np.float64 else 32
    return CheckResult(f"gradcheck_model_{bits}", errs[worst_name] < tol, errs[worst_name], tol,
                       detail=f"{len(errs)} parameter tensors; worst {worst_name}")


def check_sam_identity(n_inputs: int = 20, seed: int = 0) -> CheckResult:
    """Zero kernels give sigmoid(0)=1/2 on every axis, so the output is 2x."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    with default_dtype(np.float32):
        for _ in range(n_inputs):
            shape = (int(rng.integers(1, 3)),) + tuple(int(v) for v in rng.integers(1, 6, 4))
            x = Tensor(rng.normal(size=shape).astype(np.float32))
            y = sam_apply(x, sam_weights(x, SAMState(3))).data
            ulp = np.spacing(np.abs(2 * x.data))
            worst = max(worst, float(np.max(np.abs(y - 2 * x.data) / ulp)))
    return CheckResult("sam_zero_init_identity", worst <= 1.0, worst, 1.0, detail="max error in ulps")


def check_sam_oracle(seed: int = 0, tol: float = 1e-10, fault: str | None = None) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with default_dtype(np.float64):
        for _ in range(10):
            x = rng.normal(size=(2, 3, 4, 5, 3))
            st = SAMState(3)
            for kern in st.kernels():
                kern.data[...] = rng.normal(size=kern.shape)
            got = sam_apply(Tensor(x), sam_weights(Tensor(x), st)).data
            kernels = [k.data.copy() for k in st.kernels()]
            if fault == "sam":
                kernels[0].flat[0] += 1e-3
            ref = sam_apply_naive(x, sam_weights_naive(x, kernels))
            worst = max(worst, float(np.max(np.abs(got - ref))))
    return CheckResult("sam_oracle", worst < tol, worst, tol)


def check_maf(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    with default_dtype(np.float32):
        xa = Tensor(rng.normal(size=(2, 4, 3, 5, 5)))
        xb = Tensor(rng.normal(size=(2, 4, 3, 5, 5)))
        sa, sb = SAMState(3), SAMState(3)
        for kern in sa.kernels() + sb.kernels():
            kern.data[...] = rng.normal(size=kern.shape)
        ya, yb = maf_apply(xa, xb, sa, sb, MAFConfig(1.0))
        ra, rb = sam_apply(xa, sam_weights(xa, sa)), sam_apply(xb, sam_weights(xb, sb))
        diff = max(float(np.max(np.abs(ya.data - ra.data))), float(np.max(np.abs(yb.data - rb.data))))
        out.append(CheckResult("maf_alpha1_equals_sam", diff == 0.0, diff, 0.0))

        outs = [maf_apply(xa, xa, sa, sa, MAFConfig(a))[0].data for a in (0.0, 0.3, 0.7, 1.0)]
        diff = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
        out.append(CheckResult("maf_tied_alpha_invariance", diff == 0.0, diff, 0.0))

    with default_dtype(np.float64):
        worst = 0.0
        for alpha in (0.0, 0.3, 0.6, 1.0):
            ya, yb = maf_apply(Tensor(xa.data), Tensor(xb.data), sa, sb, MAFConfig(alpha))
            na, nb = maf_naive(xa.data, xb.data, [k.data for k in sa.kernels()], [k.data for k in sb.kernels()], alpha)
            worst = max(worst, float(np.max(np.abs(ya.data - na))), float(np.max(np.abs(yb.data - nb))))
        out.append(CheckResult("maf_oracle", worst < 1e-5, worst, 1e-5))
    return out


def check_gap_oracle(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 5, 6))
    worst = 0.0
    with default_dtype(np.float64):
        for axis in (1, 2, 3, 4):
            worst = max(worst, float(np.max(np.abs(ops.gap_over(Tensor(x), axis).data - gap_naive(x, axis)))))
    return CheckResult("gap_oracle", worst < 1e-12, worst, 1e-12)


def check_roundtrips(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(50):
        shape = tuple(int(v) for v in rng.integers(1, 6, 5))
        x = Tensor(rng.normal(size=shape).astype(np.float32))
        back = ops.unfold_depth(ops.fold_depth(x), shape[2]).data
        flat = ops.reshape(ops.reshape(x, (x.size,)), shape).data
        fails += not (np.array_equal(back, x.data) and np.array_equal(flat, x.data))
        fails += not np.array_equal(vtf.loads(vtf.dumps(x.data)), x.data)
    out = [CheckResult("fold_reshape_vtf_roundtrip", fails == 0, float(fails), 0.0)]
    cfg = HDBConfig(8, 4, 16, 2)
    counts = {archstat.block_report(cfg, "hdb", (8, d, 16, 16)).total_params for d in (1, 2, 5, 18)}
    out.append(CheckResult("hdb_params_depth_independent", len(counts) == 1, float(len(counts) - 1), 0.0))
    return out


def check_roc(n: int = 100, seed: int = 0, fault: str | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n):
        size = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 8, size) / 8.0  # coarse grid forces ties
        got = roc_auc(scores, labels)
        if fault == "roc":
            got += 1e-9
        mismatches += got != roc_auc_naive(scores, labels)
    sym = 0.0
    for _ in range(n):
        size = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size)
        labels[0], labels[1] = 0, 1
        scores = rng.random(size)
        sym = max(sym, abs(roc_auc(1 - scores, labels) - (1 - roc_auc(scores, labels))))
    return [CheckResult("roc_auc_oracle", mismatches == 0, float(mismatches), 0.0),
            CheckResult("roc_auc_symmetry", sym < 1e-12, sym, 1e-12)]


def _timed(fn, *args, **kw):
    t0 = time.perf_counter()
    r = fn(*args, **kw)
    dt = time.perf_counter() - t0
    rs = r if isinstance(r, list) else [r]
    for c in rs:
        c.seconds = dt / len(rs)
    return rs


def run_suite(precision: int = 64, fault: str | None = None, seed: int = 0) -> list[CheckResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    dtype = np.float64 if precision == 64 else np.float32
    results: list[CheckResult] = []
    results += _timed(check_conv_oracle, seed=seed, fault=fault)
    results += _timed(check_gap_oracle, seed)
    results += _timed(check_sam_oracle, seed, fault=fault)
    results += _timed(check_sam_identity, seed=seed)
    results += _timed(check_maf, seed)
    results += _timed(check_roundtrips, seed)
    results += _timed(check_roc, seed=seed, fault=fault)
    results += _timed(op_gradchecks, dtype, seed)
    results += _timed(model_gradcheck, dtype, seed)
    return results
