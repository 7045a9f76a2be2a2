"""Hybrid dimensional blocks, stereoscopic attention, mutual attention and the
dual-stream classifier built from them."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ops, vtf
from .nn import BatchNorm, Conv, Linear, Module, _param
from .tensor import Axis, Tensor, get_default_dtype, no_tape

ATTENTION_MODES = ("maf", "sam", "none")
BLOCK_TYPES = ("hdb", "res3d", "p3d")


class SpecError(ValueError):
    """Invalid architecture description.  ``key`` names the offending field."""

    def __init__(self, msg: str, key: str | None = None):
        super().__init__(msg)
        self.key = key


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise SpecError(f"expected an int or 3 values, got {v}")
    return v


# ------------------------------------------------------------------ configs

@dataclass(frozen=True)
class HDBConfig:
    in_channels: int
    mid_channels: int
    out_channels: int
    stride2d: int = 1
    projection_shortcut: bool | None = None  # None: derive from shapes

    def __post_init__(self):
        if min(self.in_channels, self.mid_channels, self.out_channels) < 1:
            raise SpecError("channel counts must be positive", "channels")
        if self.stride2d not in (1, 2):
            raise SpecError(f"stride2d must be 1 or 2, got {self.stride2d}", "stride2d")
        if self.projection_shortcut is None:
            object.__setattr__(self, "projection_shortcut", self.needs_projection)
        elif self.needs_projection and not self.projection_shortcut:
            raise SpecError("projection shortcut required when channels or stride change",
                            "projection_shortcut")

    @property
    def needs_projection(self) -> bool:
        return self.in_channels != self.out_channels or self.stride2d != 1


@dataclass(frozen=True)
class MAFConfig:
    alpha: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise SpecError(f"alpha must lie in [0, 1], got {self.alpha}", "alpha")


@dataclass(frozen=True)
class StemSpec:
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    channels: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        if self.channels < 1 or min(self.kernel) < 1 or min(self.stride) < 1:
            raise SpecError("stem kernel, stride and channels must be positive", "stem")

    @property
    def padding(self) -> tuple[int, int, int]:
        return tuple(k // 2 for k in self.kernel)


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    hdb: HDBConfig
    repeat_mid_channels: int | None = None  # mid width of blocks after the first

    def __post_init__(self):
        if self.blocks < 1:
            raise SpecError("a stage needs at least one block", "blocks")

    def block_configs(self) -> list[HDBConfig]:
        c = self.hdb.out_channels
        mid = self.repeat_mid_channels or self.hdb.mid_channels
        return [self.hdb] + [HDBConfig(c, mid, c, 1)] * (self.blocks - 1)


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stem: StemSpec
    stages: tuple[StageSpec, ...]
    num_classes: int
    input_dims: tuple[int, int, int, int]  # (C, D, H, W) per modality
    attention: str = "maf"
    attention_after: tuple[int, ...] | None = None  # stage indices; None = every stage
    sam_kernel: int = 3
    block_type: str = "hdb"
    streams: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        if self.attention_after is not None:
            object.__setattr__(self, "attention_after", tuple(self.attention_after))
        self.validate()

    def validate(self) -> None:
        if len(self.input_dims) != 4 or min(self.input_dims) < 1:
            raise SpecError(f"input_dims must be 4 positive extents, got {self.input_dims}", "input_dims")
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2", "num_classes")
        if self.attention not in ATTENTION_MODES:
            raise SpecError(f"attention must be one of {ATTENTION_MODES}", "attention")
        if self.block_type not in BLOCK_TYPES:
            raise SpecError(f"block_type must be one of {BLOCK_TYPES}", "block_type")
        if self.sam_kernel < 1 or self.sam_kernel % 2 == 0:
            raise SpecError("sam_kernel must be a positive odd integer", "sam_kernel")
        if self.streams not in (1, 2):
            raise SpecError("streams must be 1 or 2", "streams")
        if not self.stages:
            raise SpecError("at least one stage is required", "stages")
        prev = self.stem.channels
        for i, st in enumerate(self.stages):
            if st.hdb.in_channels != prev:
                raise SpecError(f"stage {i} expects {st.hdb.in_channels} input channels, "
                                f"previous stage gives {prev}", "stages")
            prev = st.hdb.out_channels
        if self.attention_after is not None:
            bad = [i for i in self.attention_after if not 0 <= i < len(self.stages)]
            if bad:
                raise SpecError(f"attention_after indices out of range: {bad}", "attention_after")
        # spatial extents must survive every stride
        _, d, h, w = self.input_dims
        try:
            d, h, w = ops.conv_output_shape((d, h, w), self.stem.kernel, self.stem.stride, self.stem.padding)
            for st in self.stages:
                s = st.hdb.stride2d
                h, w = ops.conv_output_shape((h, w), (3, 3), (s, s), (1, 1))
        except ValueError as exc:
            raise SpecError(f"spatial extents collapse: {exc}", "input_dims") from exc

    def attention_points(self) -> tuple[int, ...]:
        if self.attention == "none" or self.streams == 1 and self.attention == "maf":
            return ()
        if self.attention_after is None:
            return tuple(range(len(self.stages)))
        return self.attention_after

    def feature_shapes(self) -> list[tuple[int, int, int, int]]:
        """(C, D, H, W) after the stem and after every stage."""
        _, d, h, w = self.input_dims
        d, h, w = ops.conv_output_shape((d, h, w), self.stem.kernel, self.stem.stride, self.stem.padding)
        out = [(self.stem.channels, d, h, w)]
        for st in self.stages:
            for cfg in st.block_configs():
                h, w = ops.conv_output_shape((h, w), (3, 3), (cfg.stride2d,) * 2, (1, 1))
                out_c = cfg.out_channels
            out.append((out_c, d, h, w))
        return out

    # --- (de)serialisation
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            d = dict(d)
            stem = StemSpec(**d.pop("stem"))
            stages = []
            for i, st in enumerate(d.pop("stages")):
                st = dict(st)
                stages.append(StageSpec(blocks=st["blocks"], hdb=HDBConfig(**st["hdb"]),
                                        repeat_mid_channels=st.get("repeat_mid_channels")))
            return cls(stem=stem, stages=tuple(stages), **d)
        except SpecError:
            raise
        except KeyError as exc:
            raise SpecError(f"missing field {exc.args[0]!r}", str(exc.args[0])) from exc
        except TypeError as exc:
            raise SpecError(f"malformed spec: {exc}") from exc


def mmnet_tiny(num_classes: int = 4, input_dims=(1, 8, 32, 32), attention: str = "maf") -> ArchSpec:
    return ArchSpec(
        name="mmnet-tiny",
        stem=StemSpec((3, 3, 3), (1, 1, 1), 8),
        stages=(
            StageSpec(1, HDBConfig(8, 8, 8, 1)),
            StageSpec(1, HDBConfig(8, 8, 16, 2)),
            StageSpec(1, HDBConfig(16, 16, 32, 2)),
        ),
        num_classes=num_classes,
        input_dims=tuple(input_dims),
        attention=attention,
    )


def _resnet_like(name, layers, block_type, mid_ratio, num_classes, input_dims, stem, streams):
    widths = (64, 128, 256, 512)
    stages = []
    prev = stem.channels
    for i, (n, c) in enumerate(zip(layers, widths)):
        stride = 1 if i == 0 else 2
        stages.append(StageSpec(n, HDBConfig(prev, max(1, int(prev * mid_ratio)), c, stride),
                                repeat_mid_channels=max(1, int(c * mid_ratio))))
        prev = c
    return ArchSpec(name=name, stem=stem, stages=tuple(stages), num_classes=num_classes,
                    input_dims=tuple(input_dims), block_type=block_type, streams=streams)


PAPER_DIMS = (1, 18, 224, 224)


def mmnet18(num_classes: int = 5, input_dims=PAPER_DIMS) -> ArchSpec:
    return _resnet_like("mmnet18", (2, 2, 2, 2), "hdb", MMNET_MID_RATIO, num_classes, input_dims,
                        StemSpec((1, 7, 7), (1, 2, 2), 64), 2)


def mmnet34(num_classes: int = 5, input_dims=PAPER_DIMS) -> ArchSpec:
    return _resnet_like("mmnet34", (3, 4, 6, 3), "hdb", MMNET_MID_RATIO, num_classes, input_dims,
                        StemSpec((1, 7, 7), (1, 2, 2), 64), 2)


# single-stream baselines see both modalities stacked along depth
STACKED_DIMS = (1, 36, 224, 224)


def resnet3d(depth: int, num_classes: int = 5, input_dims=STACKED_DIMS) -> ArchSpec:
    layers = {18: (2, 2, 2, 2), 34: (3, 4, 6, 3)}[depth]
    return _resnet_like(f"resnet3d{depth}", layers, "res3d", 1.0, num_classes, input_dims,
                        StemSpec((7, 7, 7), (1, 2, 2), 64), 1)


def p3d(depth: int, num_classes: int = 5, input_dims=STACKED_DIMS) -> ArchSpec:
    layers = {18: (2, 2, 2, 2), 34: (3, 4, 6, 3)}[depth]
    return _resnet_like(f"p3d{depth}", layers, "p3d", 1.0, num_classes, input_dims,
                        StemSpec((1, 7, 7), (1, 2, 2), 64), 1)


# width of the 3x3x3 path inside HDBs of the ResNet-shaped presets, relative to block input;
# 0.375 puts the dual-stream MMNet34 preset at ~52M parameters
MMNET_MID_RATIO = 0.375

VARIANTS = {
    "mmnet-tiny": mmnet_tiny,
    "mmnet18": mmnet18,
    "mmnet34": mmnet34,
    "resnet3d18": lambda: resnet3d(18),
    "resnet3d34": lambda: resnet3d(34),
    "p3d18": lambda: p3d(18),
    "p3d34": lambda: p3d(34),
}


def get_variant(name: str) -> ArchSpec:
    try:
        return VARIANTS[name]()
    except KeyError:
        raise SpecError(f"unknown variant {name!r}; known: {sorted(VARIANTS)}", "variant") from None


# ------------------------------------------------------------------- layers

class HDB(Module):
    """3x3x3 conv/BN/ReLU, then a shared 2D residual block over depth slices,
    then a block-level residual sum."""

    def __init__(self, cfg: HDBConfig, rng: np.random.Generator):
        self.cfg = cfg
        c, c1, c2, s = cfg.in_channels, cfg.mid_channels, cfg.out_channels, cfg.stride2d
        self.conv3d = Conv(c, c1, 3, 1, 1, nd=3, rng=rng)
        self.bn3d = BatchNorm(c1)
        self.conv2a = Conv(c1, c2, 3, s, 1, nd=2, rng=rng)
        self.bn2a = BatchNorm(c2)
        self.conv2b = Conv(c2, c2, 3, 1, 1, nd=2, rng=rng)
        self.bn2b = BatchNorm(c2)
        if c1 != c2 or s != 1:
            self.skip2d = Conv(c1, c2, 1, s, 0, nd=2, rng=rng)
            self.skip2d_bn = BatchNorm(c2)
        else:
            self.skip2d = self.skip2d_bn = None
        if cfg.projection_shortcut:
            self.shortcut = Conv(c, c2, 1, (1, s, s), 0, nd=3, rng=rng)
            self.shortcut_bn = BatchNorm(c2)
        else:
            self.shortcut = self.shortcut_bn = None

    def __call__(self, x: Tensor) -> Tensor:
        return hdb_forward(x, self)


def hdb_forward(x: Tensor, block: HDB) -> Tensor:
    cfg = block.cfg
    if x.ndim != 5 or x.shape[1] != cfg.in_channels:
        raise ValueError(f"HDB expects (N,{cfg.in_channels},D,H,W), got {x.shape}")
    depth = x.shape[2]
    y = ops.relu(block.bn3d(block.conv3d(x)))
    f = ops.fold_depth(y)
    h = ops.relu(block.bn2a(block.conv2a(f)))
    h = block.bn2b(block.conv2b(h))
    skip = f if block.skip2d is None else block.skip2d_bn(block.skip2d(f))
    h = ops.relu(ops.add(h, skip))
    main = ops.unfold_depth(h, depth)
    sc = x if block.shortcut is None else block.shortcut_bn(block.shortcut(x))
    if sc.shape != main.shape:
        raise ValueError(f"shortcut shape {sc.shape} does not match main branch {main.shape}")
    return ops.relu(ops.add(main, sc))


@dataclass
class AttentionWeights:
    """Per-axis attention vectors, each shaped (N, extent)."""
    c: Tensor
    d: Tensor
    h: Tensor
    w: Tensor

    def items(self):
        return zip((Axis.CHANNEL, Axis.DEPTH, Axis.HEIGHT, Axis.WIDTH), (self.c, self.d, self.h, self.w))


class SAMState(Module):
    """Four bias-free single-channel 1D kernels, one per axis; zero-initialised."""

    def __init__(self, kernel_size: int = 3):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ValueError("SAM kernel size must be odd")
        self.kernel_size = kernel_size
        self.kc = _param(np.zeros((1, 1, kernel_size)))
        self.kd = _param(np.zeros((1, 1, kernel_size)))
        self.kh = _param(np.zeros((1, 1, kernel_size)))
        self.kw = _param(np.zeros((1, 1, kernel_size)))

    def kernels(self):
        return (self.kc, self.kd, self.kh, self.kw)


def sam_weights(x: Tensor, s: SAMState) -> AttentionWeights:
    if x.ndim != 5:
        raise ValueError(f"SAM expects (N,C,D,H,W), got {x.shape}")
    n = x.shape[0]
    out = []
    for axis, k in zip((Axis.CHANNEL, Axis.DEPTH, Axis.HEIGHT, Axis.WIDTH), s.kernels()):
        length = x.shape[axis]
        sig = ops.reshape(ops.gap_over(x, axis), (n, 1, length))
        conv = ops.conv1d(sig, k, None, 1, s.kernel_size // 2)
        out.append(ops.reshape(ops.sigmoid(conv), (n, length)))
    return AttentionWeights(*out)


def _axis_view(w: Tensor, axis: Axis, n: int) -> Tensor:
    shape = [n, 1, 1, 1, 1]
    shape[axis] = w.shape[1]
    return ops.reshape(w, shape)


def _check_weights(x: Tensor, w: AttentionWeights) -> None:
    for axis, v in w.items():
        if v.shape != (x.shape[0], x.shape[axis]):
            raise ValueError(f"{axis.name.lower()} weights {v.shape} do not match feature map {x.shape}")


def sam_apply(x: Tensor, w: AttentionWeights) -> Tensor:
    """Sum of the four axis-weighted copies of ``x``."""
    _check_weights(x, w)
    n = x.shape[0]
    out = None
    for axis, v in w.items():
        term = ops.mul(_axis_view(v, axis, n), x)
        out = term if out is None else ops.add(out, term)
    return out


def maf_apply(xa: Tensor, xb: Tensor, sa: SAMState, sb: SAMState,
              cfg: MAFConfig) -> tuple[Tensor, Tensor]:
    """Mutual attention: each stream is weighted by a blend of its own and the
    other stream's attention vectors."""
    if xa.shape != xb.shape:
        raise ValueError(f"stream shapes differ: {xa.shape} vs {xb.shape}")
    wa, wb = sam_weights(xa, sa), sam_weights(xb, sb)
    blend_a = AttentionWeights(*(ops.blend(u, v, cfg.alpha) for (_, u), (_, v) in zip(wa.items(), wb.items())))
    blend_b = AttentionWeights(*(ops.blend(v, u, cfg.alpha) for (_, u), (_, v) in zip(wa.items(), wb.items())))
    return sam_apply(xa, blend_a), sam_apply(xb, blend_b)


# -------------------------------------------------------------- the network

class Backbone(Module):
    def __init__(self, spec: ArchSpec, rng: np.random.Generator):
        cin = spec.input_dims[0]
        self.stem = Conv(cin, spec.stem.channels, spec.stem.kernel, spec.stem.stride,
                         spec.stem.padding, nd=3, rng=rng)
        self.stem_bn = BatchNorm(spec.stem.channels)
        self.stages = [[HDB(cfg, rng) for cfg in st.block_configs()] for st in spec.stages]

    def stem_forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.stem_bn(self.stem(x)))


class DualStreamModel(Module):
    def __init__(self, spec: ArchSpec, maf: MAFConfig, rng: np.random.Generator):
        self.spec = spec
        self.maf = maf
        self.stream_a = Backbone(spec, rng)
        self.stream_b = Backbone(spec, rng)
        points = spec.attention_points()
        self.sam_a = [SAMState(spec.sam_kernel) if i in points else None for i in range(len(spec.stages))]
        self.sam_b = [SAMState(spec.sam_kernel) if i in points else None for i in range(len(spec.stages))]
        feat = spec.stages[-1].hdb.out_channels
        self.head = Linear(2 * feat, spec.num_classes, rng=rng)

    @property
    def alpha(self) -> float:
        return self.maf.alpha

    def features(self, xa, xb) -> tuple[Tensor, Tensor]:
        """Final pre-pooling feature maps of both streams."""
        xa, xb = _as_input(xa), _as_input(xb)
        expect = self.spec.input_dims
        for x in (xa, xb):
            if x.ndim != 5 or x.shape[1:] != expect:
                raise ValueError(f"input {x.shape} does not match (N,)+{expect}")
        if xa.shape != xb.shape:
            raise ValueError("both modalities need identical shapes")
        ha, hb = self.stream_a.stem_forward(xa), self.stream_b.stem_forward(xb)
        for i, (blocks_a, blocks_b) in enumerate(zip(self.stream_a.stages, self.stream_b.stages)):
            for ba, bb in zip(blocks_a, blocks_b):
                ha, hb = ba(ha), bb(hb)
            sa, sb = self.sam_a[i], self.sam_b[i]
            if sa is None:
                continue
            if self.spec.attention == "maf":
                ha, hb = maf_apply(ha, hb, sa, sb, self.maf)
            else:
                ha, hb = sam_apply(ha, sam_weights(ha, sa)), sam_apply(hb, sam_weights(hb, sb))
        return ha, hb

    def __call__(self, xa, xb) -> Tensor:
        return forward(self, xa, xb)


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=get_default_dtype())


def build_model(spec: ArchSpec, seed: int = 0, maf: MAFConfig | None = None) -> DualStreamModel:
    if spec.block_type != "hdb":
        raise SpecError(f"only HDB backbones are runnable; {spec.block_type!r} is cost-model only",
                        "block_type")
    if spec.streams != 2:
        raise SpecError("the runnable model is dual-stream", "streams")
    return DualStreamModel(spec, maf or MAFConfig(), np.random.default_rng(seed))


def forward(model: DualStreamModel, xa, xb) -> Tensor:
    ha, hb = model.features(xa, xb)
    pooled = ops.concat([ops.gap_over(ha, Axis.CHANNEL), ops.gap_over(hb, Axis.CHANNEL)], axis=1)
    return model.head(pooled)


# --------------------------------------------------------------------- CAM

def _resize_linear(arr: np.ndarray, axis: int, size: int) -> np.ndarray:
    """Linear resampling along one axis with half-voxel aligned centres."""
    n = arr.shape[axis]
    if n == size:
        return arr
    src = (np.arange(size) + 0.5) * (n / size) - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    t = src - lo
    shape = [1] * arr.ndim
    shape[axis] = size
    t = t.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - t) + np.take(arr, hi, axis=axis) * t


def upsample_trilinear(vol: np.ndarray, size: Sequence[int]) -> np.ndarray:
    """Resize the trailing three axes of ``vol`` to ``size``."""
    out = vol
    for i, s in enumerate(size):
        out = _resize_linear(out, vol.ndim - 3 + i, int(s))
    return out


def _normalise(m: np.ndarray) -> np.ndarray:
    m = np.maximum(m, 0.0)
    top = m.max()
    return m / top if top > 0 else np.zeros_like(m)


def cam(model: DualStreamModel, xa, xb, class_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Class activation maps per stream, shaped (N, D, H, W) with values in [0, 1]."""
    k = model.spec.num_classes
    if not 0 <= class_index < k:
        raise ValueError(f"class index {class_index} outside [0, {k})")
    was_training = model.training
    model.eval()
    try:
        with no_tape():
            ha, hb = model.features(xa, xb)
    finally:
        model.train(was_training)
    row = model.head.weight.data[class_index].astype(np.float64)
    c = ha.shape[1]
    size = model.spec.input_dims[1:]
    maps = []
    for feat, w in ((ha, row[:c]), (hb, row[c:])):
        raw = np.einsum("ncdhw,c->ndhw", feat.data.astype(np.float64), w)
        per = np.stack([upsample_trilinear(_normalise(m), size) for m in raw])
        maps.append(np.clip(per, 0.0, 1.0))
    return maps[0], maps[1]


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: DualStreamModel, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one VTF file per parameter/buffer."""
    d = Path(directory)
    (d / "tensors").mkdir(parents=True, exist_ok=True)
    params, buffers = {}, {}
    for name, p in model.named_parameters():
        fname = f"tensors/{name}.vtf"
        vtf.save(d / fname, p.data)
        params[name] = {"file": fname, "shape": list(p.shape)}
    for name, b in model.named_buffers():
        fname = f"tensors/{name}.vtf"
        vtf.save(d / fname, b)
        buffers[name] = {"file": fname, "shape": list(b.shape)}
    manifest = {
        "format": "mmnet-checkpoint/1",
        "arch": model.spec.to_dict(),
        "maf": asdict(model.maf),
        "dtype": str(model.head.weight.dtype),
        "parameters": params,
        "buffers": buffers,
        "extra": extra or {},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d / "manifest.json"


def load_weights(model: Module, directory, strict: bool = True,
                 rename: dict[str, str] | None = None) -> dict[str, list[str]]:
    """Copy tensors named in a manifest into ``model``.

    ``rename`` maps manifest names to model names (used to import 2D residual
    weights into HDB sub-blocks).  With ``strict=False`` missing names and
    shape mismatches are skipped and reported instead of raising.
    """
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    targets = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    report = {"loaded": [], "skipped": []}
    entries = list(manifest.get("parameters", {}).items()) + list(manifest.get("buffers", {}).items())
    rename = rename or {}
    claimed = set(rename.values())
    for src, entry in entries:
        dst = rename.get(src, src)
        if src not in rename and dst in claimed:
            # an explicit rename onto this name wins over the identity mapping
            report["skipped"].append(src)
            continue
        arr = vtf.load(d / entry["file"])
        if dst in targets:
            tgt = targets[dst].data
        elif dst in buffers:
            tgt = buffers[dst]
        else:
            if strict:
                raise KeyError(f"manifest tensor {src!r} has no counterpart in the model")
            report["skipped"].append(src)
            continue
        if tgt.shape != arr.shape:
            if strict:
                raise ValueError(f"{src}: shape {arr.shape} != model {tgt.shape}")
            report["skipped"].append(src)
            continue
        tgt[...] = arr
        report["loaded"].append(dst)
    if strict:
        missing = set(targets) - set(report["loaded"])
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    return report


def load_checkpoint(directory) -> DualStreamModel:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    spec = ArchSpec.from_dict(manifest["arch"])
    from .tensor import default_dtype
    with default_dtype(manifest.get("dtype", "float32")):
        model = build_model(spec, 0, MAFConfig(**manifest["maf"]))
    load_weights(model, d, strict=True)
    return model
