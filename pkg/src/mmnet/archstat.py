"""Analytic parameter and FLOP accounting for architecture specs.

Conventions: a conv has ``Cin*Cout*prod(k) + Cout`` parameters and costs
``2*prod(k)*Cin*Cout`` FLOPs (two per multiply-accumulate) plus one per
output element for the bias.  Batchnorm costs 2 FLOPs per element, ReLU and
residual adds 1, global average pooling 1 per input element.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import ArchSpec, HDBConfig, SpecError
from .ops import conv_output_shape as conv_output_shape_3d


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    flops: int
    out_shape: tuple[int, ...]
    block: str = ""


@dataclass
class CostReport:
    name: str
    input_shape: tuple[int, ...] | None
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def total_flops(self) -> int:
        return sum(layer.flops for layer in self.layers)

    def by_block(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for layer in self.layers:
            key = layer.block or layer.kind
            agg = out.setdefault(key, {"params": 0, "flops": 0})
            agg["params"] += layer.params
            agg["flops"] += layer.flops
        return out

    def scaled(self, batch: int) -> "CostReport":
        layers = [LayerCost(l.name, l.kind, l.params, l.flops * batch, l.out_shape, l.block) for l in self.layers]
        shape = None if self.input_shape is None else (batch,) + tuple(self.input_shape[1:])
        return CostReport(self.name, shape, layers)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape) if self.input_shape else None,
            "total_params": self.total_params,
            "total_flops": self.total_flops,
            "by_block": self.by_block(),
            "layers": [
                {"name": l.name, "kind": l.kind, "params": l.params, "flops": l.flops,
                 "out_shape": list(l.out_shape), "block": l.block}
                for l in self.layers
            ],
        }

    def to_table(self, per_layer: bool = False) -> str:
        rows = [(l.name, l.kind, f"{l.params:,}", f"{l.flops:,}") for l in self.layers] if per_layer else []
        rows += [(k, "", f"{v['params']:,}", f"{v['flops']:,}") for k, v in self.by_block().items()]
        rows.append(("TOTAL", "", f"{self.total_params:,}", f"{self.total_flops:,}"))
        head = ("layer", "kind", "params", "flops")
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(4)]
        fmt = lambda r: "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = [f"# {self.name}", fmt(head), fmt(tuple("-" * w for w in widths))]
        return "\n".join(lines + [fmt(r) for r in rows])


# ------------------------------------------------------------ primitives

def conv_params(cin: int, cout: int, kernel, bias: bool = True) -> int:
    return cin * cout * math.prod(kernel) + (cout if bias else 0)


def conv_flops(cin: int, cout: int, kernel, out_voxels: int, bias: bool = True) -> int:
    return 2 * math.prod(kernel) * cin * cout * out_voxels + (cout * out_voxels if bias else 0)


def bn_params(c: int) -> int:
    return 2 * c


def sam_params(kernel_size: int = 3) -> int:
    return 4 * kernel_size


class _Walker:
    """Accumulates layers while tracking the (C, D, H, W) feature shape."""

    def __init__(self, report: CostReport, shape):
        self.report = report
        self.shape = tuple(shape)

    def conv(self, name, cout, kernel, stride, padding, block, nd=3, shape=None):
        c, d, h, w = shape or self.shape
        if nd == 3:
            d, h, w = conv_output_shape_3d((d, h, w), kernel, stride, padding)
            k = kernel
        else:  # per depth slice
            h, w = conv_output_shape_3d((1, h, w), (1,) + tuple(kernel), (1,) + tuple(stride),
                                        (0,) + tuple(padding))[1:]
            k = kernel
        vox = d * h * w
        self.report.layers.append(LayerCost(name, f"conv{nd}d", conv_params(c, cout, k),
                                            conv_flops(c, cout, k, vox), (cout, d, h, w), block))
        return (cout, d, h, w)

    def elementwise(self, name, kind, per_elem, block, shape=None, params=0):
        shape = shape or self.shape
        self.report.layers.append(LayerCost(name, kind, params, per_elem * math.prod(shape), shape, block))

    def bn(self, name, block, shape=None):
        shape = shape or self.shape
        self.elementwise(name, "batchnorm", 2, block, shape, bn_params(shape[0]))


def _hdb(wk: _Walker, cfg: HDBConfig, name: str) -> None:
    x = wk.shape
    blk = "hdb"
    y = wk.conv(f"{name}.conv3d", cfg.mid_channels, (3, 3, 3), (1, 1, 1), (1, 1, 1), blk)
    wk.bn(f"{name}.bn3d", blk, y)
    wk.elementwise(f"{name}.relu3d", "relu", 1, blk, y)
    s = cfg.stride2d
    a = wk.conv(f"{name}.conv2a", cfg.out_channels, (3, 3), (s, s), (1, 1), blk, nd=2, shape=y)
    wk.bn(f"{name}.bn2a", blk, a)
    wk.elementwise(f"{name}.relu2a", "relu", 1, blk, a)
    b = wk.conv(f"{name}.conv2b", cfg.out_channels, (3, 3), (1, 1), (1, 1), blk, nd=2, shape=a)
    wk.bn(f"{name}.bn2b", blk, b)
    if cfg.mid_channels != cfg.out_channels or s != 1:
        wk.conv(f"{name}.skip2d", cfg.out_channels, (1, 1), (s, s), (0, 0), blk, nd=2, shape=y)
        wk.bn(f"{name}.skip2d_bn", blk, b)
    wk.elementwise(f"{name}.add2d", "add", 1, blk, b)
    wk.elementwise(f"{name}.relu2d", "relu", 1, blk, b)
    if cfg.projection_shortcut:
        wk.conv(f"{name}.shortcut", cfg.out_channels, (1, 1, 1), (1, s, s), (0, 0, 0), blk, shape=x)
        wk.bn(f"{name}.shortcut_bn", blk, b)
    wk.elementwise(f"{name}.add", "add", 1, blk, b)
    wk.elementwise(f"{name}.relu", "relu", 1, blk, b)
    wk.shape = b


def _res3d(wk: _Walker, cfg: HDBConfig, name: str) -> None:
    x = wk.shape
    blk = "res3d"
    s = cfg.stride2d
    a = wk.conv(f"{name}.conv1", cfg.out_channels, (3, 3, 3), (1, s, s), (1, 1, 1), blk)
    wk.bn(f"{name}.bn1", blk, a)
    wk.elementwise(f"{name}.relu1", "relu", 1, blk, a)
    b = wk.conv(f"{name}.conv2", cfg.out_channels, (3, 3, 3), (1, 1, 1), (1, 1, 1), blk, shape=a)
    wk.bn(f"{name}.bn2", blk, b)
    if cfg.projection_shortcut:
        wk.conv(f"{name}.shortcut", cfg.out_channels, (1, 1, 1), (1, s, s), (0, 0, 0), blk, shape=x)
        wk.bn(f"{name}.shortcut_bn", blk, b)
    wk.elementwise(f"{name}.add", "add", 1, blk, b)
    wk.elementwise(f"{name}.relu", "relu", 1, blk, b)
    wk.shape = b


def _p3d(wk: _Walker, cfg: HDBConfig, name: str) -> None:
    """P3D-A style basic block: each 3x3x3 conv factorised into 1x3x3 then 3x1x1."""
    x = wk.shape
    blk = "p3d"
    s = cfg.stride2d
    cur = wk.shape
    for j, stride in enumerate(((1, s, s), (1, 1, 1))):
        cur = wk.conv(f"{name}.conv{j}s", cfg.out_channels, (1, 3, 3), stride, (0, 1, 1), blk, shape=cur)
        wk.bn(f"{name}.bn{j}s", blk, cur)
        wk.elementwise(f"{name}.relu{j}s", "relu", 1, blk, cur)
        cur = wk.conv(f"{name}.conv{j}t", cfg.out_channels, (3, 1, 1), (1, 1, 1), (1, 0, 0), blk, shape=cur)
        wk.bn(f"{name}.bn{j}t", blk, cur)
        if j == 0:
            wk.elementwise(f"{name}.relu{j}t", "relu", 1, blk, cur)
    if cfg.projection_shortcut:
        wk.conv(f"{name}.shortcut", cfg.out_channels, (1, 1, 1), (1, s, s), (0, 0, 0), blk, shape=x)
        wk.bn(f"{name}.shortcut_bn", blk, cur)
    wk.elementwise(f"{name}.add", "add", 1, blk, cur)
    wk.elementwise(f"{name}.relu", "relu", 1, blk, cur)
    wk.shape = cur


_BLOCKS = {"hdb": _hdb, "res3d": _res3d, "p3d": _p3d}


def _attention(wk: _Walker, spec: ArchSpec, name: str) -> None:
    c, d, h, w = wk.shape
    elems = c * d * h * w
    for stream in range(spec.streams):
        prefix = f"{name}.s{stream}"
        flops = 4 * elems                                      # four GAPs
        flops += sum(2 * spec.sam_kernel * n + n for n in (c, d, h, w))  # conv1d + sigmoid
        flops += 7 * elems                                     # four products, three sums
        if spec.attention == "maf":
            flops += 3 * (c + d + h + w)                       # alpha blend of the vectors
        wk.report.layers.append(LayerCost(prefix, spec.attention, sam_params(spec.sam_kernel),
                                          flops, wk.shape, "attention"))


def analyse(spec: ArchSpec, input_shape=None, per_stream: bool = False) -> CostReport:
    """Walk ``spec`` and account every layer for one sample.

    ``per_stream`` restricts the report to a single backbone (no attention,
    one stream's share of the head).
    """
    spec.validate()
    dims = tuple(input_shape) if input_shape is not None else spec.input_dims
    if len(dims) == 3:
        dims = (spec.input_dims[0],) + dims
    report = CostReport(spec.name + (" (one stream)" if per_stream else ""), (1,) + dims)
    streams = 1 if per_stream else spec.streams
    block_fn = _BLOCKS[spec.block_type]
    final = None
    for s in range(streams):
        wk = _Walker(report, dims)
        tag = f"stream{s}"
        wk.shape = wk.conv(f"{tag}.stem", spec.stem.channels, spec.stem.kernel, spec.stem.stride,
                           spec.stem.padding, "stem")
        wk.bn(f"{tag}.stem_bn", "stem")
        wk.elementwise(f"{tag}.stem_relu", "relu", 1, "stem")
        for i, stage in enumerate(spec.stages):
            for j, cfg in enumerate(stage.block_configs()):
                block_fn(wk, cfg, f"{tag}.stage{i}.{j}")
        final = wk.shape
        wk.elementwise(f"{tag}.gap", "gap", 1, "head")
    if not per_stream and spec.attention_points():
        # attention sits between stages; account it on the stage output shapes
        shapes = spec.feature_shapes()[1:]
        for i in spec.attention_points():
            wk = _Walker(report, shapes[i])
            _attention(wk, spec, f"attention{i}")
    fin = final[0] * streams
    report.layers.append(LayerCost("head", "linear", fin * spec.num_classes + spec.num_classes,
                                   2 * fin * spec.num_classes + spec.num_classes,
                                   (spec.num_classes,), "head"))
    return report


def count_params(target, kernel_size: int = 3, per_stream: bool = False) -> CostReport:
    """Parameter accounting for an ArchSpec, an HDBConfig, or the string ``"sam"``."""
    if isinstance(target, ArchSpec):
        return analyse(target, per_stream=per_stream)
    if isinstance(target, HDBConfig):
        return block_report(target, "hdb", (target.in_channels, 4, 16, 16))
    if target == "sam":
        return CostReport("sam", None, [LayerCost("sam", "sam", sam_params(kernel_size), 0, ())])
    raise SpecError(f"cannot count parameters of {target!r}")


def count_flops(spec: ArchSpec, input_shape=None, batch: int = 1, per_stream: bool = False) -> CostReport:
    report = analyse(spec, input_shape, per_stream=per_stream)
    return report if batch == 1 else report.scaled(batch)


def block_report(cfg: HDBConfig, block_type: str, shape) -> CostReport:
    """Cost of a single block of ``block_type`` applied to a (C, D, H, W) input."""
    if shape[0] != cfg.in_channels:
        raise SpecError("input channels do not match the block config")
    report = CostReport(f"{block_type} block", (1,) + tuple(shape))
    _BLOCKS[block_type](_Walker(report, shape), cfg, block_type)
    return report


def model_input(spec: ArchSpec, modality_dhw) -> tuple[int, int, int]:
    """Input (D, H, W) a spec sees when each modality is ``modality_dhw``.

    Dual-stream specs take one modality per stream; single-stream baselines
    take both modalities stacked along depth.
    """
    d, h, w = modality_dhw
    return (d, h, w) if spec.streams == 2 else (2 * d, h, w)


def compare(a: ArchSpec, b: ArchSpec, modality_dhw=None, per_stream: bool = False) -> dict:
    """Totals of two specs and the a/b ratios at a common per-modality input size."""
    if modality_dhw is None:
        ra, rb = analyse(a, per_stream=per_stream), analyse(b)
    else:
        ra = analyse(a, model_input(a, modality_dhw), per_stream=per_stream)
        rb = analyse(b, model_input(b, modality_dhw))
    return {
        a.name: {"params": ra.total_params, "flops": ra.total_flops},
        b.name: {"params": rb.total_params, "flops": rb.total_flops},
        "param_ratio": ra.total_params / rb.total_params,
        "flop_ratio": ra.total_flops / rb.total_flops,
    }
