"""Seeded paired-modality phantom volumes with planted ellipsoidal lesions.

Class signatures (``textured``, sign of the lesion contrast in A, in B):

    0: smooth,   A bright, B bright
    1: smooth,   A dark,   B dark
    2: textured, A bright, B bright
    3: textured, A bright, B dark

Classes 2 and 3 share one distribution in modality A; only the sign of the
B/A contrast ratio tells them apart.  With ``pairing="xor"`` the sign of A is
drawn at random for classes 2 and 3 and B copies it (2) or flips it (3), so
each modality on its own carries no information about the pair and only the
joint signs do.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import vtf

PAPER_DIMS = (18, 224, 224)


@dataclass(frozen=True)
class DatasetSpec:
    dims: tuple[int, int, int] = (8, 32, 32)
    num_classes: int = 4
    # lesion radii as fractions of the extent along each axis
    radius_range: tuple[float, float] = (0.15, 0.25)
    depth_radius_range: tuple[float, float] = (0.25, 0.375)
    contrast: float = 3.0
    intensity_jitter: float = 0.25
    texture_depth: float = 0.8
    texture_frequency: float = 0.25                       # cycles per voxel
    background_sigma: float = 2.0
    background_amplitude: float = 0.5
    noise_std: float = 0.3
    pairing: str = "ratio"                                # or "xor"

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "radius_range", tuple(self.radius_range))
        object.__setattr__(self, "depth_radius_range", tuple(self.depth_radius_range))
        if self.pairing not in ("ratio", "xor"):
            raise ValueError(f"pairing must be 'ratio' or 'xor', got {self.pairing!r}")
        if not 2 <= self.num_classes <= 4:
            raise ValueError("the generator defines 2 to 4 classes")
        if len(self.dims) != 3 or min(self.dims) < 3:
            raise ValueError(f"dims must be three extents >= 3, got {self.dims}")
        for lo, hi in (self.radius_range, self.depth_radius_range):
            if not 0 < lo <= hi < 0.5:
                raise ValueError("radius fractions must satisfy 0 < lo <= hi < 0.5")
        if any(2 * r > n - 1 for r, n in zip(self.radius_bounds()[1], self.dims)):
            raise ValueError(f"a lesion of the largest radius cannot fit in {self.dims}")

    def radius_bounds(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Per-axis (D, H, W) radius limits in voxels, never below one voxel."""
        fr = (self.depth_radius_range, self.radius_range, self.radius_range)
        lo = tuple(max(1.0, f[0] * n) for f, n in zip(fr, self.dims))
        hi = tuple(max(1.0, f[1] * n) for f, n in zip(fr, self.dims))
        return lo, hi


@dataclass(frozen=True)
class LesionSpec:
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity_a: float
    intensity_b: float
    texture_frequency: float
    texture_phase: float
    rule: int  # class id whose signature produced the intensities

    @property
    def textured(self) -> bool:
        return self.texture_frequency > 0


@dataclass
class SyntheticSample:
    volume_a: np.ndarray  # (1, D, H, W)
    volume_b: np.ndarray
    label: int
    box: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]  # inclusive (lo, hi) per axis
    seed: int
    lesion: LesionSpec


def _class_rule(label: int, rng: np.random.Generator, pairing: str = "ratio") -> tuple[bool, float, float]:
    if label == 0:
        return False, 1.0, 1.0
    if label == 1:
        return False, -1.0, -1.0
    sign_a = 1.0
    if pairing == "xor":
        sign_a = 1.0 if rng.random() < 0.5 else -1.0
    return True, sign_a, sign_a if label == 2 else -sign_a


def oracle_label(lesion: LesionSpec) -> int:
    """Recover the class from planted parameters alone."""
    same = np.sign(lesion.intensity_a) == np.sign(lesion.intensity_b)
    if not lesion.textured:
        return 0 if lesion.intensity_a > 0 else 1
    return 2 if same else 3


def lesion_mask(dims, lesion: LesionSpec) -> np.ndarray:
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, lesion.center, lesion.radii))
    return r2 <= 1.0


def _zscore(v: np.ndarray) -> np.ndarray:
    std = v.std()
    return (v - v.mean()) / (std if std > 0 else 1.0)


def generate_sample(rng: np.random.Generator, spec: DatasetSpec, label: int, seed: int = -1,
                    normalize: bool = True) -> SyntheticSample:
    if not 0 <= label < spec.num_classes:
        raise ValueError(f"label {label} outside [0, {spec.num_classes})")
    dims = spec.dims
    lo, hi = spec.radius_bounds()
    radii = tuple(rng.uniform(a, b) for a, b in zip(lo, hi))
    center = tuple(rng.uniform(r, n - 1 - r) for r, n in zip(radii, dims))
    textured, sign_a, sign_b = _class_rule(label, rng, spec.pairing)
    j = spec.intensity_jitter
    lesion = LesionSpec(
        center=center, radii=radii,
        intensity_a=sign_a * spec.contrast * rng.uniform(1 - j, 1 + j),
        intensity_b=sign_b * spec.contrast * rng.uniform(1 - j, 1 + j),
        texture_frequency=spec.texture_frequency if textured else 0.0,
        texture_phase=rng.uniform(0, 2 * np.pi),
        rule=label,
    )
    mask = lesion_mask(dims, lesion)
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    profile = np.ones(dims)
    if lesion.textured:
        profile += spec.texture_depth * np.sin(2 * np.pi * lesion.texture_frequency * (grids[1] + grids[2])
                                               + lesion.texture_phase)
    anatomy = rng.normal(size=dims)
    if spec.background_sigma > 0:
        anatomy = gaussian_filter(anatomy, spec.background_sigma, mode="reflect")
    std = anatomy.std()
    anatomy = spec.background_amplitude * (anatomy / std if std > 0 else anatomy)
    vols = []
    for contrast_sign, intensity in ((1.0, lesion.intensity_a), (-0.7, lesion.intensity_b)):
        v = contrast_sign * anatomy + spec.noise_std * rng.normal(size=dims)
        v = v + intensity * profile * mask
        vols.append((_zscore(v) if normalize else v).astype(np.float32)[None])
    idx = np.nonzero(mask)
    box = tuple((int(i.min()), int(i.max())) for i in idx)
    return SyntheticSample(vols[0], vols[1], label, box, seed, lesion)


# ------------------------------------------------------------------ datasets

@dataclass
class Dataset:
    samples: list[SyntheticSample]
    spec: DatasetSpec = field(default_factory=DatasetSpec)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i) -> SyntheticSample:
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def arrays(self, idx=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = range(len(self.samples)) if idx is None else idx
        a = np.stack([self.samples[i].volume_a for i in idx])
        b = np.stack([self.samples[i].volume_b for i in idx])
        y = np.array([self.samples[i].label for i in idx], dtype=np.int64)
        return a, b, y


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def split_counts(n: int, num_classes: int, split=(4, 1)) -> tuple[int, int]:
    """Per-class (train, test) counts for a class-balanced split."""
    if n < num_classes or n % num_classes:
        raise ValueError(f"n={n} cannot be balanced over {num_classes} classes")
    per = n // num_classes
    a, b = split
    train = per * a // (a + b)
    if per * a % (a + b) or train == 0 or train == per:
        raise ValueError(f"{per} samples per class cannot be split {a}:{b}")
    return train, per - train


def generate_dataset(seed: int, n: int, split=(4, 1), spec: DatasetSpec | None = None) -> tuple[Dataset, Dataset]:
    spec = spec or DatasetSpec()
    n_train, n_test = split_counts(n, spec.num_classes, split)
    plan = []
    for label in range(spec.num_classes):
        plan += [(label, "train")] * n_train + [(label, "test")] * n_test
    order = np.random.default_rng(seed).permutation(len(plan))
    train, test = [], []
    for index, k in enumerate(order):
        label, part = plan[k]
        s = _sample_seed(seed, index)
        sample = generate_sample(np.random.default_rng(s), spec, label, s)
        (train if part == "train" else test).append(sample)
    return Dataset(train, spec), Dataset(test, spec)


def regenerate(manifest: dict) -> tuple[Dataset, Dataset]:
    """Rebuild both splits from the per-sample seeds in a manifest."""
    spec = DatasetSpec(**manifest["spec"])
    parts = {"train": [], "test": []}
    for entry in manifest["samples"]:
        s = entry["seed"]
        parts[entry["split"]].append(generate_sample(np.random.default_rng(s), spec, entry["label"], s))
    return Dataset(parts["train"], spec), Dataset(parts["test"], spec)


def save_dataset(directory, train: Dataset, test: Dataset, seed: int | None = None) -> Path:
    d = Path(directory)
    (d / "volumes").mkdir(parents=True, exist_ok=True)
    entries = []
    for part, ds in (("train", train), ("test", test)):
        for i, s in enumerate(ds.samples):
            sid = f"{part}_{i:05d}"
            vtf.save(d / "volumes" / f"{sid}_a.vtf", s.volume_a)
            vtf.save(d / "volumes" / f"{sid}_b.vtf", s.volume_b)
            entries.append({
                "id": sid, "split": part, "label": int(s.label), "seed": int(s.seed),
                "box": [list(b) for b in s.box],
                "lesion": asdict(s.lesion),
                "files": [f"volumes/{sid}_a.vtf", f"volumes/{sid}_b.vtf"],
            })
    manifest = {"format": "mmnet-dataset/1", "seed": seed, "spec": asdict(train.spec),
                "n": len(entries), "samples": entries}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(directory) -> tuple[Dataset, Dataset]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    spec = DatasetSpec(**manifest["spec"])
    parts = {"train": [], "test": []}
    for e in manifest["samples"]:
        lesion = e["lesion"]
        lesion = LesionSpec(**{**lesion, "center": tuple(lesion["center"]), "radii": tuple(lesion["radii"])})
        parts[e["split"]].append(SyntheticSample(
            vtf.load(d / e["files"][0]), vtf.load(d / e["files"][1]), e["label"],
            tuple(tuple(b) for b in e["box"]), e["seed"], lesion))
    return Dataset(parts["train"], spec), Dataset(parts["test"], spec)
