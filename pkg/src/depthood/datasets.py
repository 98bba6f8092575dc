"""Procedural scenes, image-directory ingestion and evaluation-set assembly.

In-distribution scenes are a vertical background gradient with a handful of
rectangles and circles.  Depth is carried by two monocular cues: apparent size
shrinks with distance and colours fade towards a haze colour.  The OOD variants
keep the rendering machinery but change exactly one factor (colours, texture
statistics or shape family).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage
from scipy.ndimage import gaussian_filter

from .errors import InputError, UsageError

ID_PALETTE = np.array([
    [0.85, 0.10, 0.10],  # red
    [0.95, 0.45, 0.05],  # orange
    [0.90, 0.65, 0.10],  # amber
    [0.95, 0.90, 0.15],  # yellow
    [0.60, 0.85, 0.10],  # lime
    [0.10, 0.70, 0.15],  # green
    [0.55, 0.05, 0.05],  # maroon
    [0.55, 0.55, 0.05],  # olive
], dtype=np.float64)

BG_TOP = np.array([0.80, 0.76, 0.62])
BG_BOTTOM = np.array([0.45, 0.38, 0.28])
HAZE = np.array([0.72, 0.70, 0.62])
MAX_HAZE = 0.6
# the background wall sits just short of d_max: a sigmoid * d_max head can only
# reach d_max itself with infinite logits, which stalls training
BACKGROUND_DEPTH = 0.95

OOD_VARIANTS = ("palette-shift", "texture-noise", "shape-family")

# seed offsets keeping train / test / OOD scenes disjoint
TRAIN_SEED = 0
TEST_SEED = 1_000_000
OOD_SEED = 2_000_000


@dataclass(frozen=True)
class SceneParams:
    height: int = 64
    width: int = 64
    k_min: int = 2
    k_max: int = 5
    palette: str = "id"
    d_max: float = 10.0
    background: str = "gradient"

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise InputError(f"bad shape-count range [{self.k_min}, {self.k_max}]")
        if self.height <= 0 or self.width <= 0:
            raise InputError("resolution must be positive")
        if self.palette not in ("id", "complement"):
            raise InputError(f"unknown palette {self.palette!r}")


@dataclass
class Shape:
    kind: str  # rect | circle | triangle | ellipse
    cy: float
    cx: float
    size: float
    aspect: float
    angle: float
    depth: float
    color_index: int


@dataclass
class Scene:
    """Rendered image, depth and the shape list it came from."""

    image: np.ndarray
    depth: np.ndarray
    shapes: list = field(default_factory=list)
    top: np.ndarray = None
    bottom: np.ndarray = None


def _colors(p: SceneParams):
    pal, top, bottom, haze = ID_PALETTE, BG_TOP, BG_BOTTOM, HAZE
    if p.palette == "complement":
        pal, top, bottom, haze = 1 - pal, 1 - top, 1 - bottom, 1 - haze
    return pal, top, bottom, haze


def _sample_shapes(rng: np.random.Generator, p: SceneParams, kinds) -> list:
    k = int(rng.integers(p.k_min, p.k_max + 1))
    shapes = []
    for _ in range(k):
        rel = rng.uniform(0.1, 0.9)
        shapes.append(Shape(
            kind=kinds[int(rng.integers(len(kinds)))],
            cy=rng.uniform(0, p.height),
            cx=rng.uniform(0, p.width),
            # apparent size ~ 1/sqrt(distance)
            size=rng.uniform(0.8, 1.2) * 0.06 * min(p.height, p.width) / np.sqrt(rel),
            aspect=rng.uniform(0.6, 1.6),
            angle=rng.uniform(0, np.pi),
            depth=rel * p.d_max,
            color_index=int(rng.integers(len(ID_PALETTE))),
        ))
    return shapes


def shape_mask(s: Shape, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    dy, dx = yy - s.cy, xx - s.cx
    hy, hx = s.size * s.aspect, s.size / s.aspect
    if s.kind == "rect":
        return (np.abs(dy) <= hy) & (np.abs(dx) <= hx)
    if s.kind == "circle":
        return dy ** 2 + dx ** 2 <= s.size ** 2
    c, sn = np.cos(s.angle), np.sin(s.angle)
    u, v = c * dx + sn * dy, -sn * dx + c * dy
    if s.kind == "ellipse":
        # elongated, rotated
        return (u / (1.6 * hx)) ** 2 + (v / (0.5 * hy)) ** 2 <= 1
    if s.kind == "triangle":
        r = 1.4 * s.size
        inside = np.ones((height, width), dtype=bool)
        for t in range(3):
            a = s.angle + 2 * np.pi * t / 3
            inside &= (np.cos(a) * dx + np.sin(a) * dy) <= 0.5 * r
        return inside
    raise UsageError(f"unknown shape kind {s.kind!r}")


def render(shapes, p: SceneParams, top, bottom, pal, haze) -> Scene:
    h, w = p.height, p.width
    t = ((np.arange(h) + 0.5) / h)[:, None, None]
    image = np.broadcast_to((1 - t) * top + t * bottom, (h, w, 3)).copy()
    depth = np.full((h, w, 1), BACKGROUND_DEPTH * p.d_max)
    # painter's order: far to near, later shapes overwrite
    for s in sorted(shapes, key=lambda s: -s.depth):
        m = shape_mask(s, h, w)
        a = MAX_HAZE * s.depth / p.d_max
        image[m] = (1 - a) * pal[s.color_index] + a * haze
        depth[m, 0] = s.depth
    return Scene(np.clip(image, 0, 1).astype(np.float32), depth.astype(np.float32),
                 list(shapes), top, bottom)


def _background(rng, p):
    jitter = rng.uniform(-0.06, 0.06, size=(2, 3))
    return BG_TOP + jitter[0], BG_BOTTOM + jitter[1]


def id_scene(seed: int, p: SceneParams = SceneParams()) -> Scene:
    rng = np.random.default_rng(seed)
    top, bottom = _background(rng, p)
    shapes = _sample_shapes(rng, p, ("rect", "circle"))
    pal, _, _, haze = _colors(p)
    if p.palette == "complement":
        top, bottom = 1 - top, 1 - bottom
    return render(shapes, p, top, bottom, pal, haze)


def generate_id_scene(seed: int, p: SceneParams = SceneParams()):
    """(image HxWx3 in [0,1], depth HxWx1 in (0, d_max]) for ``seed``."""
    s = id_scene(seed, p)
    return s.image, s.depth


def ood_scene(seed: int, variant: str, p: SceneParams = SceneParams()) -> Scene:
    """OOD scene; ``depth`` is None where no geometry is defined."""
    if variant == "palette-shift":
        return id_scene(seed, replace(p, palette="complement"))
    if variant == "shape-family":
        rng = np.random.default_rng(seed)
        top, bottom = _background(rng, p)
        shapes = _sample_shapes(rng, p, ("triangle", "ellipse"))
        pal, _, _, haze = _colors(p)
        return render(shapes, p, top, bottom, pal, haze)
    if variant == "texture-noise":
        rng = np.random.default_rng(seed)
        img = np.zeros((p.height, p.width, 3))
        for sigma, weight in ((0.7, 0.5), (2.0, 0.3), (5.0, 0.2)):
            noise = rng.standard_normal((p.height, p.width, 3))
            f = gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
            img += weight * f / (f.std() + 1e-12)
        img = 0.5 + 0.18 * img + rng.uniform(-0.1, 0.1, size=3)
        return Scene(np.clip(img, 0, 1).astype(np.float32), None)
    raise UsageError(f"unknown OOD variant {variant!r}; expected one of {OOD_VARIANTS}")


def generate_ood_scene(seed: int, variant: str, p: SceneParams = SceneParams()) -> np.ndarray:
    return ood_scene(seed, variant, p).image


def id_dataset(n: int, p: SceneParams = SceneParams(), base_seed: int = TRAIN_SEED):
    """Stacked (images Nx H x W x3, depths NxHxWx1)."""
    if n < 1:
        raise InputError("dataset size must be >= 1")
    pairs = [generate_id_scene(base_seed + i, p) for i in range(n)]
    return np.stack([a for a, _ in pairs]), np.stack([d for _, d in pairs])


def ood_dataset(n: int, variant: str, p: SceneParams = SceneParams(), base_seed: int = OOD_SEED):
    """(images, depths or None) for one OOD variant."""
    offset = base_seed + 100_000 * (OOD_VARIANTS.index(variant) + 1) if variant in OOD_VARIANTS else base_seed
    scenes = [ood_scene(offset + i, variant, p) for i in range(n)]
    images = np.stack([s.image for s in scenes])
    if scenes[0].depth is None:
        return images, None
    return images, np.stack([s.depth for s in scenes])


# -- directory ingestion -----------------------------------------------------

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff"}


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an HxWxC float array (no antialias)."""
    if img.shape[:2] == (height, width):
        return img.astype(np.float32)
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False, antialias=False)
    return out[0].permute(1, 2, 0).numpy()


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(height, width), mode="nearest")
    return out[0].permute(1, 2, 0).numpy()


def _files(path: Path):
    if not path.is_dir():
        raise FileNotFoundError(f"not a directory: {path}")
    files = sorted(f for f in path.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise InputError(f"no image files in {path}")
    return files


def load_image_dir(path, resolution) -> list:
    """Read RGB images in filename order, resized to ``resolution`` and scaled to [0,1]."""
    height, width = resolution
    images = []
    for f in _files(Path(path)):
        try:
            with PILImage.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except Exception as e:
            raise OSError(f"cannot read image {f}: {e}") from e
        images.append(np.clip(resize_bilinear(arr, height, width), 0, 1))
    return images


def load_depth_dir(path, resolution, d_max: float, stems=None) -> list:
    """16-bit depth PNGs (value/65535 * d_max); 0 marks missing depth."""
    height, width = resolution
    files = _files(Path(path))
    if stems is not None:
        by_stem = {f.stem: f for f in files}
        missing = [s for s in stems if s not in by_stem]
        if missing:
            raise InputError(f"no depth file for {missing[0]!r} in {path}")
        files = [by_stem[s] for s in stems]
    out = []
    for f in files:
        try:
            with PILImage.open(f) as im:
                arr = np.asarray(im, dtype=np.float64)
        except Exception as e:
            raise OSError(f"cannot read depth map {f}: {e}") from e
        if arr.ndim == 3:
            arr = arr[..., 0]
        d = (arr / 65535.0 * d_max).astype(np.float32)[..., None]
        out.append(resize_nearest(d, height, width))
    return out


def load_dataset_dir(root, resolution, d_max: float):
    """``<root>/images`` plus optional ``<root>/depth`` matched by stem."""
    root = Path(root)
    images = load_image_dir(root / "images", resolution)
    depth_dir = root / "depth"
    depths = None
    if depth_dir.is_dir():
        stems = [f.stem for f in _files(root / "images")]
        depths = load_depth_dir(depth_dir, resolution, d_max, stems)
    return np.stack(images), (np.stack(depths) if depths is not None else None)


# -- evaluation sets -----------------------------------------------------------

@dataclass
class EvalSet:
    images: np.ndarray  # N x H x W x 3
    labels: np.ndarray  # 1 = in-distribution, 0 = OOD
    ids: list
    ood_index: np.ndarray = None  # positions of the kept OOD samples in the input list

    @property
    def n_id(self) -> int:
        return int(self.labels.sum())

    @property
    def n_ood(self) -> int:
        return int(len(self.labels) - self.labels.sum())


def make_eval_set(id_images, ood_images, cap: int = 300, seed: int = 0,
                  id_prefix="id", ood_prefix="ood") -> EvalSet:
    """All ID images plus at most ``cap`` OOD images sampled without replacement."""
    if len(id_images) == 0 or len(ood_images) == 0:
        raise InputError("both ID and OOD image lists must be non-empty")
    id_images = np.asarray(id_images, dtype=np.float32)
    ood_images = np.asarray(ood_images, dtype=np.float32)
    if id_images.shape[1:] != ood_images.shape[1:]:
        raise InputError(f"resolution mismatch: {id_images.shape[1:]} vs {ood_images.shape[1:]}")
    n_ood = min(len(ood_images), cap)
    if n_ood < len(ood_images):
        keep = np.sort(np.random.default_rng(seed).choice(len(ood_images), n_ood, replace=False))
    else:
        keep = np.arange(len(ood_images))
    images = np.concatenate([id_images, ood_images[keep]])
    labels = np.concatenate([np.ones(len(id_images), dtype=np.int64), np.zeros(n_ood, dtype=np.int64)])
    ids = [f"{id_prefix}-{i:05d}" for i in range(len(id_images))] + [f"{ood_prefix}-{i:05d}" for i in keep]
    return EvalSet(images, labels, ids, keep)
