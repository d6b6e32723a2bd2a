"""Images on disk, paired datasets and procedurally generated training pairs."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .exceptions import DatasetError, FormatError
from .tensor import Tensor

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class ImagePair:
    vis: Tensor  # 3 x H x W
    ir: Tensor  # 1 x H x W
    id: str

    def batch(self) -> tuple[Tensor, Tensor]:
        """Both images as 1 x C x H x W tensors."""
        return (Tensor(self.vis.data[None]), Tensor(self.ir.data[None]))


@dataclass
class DatasetManifest:
    vis_root: Path
    ir_root: Path
    ids: list[str] = field(default_factory=list)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.ids)

    def vis_path(self, image_id: str) -> Path:
        return self.vis_root / f"{image_id}.png"

    def ir_path(self, image_id: str) -> Path:
        return self.ir_root / f"{image_id}.png"


# ---------------------------------------------------------------------------
# PNG codec (8-bit grayscale / RGB only)
# ---------------------------------------------------------------------------

def _decode(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: format {im.format} is not PNG")
        info_mode = im.mode
        bits = im.info.get("bits") or (16 if info_mode.startswith("I;16") or info_mode == "I" else 8)
        if info_mode not in ("L", "RGB"):
            raise FormatError(f"{path}: unsupported color type/bit depth (mode {info_mode!r}); "
                              "only 8-bit grayscale and 8-bit RGB are accepted")
        if bits != 8:
            raise FormatError(f"{path}: unsupported bit depth {bits}")
        arr = np.asarray(im, dtype=np.uint8)
    return arr


def load_png(path, as_gray: bool = False) -> Tensor:
    """Decode to a C x H x W float32 tensor scaled by 1/255.

    Grayscale gives one channel, RGB three. ``as_gray`` converts RGB to luma
    (0.299 R + 0.587 G + 0.114 B), which is how RGB-encoded infrared targets
    are read.
    """
    arr = _decode(Path(path))
    if arr.ndim == 2:
        out = arr[None].astype(np.float32) / np.float32(255)
    else:
        out = arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255)
        if as_gray:
            out = np.tensordot(LUMA, out.astype(np.float64), axes=(0, 0))[None].astype(np.float32)
    return Tensor(out)


def to_uint8(t) -> np.ndarray:
    a = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(t, path) -> None:
    """Write a 1 x H x W or 3 x H x W image in [0, 1] as an 8-bit PNG."""
    a = to_uint8(t)
    if a.ndim == 4 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise FormatError(f"save_png expects 1xHxW or 3xHxW, got shape {a.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray(a[0], mode="L") if a.shape[0] == 1 else Image.fromarray(a.transpose(1, 2, 0), mode="RGB")
    img.save(path, format="PNG")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def resize_image(img: Tensor, size: int) -> Tensor:
    """Bilinear resize of a C x H x W tensor to size x size, clamped to [0, 1]."""
    out = T.resize_bilinear(Tensor(img.data[None]), size, size).data[0]
    return Tensor(np.clip(out, 0.0, 1.0))


def preprocess(pair: ImagePair, target: int = 256) -> ImagePair:
    return ImagePair(resize_image(pair.vis, target), resize_image(pair.ir, target), pair.id)


def scan_manifest(root, split: str = "train") -> DatasetManifest:
    """Pair ``root/vis/<id>.png`` with ``root/ir/<id>.png`` by basename."""
    root = Path(root)
    vis_root, ir_root = root / "vis", root / "ir"
    for d in (vis_root, ir_root):
        if not d.is_dir():
            raise DatasetError(f"missing directory {d}")
    vis_ids = {p.stem for p in vis_root.glob("*.png")}
    ir_ids = {p.stem for p in ir_root.glob("*.png")}
    shared = sorted(vis_ids & ir_ids, key=lambda s: s.encode("utf-8"))
    if not shared:
        raise DatasetError(f"no paired images under {root}: {len(vis_ids)} in vis/, {len(ir_ids)} in ir/, 0 shared")
    return DatasetManifest(vis_root, ir_root, shared, split)


def load_pair(manifest: DatasetManifest, image_id: str, resolution: int | None = None) -> ImagePair:
    vis = load_png(manifest.vis_path(image_id))
    if vis.shape[0] == 1:
        vis = Tensor(np.repeat(vis.data, 3, axis=0))
    ir = load_png(manifest.ir_path(image_id), as_gray=True)
    pair = ImagePair(vis, ir, image_id)
    return preprocess(pair, resolution) if resolution else pair


def load_pairs(manifest: DatasetManifest, resolution: int | None = None) -> list[ImagePair]:
    return [load_pair(manifest, i, resolution) for i in manifest.ids]


def write_pairs(pairs: list[ImagePair], root) -> None:
    root = Path(root)
    for pair in pairs:
        save_png(pair.vis, root / "vis" / f"{pair.id}.png")
        save_png(pair.ir, root / "ir" / f"{pair.id}.png")


# ---------------------------------------------------------------------------
# synthetic pairs
# ---------------------------------------------------------------------------

def _soft_disk(yy, xx, cy, cx, r, softness):
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return 1.0 / (1.0 + np.exp((d - r) / softness))


def make_synthetic_pairs(n: int, size: int, seed: int = 0) -> list[ImagePair]:
    """Deterministic visible/infrared pairs for desk-scale experiments.

    Each visible image is a colored linear gradient with a few soft-edged
    colored disks. The infrared target is a function of the visible image:
    a damped copy of its luma plus a "heat" term from disks whose red channel
    dominates, so warm objects glow regardless of their brightness.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    pairs = []
    for i in range(n):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = 0.5 + 0.5 * ((xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle)) * 1.4
        c0, c1 = rng.uniform(0.1, 0.6, 3), rng.uniform(0.3, 0.9, 3)
        vis = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
        heat = np.zeros((size, size))
        for _ in range(rng.integers(2, 5)):
            cy, cx = rng.uniform(0.15, 0.85, 2)
            r = rng.uniform(0.08, 0.2)
            mask = _soft_disk(yy, xx, cy, cx, r, 0.02)
            warm = rng.random() < 0.5
            color = np.array([rng.uniform(0.7, 1.0), rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3)]) if warm \
                else rng.uniform(0.0, 0.6, 3)
            vis = vis * (1 - mask) + color[:, None, None] * mask
            if warm:
                heat = np.maximum(heat, mask)
        vis = np.clip(vis, 0.0, 1.0)
        luma = np.tensordot(LUMA, vis, axes=(0, 0))
        ir = np.clip(0.15 + 0.7 * luma + 0.2 * heat, 0.0, 1.0)
        pairs.append(ImagePair(Tensor(vis.astype(np.float32)), Tensor(ir[None].astype(np.float32)), f"synth_{i:04d}"))
    return pairs
