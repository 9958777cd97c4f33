import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.engine.avatar import composite
from app.engine.images import ImageTensor
from app.engine.params import ParamSpec, ParamVector, SlotKind, polygon_spec
from app.engine.polygon import rasterize_polygon
from app.exceptions import ContractError

logger = logging.getLogger(__name__)

# Polygon search grid
RADIUS_STEP = 0.5
ROTATION_STEP = 0.5

# Coupled slots are searched jointly; order is the sweep order
SPRITE_BLOCKS: List[Tuple[str, ...]] = [
    ("face_shape", "skin_tone"),
    ("hair_style", "hair_color"),
    ("eye_shape", "eye_color"),
    ("glasses",),
    ("facial_hair",),
    ("nose",),
    ("mouth",),
]
SPRITE_SWEEPS = 2


@dataclass
class OracleResult:
    params: ParamVector
    # pixel MSE on the [0, 1] convention
    residual: float


@lru_cache(maxsize=4)
def polygon_bank(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Every grid polygon rendered once.
    Returns (physical params N x 3, flattened renders N x H*W).
    """
    radii = np.arange(15.0, 30.0 + 1e-9, RADIUS_STEP)
    rotations = np.arange(-10.0, 10.0 + 1e-9, ROTATION_STEP)
    grid = list(itertools.product((3, 4, 5, 6), radii, rotations))
    logger.info(f"Rendering polygon oracle bank: {len(grid)} shapes at {resolution}px")

    physical = np.asarray(grid, dtype=np.float64)
    renders = np.empty((len(grid), resolution * resolution), dtype=np.float32)
    for i, (k, r, rot) in enumerate(grid):
        renders[i] = rasterize_polygon(int(k), float(r), float(rot), resolution).reshape(-1)
    physical.setflags(write=False)
    renders.setflags(write=False)
    return physical, renders


def polygon_nearest(images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest grid polygon for a batch of N x 1 x H x W images.
    Returns (bank indices, residuals on the [0, 1] convention).
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or images.shape[1] != 1:
        raise ContractError(f"Polygon oracle expects N x 1 x H x W images, got {images.shape}")
    n, _, resolution, _ = images.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)

    _, renders = polygon_bank(resolution)
    bank = renders.astype(np.float64)
    bank_sq = np.einsum("ij,ij->i", bank, bank)
    flat = images.reshape(n, -1).astype(np.float64)

    indices = np.empty(n, dtype=np.int64)
    residuals = np.empty(n, dtype=np.float64)
    for lo in range(0, n, 256):
        chunk = flat[lo:lo + 256]
        img_sq = np.einsum("ij,ij->i", chunk, chunk)
        dist = np.maximum(img_sq[:, None] + bank_sq[None, :] - 2.0 * (chunk @ bank.T), 0.0)
        best = np.argmin(dist, axis=1)
        indices[lo:lo + 256] = best
        residuals[lo:lo + 256] = dist[np.arange(len(chunk)), best]
    return indices, residuals / (4.0 * flat.shape[1])


def _invert_polygon(img: ImageTensor, spec: ParamSpec) -> OracleResult:
    indices, residuals = polygon_nearest(img.data[None])
    physical, _ = polygon_bank(img.resolution)
    k, r, rot = physical[indices[0]]
    params = spec.encode({"vertices": int(k), "radius": float(r), "rotation": float(rot)})
    return OracleResult(params=params, residual=float(residuals[0]))


def _invert_sprite(img: ImageTensor, spec: ParamSpec, start: Optional[Dict[str, int]] = None) -> OracleResult:
    if img.channels != 3:
        raise ContractError("Sprite oracle expects RGB images")
    target = (img.data.astype(np.float64) + 1.0) / 2.0
    resolution = img.resolution
    slots = {slot.name: slot for slot in spec.slots}
    blocks = [tuple(name for name in block if name in slots) for block in SPRITE_BLOCKS]
    blocks = [block for block in blocks if block]
    covered = {name for block in blocks for name in block}
    if covered != set(slots):
        raise ContractError(f"Sprite oracle cannot search slots {sorted(set(slots) - covered)}")

    choice = dict(start) if start else {name: 0 for name in slots}

    def residual_of(candidate: Dict[str, int]) -> float:
        labels = {name: slots[name].labels[index] for name, index in candidate.items()}
        canvas, _ = composite(labels, resolution)
        return float(np.mean((canvas - target) ** 2))

    best = residual_of(choice)
    for _ in range(SPRITE_SWEEPS):
        for block in blocks:
            ranges = [range(slots[name].width) for name in block]
            for combo in itertools.product(*ranges):
                candidate = dict(choice)
                candidate.update(zip(block, combo))
                if candidate == choice:
                    continue
                score = residual_of(candidate)
                if score < best:
                    best, choice = score, candidate
        if best == 0.0:
            break

    return OracleResult(params=spec.encode(choice), residual=best)


def oracle_invert(img: ImageTensor, spec: Optional[ParamSpec] = None) -> OracleResult:
    """
    Parameter vector whose true engine render is closest in pixel-MSE to img.
    Polygons use the full grid; sprites use block coordinate search.
    """
    spec = spec or polygon_spec()
    if spec.name == "polygon":
        return _invert_polygon(img, spec)
    if all(slot.kind == SlotKind.CATEGORICAL for slot in spec.slots):
        return _invert_sprite(img, spec)
    raise ContractError(f"No oracle for spec '{spec.name}'")
