import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.engine.images import DomainTag, ImageTensor
from app.engine.params import ParamSpec, ParamVector, sprite_spec
from app.exceptions import ContractError

Colour = Tuple[float, float, float]

# Minimum pixel-MSE (in [-1, 1]) between renders differing in one slot, at 32 px
SEPARATION_THRESHOLD = 0.005

BACKGROUND: Colour = (0.55, 0.78, 0.95)
INK: Colour = (0.0, 0.0, 0.0)
SCLERA: Colour = (1.0, 1.0, 1.0)
LIPS: Colour = (1.0, 0.0, 0.0)

SKIN_TONES: Dict[str, Colour] = {
    "porcelain": (0.96, 0.80, 0.69),
    "light": (0.87, 0.68, 0.53),
    "tan": (0.77, 0.57, 0.42),
    "olive": (0.66, 0.46, 0.32),
    "brown": (0.54, 0.36, 0.24),
    "dark": (0.40, 0.26, 0.16),
}
HAIR_COLOURS: Dict[str, Colour] = {
    "black": (0.05, 0.05, 0.05),
    "blond": (1.0, 0.92, 0.25),
    "red": (0.85, 0.15, 0.10),
    "blue": (0.15, 0.30, 0.85),
    "green": (0.15, 0.65, 0.25),
    "purple": (0.70, 0.15, 0.70),
}
EYE_COLOURS: Dict[str, Colour] = {
    "brown": (0.20, 0.10, 0.05),
    "blue": (0.10, 0.35, 1.0),
    "green": (0.05, 0.80, 0.20),
    "amber": (0.95, 0.45, 0.05),
}

FACE_CENTRE = (0.0, 0.1)
# (semi-axis u, semi-axis v, superellipse exponent)
FACE_SHAPES: Dict[str, Tuple[float, float, float]] = {
    "round": (0.70, 0.76, 2.0),
    "oval": (0.58, 0.88, 2.0),
    "wide": (0.84, 0.70, 2.0),
    "square": (0.68, 0.76, 5.0),
}
EYE_CENTRES = ((-0.34, -0.1), (0.34, -0.1))
IRIS_RADIUS = 0.11

# Paint order, back to front
LAYER_ORDER = ["hair", "face", "facial_hair", "sclera", "iris", "nose", "mouth", "glasses"]


@dataclass(frozen=True)
class Appearance:
    """Per-identity restyling of an avatar: hue jitter (degrees), face aspect, sprite offset."""

    hue: float = 0.0
    aspect: float = 1.0
    offset: Tuple[float, float] = (0.0, 0.0)


NEUTRAL = Appearance()


@lru_cache(maxsize=16)
def _grid(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution * 2.0 - 1.0
    v, u = np.meshgrid(coords, coords, indexing="ij")
    return u, v


def _ellipse(u, v, cu, cv, a, b, n=2.0):
    return np.abs((u - cu) / a) ** n + np.abs((v - cv) / b) ** n <= 1.0


def _rect(u, v, u0, u1, v0, v1):
    return (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)


def _hair_mask(style: str, u, v) -> np.ndarray:
    crop = _ellipse(u, v, 0.0, -0.1, 0.9, 0.8) & (v <= 0.0)
    if style == "crop":
        return crop
    if style == "tall":
        return _ellipse(u, v, 0.0, -0.2, 0.8, 0.85) & (v <= 0.0)
    if style == "long":
        sides = _rect(np.abs(u), v, 0.55, 0.98, -0.3, 0.9)
        return crop | sides
    if style == "side":
        return crop | _ellipse(u, v, -0.5, -0.95, 0.5, 0.22)
    if style == "mohawk":
        return _rect(u, v, -0.2, 0.2, -1.0, -0.1)
    if style == "spiky":
        mask = _ellipse(u, v, 0.0, -0.1, 0.88, 0.62) & (v <= 0.0)
        for cu in (-0.5, 0.0, 0.5):
            depth = np.clip((v + 1.0) / 0.55, 0.0, None)
            mask |= (v >= -1.0) & (v <= -0.45) & (np.abs(u - cu) <= 0.28 * depth)
        return mask
    raise ContractError(f"Unknown hair style '{style}'")


def _face_mask(shape: str, u, v, aspect: float) -> np.ndarray:
    a, b, n = FACE_SHAPES[shape]
    return _ellipse(u, v, FACE_CENTRE[0], FACE_CENTRE[1], a, b * aspect, n)


def _sclera_mask(shape: str, u, v) -> np.ndarray:
    mask = np.zeros_like(u, dtype=bool)
    for cu, cv in EYE_CENTRES:
        if shape == "round":
            mask |= _ellipse(u, v, cu, cv, 0.17, 0.17)
        elif shape == "wide":
            mask |= _ellipse(u, v, cu, cv, 0.22, 0.12)
        elif shape == "tall":
            mask |= _ellipse(u, v, cu, cv, 0.12, 0.22)
        elif shape == "droopy":
            mask |= _ellipse(u, v, cu, cv, 0.21, 0.17) & (v >= cv - 0.02)
        else:
            raise ContractError(f"Unknown eye shape '{shape}'")
    return mask


def _iris_mask(u, v) -> np.ndarray:
    mask = np.zeros_like(u, dtype=bool)
    for cu, cv in EYE_CENTRES:
        mask |= _ellipse(u, v, cu, cv, IRIS_RADIUS, IRIS_RADIUS)
    return mask


def _nose_mask(style: str, u, v) -> np.ndarray:
    if style == "tall":
        return _rect(u, v, -0.07, 0.07, 0.0, 0.40)
    if style == "wide":
        return _rect(u, v, -0.22, 0.22, 0.26, 0.36)
    if style == "nostrils":
        return _ellipse(u, v, -0.13, 0.22, 0.08, 0.08) | _ellipse(u, v, 0.13, 0.22, 0.08, 0.08)
    raise ContractError(f"Unknown nose '{style}'")


def _mouth_mask(style: str, u, v) -> np.ndarray:
    if style == "wide":
        return _rect(u, v, -0.32, 0.32, 0.54, 0.68)
    if style == "open":
        return _ellipse(u, v, 0.0, 0.62, 0.15, 0.15)
    if style == "smile":
        outer = _ellipse(u, v, 0.0, 0.50, 0.32, 0.20) & (v >= 0.50)
        return outer & ~_ellipse(u, v, 0.0, 0.50, 0.22, 0.10)
    if style == "frown":
        outer = _ellipse(u, v, 0.0, 0.74, 0.32, 0.20) & (v <= 0.74)
        return outer & ~_ellipse(u, v, 0.0, 0.74, 0.20, 0.09)
    raise ContractError(f"Unknown mouth '{style}'")


def _glasses_mask(style: str, u, v) -> np.ndarray:
    mask = np.zeros_like(u, dtype=bool)
    if style == "none":
        return mask
    for cu, cv in EYE_CENTRES:
        if style == "round":
            dist = np.hypot(u - cu, v - cv)
            mask |= (dist >= 0.24) & (dist <= 0.31)
        elif style == "square":
            dist = np.maximum(np.abs(u - cu), np.abs(v - cv))
            mask |= (dist >= 0.23) & (dist <= 0.28)
        else:
            raise ContractError(f"Unknown glasses '{style}'")
    return mask


def _mustache_mask(u, v) -> np.ndarray:
    return _ellipse(u, v, 0.0, 0.44, 0.32, 0.09)


@lru_cache(maxsize=4096)
def _part_mask(part: str, label: str, resolution: int, du: float, dv: float, aspect: float) -> np.ndarray:
    u, v = _grid(resolution)
    u, v = u - du, v - dv
    if part == "hair":
        mask = _hair_mask(label, u, v)
    elif part == "face":
        mask = _face_mask(label, u, v, aspect)
    elif part == "sclera":
        mask = _sclera_mask(label, u, v)
    elif part == "iris":
        mask = _iris_mask(u, v)
    elif part == "nose":
        mask = _nose_mask(label, u, v)
    elif part == "mouth":
        mask = _mouth_mask(label, u, v)
    elif part == "glasses":
        mask = _glasses_mask(label, u, v)
    elif part == "mustache":
        mask = _mustache_mask(u, v)
    elif part == "beard":
        mask = _ellipse(u, v, 0.0, 0.62, 0.44, 0.30) & (v >= 0.5)
    else:
        raise ContractError(f"Unknown part '{part}'")
    mask.setflags(write=False)
    return mask


def rotate_hue(colour: Colour, degrees: float) -> Colour:
    """Rotate an RGB colour about the grey axis"""
    if degrees == 0.0:
        return colour
    angle = math.radians(degrees)
    cos, sin = math.cos(angle), math.sin(angle)
    k = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])
    m = cos * np.eye(3) + (1.0 - cos) / 3.0 * np.ones((3, 3)) + sin / math.sqrt(3.0) * k
    rotated = np.clip(m @ np.asarray(colour, dtype=np.float64), 0.0, 1.0)
    return tuple(float(c) for c in rotated)


def avatar_layers(
    labels: Dict[str, str], resolution: int, appearance: Appearance = NEUTRAL
) -> List[Tuple[str, np.ndarray, Colour]]:
    """(layer name, coverage mask, colour) in paint order."""
    du, dv = appearance.offset
    key = (resolution, float(du), float(dv))

    def part(name: str, label: str = "", aspect: float = 1.0) -> np.ndarray:
        return _part_mask(name, label, *key, float(aspect))

    face = part("face", labels["face_shape"], appearance.aspect)
    sclera = part("sclera", labels["eye_shape"])

    facial_hair_style = labels.get("facial_hair", "none")
    if facial_hair_style == "none":
        facial_hair = np.zeros_like(face)
    elif facial_hair_style == "mustache":
        facial_hair = part("mustache") & face
    elif facial_hair_style == "beard":
        facial_hair = (part("beard") | part("mustache")) & face
    else:
        raise ContractError(f"Unknown facial hair '{facial_hair_style}'")

    skin = rotate_hue(SKIN_TONES[labels["skin_tone"]], appearance.hue)
    hair = rotate_hue(HAIR_COLOURS[labels["hair_color"]], appearance.hue)

    return [
        ("hair", part("hair", labels["hair_style"]), hair),
        ("face", face, skin),
        ("facial_hair", facial_hair, INK),
        ("sclera", sclera, SCLERA),
        ("iris", part("iris") & sclera, EYE_COLOURS[labels["eye_color"]]),
        ("nose", part("nose", labels["nose"]), INK),
        ("mouth", part("mouth", labels["mouth"]), LIPS),
        ("glasses", part("glasses", labels.get("glasses", "none")), INK),
    ]


def composite(
    labels: Dict[str, str], resolution: int, appearance: Appearance = NEUTRAL
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Paint the avatar. Returns the RGB canvas in [0, 1] (3 x H x W) and the
    visible region of every layer after occlusion by later layers.
    """
    layers = avatar_layers(labels, resolution, appearance)
    canvas = np.empty((3, resolution, resolution), dtype=np.float64)
    canvas[:] = np.asarray(BACKGROUND)[:, None, None]

    for _, mask, colour in layers:
        canvas[:, mask] = np.asarray(colour)[:, None]

    visible: Dict[str, np.ndarray] = {}
    covered = np.zeros((resolution, resolution), dtype=bool)
    for name, mask, _ in reversed(layers):
        visible[name] = mask & ~covered
        covered |= mask
    visible["background"] = ~covered
    return canvas, visible


def _labels_for(p: ParamVector, spec: ParamSpec) -> Dict[str, str]:
    if not p.discrete:
        raise ContractError("render_avatar needs a discrete parameter vector")
    spec.check(p)
    return spec.labels_of(p)


def render_avatar(p: ParamVector, resolution: int = 32, spec: Optional[ParamSpec] = None) -> ImageTensor:
    spec = spec or sprite_spec()
    canvas, _ = composite(_labels_for(p, spec), resolution)
    return ImageTensor((canvas * 2.0 - 1.0).astype(np.float32), DomainTag.ENGINE_RENDER)


def avatar_masks(p: ParamVector, resolution: int = 32, spec: Optional[ParamSpec] = None) -> Dict[str, np.ndarray]:
    """Visible layer masks of render_avatar(p)"""
    spec = spec or sprite_spec()
    _, visible = composite(_labels_for(p, spec), resolution)
    return visible
