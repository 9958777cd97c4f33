import hashlib
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from app.engine.avatar import BACKGROUND, Appearance, composite
from app.engine.images import DomainTag, ImageTensor
from app.engine.params import ParamSpec, ParamVector, sprite_spec
from app.engine.sampling import DomainSampler, SamplerKind, derive_seed, draw_params, stream_rng
from app.engine.warp import affine_warp
from app.exceptions import ContractError, DomainError

HUE_RANGE = (-8.0, 8.0)
ASPECT_RANGE = (0.9, 1.1)
OFFSET_RANGE = (-0.05, 0.05)

ILLUMINATION_RANGE = (0.6, 1.0)
ROTATION_RANGE = (-10.0, 10.0)
MAX_SHIFT = 0.1
MAX_SIGMA = 0.05


def _within(value: float, bounds: Tuple[float, float]) -> bool:
    return bounds[0] - 1e-9 <= value <= bounds[1] + 1e-9


@dataclass(frozen=True)
class IdentityLatent:
    """The unseen person behind a photo: engine configuration plus appearance."""

    base_params: ParamVector
    hue: float = 0.0
    aspect: float = 1.0
    offset: Tuple[float, float] = (0.0, 0.0)
    identity_set: str = ""
    index: int = -1

    def __post_init__(self):
        if not self.base_params.discrete:
            raise ContractError("Identity base parameters must be discrete")
        if not _within(self.hue, HUE_RANGE):
            raise DomainError(f"Hue jitter {self.hue} outside {HUE_RANGE}")
        if not _within(self.aspect, ASPECT_RANGE):
            raise DomainError(f"Face aspect {self.aspect} outside {ASPECT_RANGE}")
        if not all(_within(o, OFFSET_RANGE) for o in self.offset):
            raise DomainError(f"Offset {self.offset} outside {OFFSET_RANGE}")

    @property
    def key(self) -> str:
        """Content digest; two latents share a key only if they render the same person"""
        digest = hashlib.sha256(np.asarray(self.base_params.values, dtype="<f4").tobytes())
        digest.update(np.asarray([self.hue, self.aspect, *self.offset], dtype="<f8").tobytes())
        return digest.hexdigest()

    @property
    def appearance(self) -> Appearance:
        return Appearance(hue=self.hue, aspect=self.aspect, offset=tuple(self.offset))


@dataclass(frozen=True)
class PhotoNuisance:
    """Everything about a photo that does not depend on the identity."""

    texture: bool = False
    colour_a: Tuple[float, float, float] = BACKGROUND
    colour_b: Tuple[float, float, float] = BACKGROUND
    frequency: float = 1.0
    angle: float = 0.0
    phase: float = 0.0
    illumination: float = 1.0
    rotation: float = 0.0
    shift: Tuple[float, float] = (0.0, 0.0)
    sigma: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not _within(self.illumination, ILLUMINATION_RANGE):
            raise DomainError(f"Illumination {self.illumination} outside {ILLUMINATION_RANGE}")
        if not _within(self.rotation, ROTATION_RANGE):
            raise DomainError(f"Rotation {self.rotation} outside {ROTATION_RANGE}")
        if max(abs(self.shift[0]), abs(self.shift[1])) > MAX_SHIFT + 1e-9:
            raise DomainError(f"Shift {self.shift} larger than {MAX_SHIFT}")
        if not 0.0 <= self.sigma <= MAX_SIGMA + 1e-9:
            raise DomainError(f"Noise sigma {self.sigma} outside [0, {MAX_SIGMA}]")

    @classmethod
    def neutral(cls) -> "PhotoNuisance":
        return cls()

    @classmethod
    def sample(cls, nuisance_seed: int) -> "PhotoNuisance":
        rng = stream_rng(nuisance_seed, "photo-nuisance", 0)
        return cls(
            texture=True,
            colour_a=tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3)),
            colour_b=tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3)),
            frequency=float(rng.uniform(1.0, 4.0)),
            angle=float(rng.uniform(0.0, math.pi)),
            phase=float(rng.uniform(0.0, 2.0 * math.pi)),
            illumination=float(rng.uniform(*ILLUMINATION_RANGE)),
            rotation=float(rng.uniform(*ROTATION_RANGE)),
            shift=(float(rng.uniform(-MAX_SHIFT, MAX_SHIFT)), float(rng.uniform(-MAX_SHIFT, MAX_SHIFT))),
            sigma=float(rng.uniform(0.0, MAX_SIGMA)),
            noise_seed=int(nuisance_seed),
        )

    def without_noise(self) -> "PhotoNuisance":
        return replace(self, sigma=0.0)


def sample_identity(spec: ParamSpec, sampler: DomainSampler, index: int) -> IdentityLatent:
    if sampler.kind != SamplerKind.PHOTOS:
        raise ContractError(f"Identities come from a {SamplerKind.PHOTOS.value} sampler")
    rng = sampler.rng(index)
    base = draw_params(spec, rng)
    return IdentityLatent(
        base_params=base,
        hue=float(rng.uniform(*HUE_RANGE)),
        aspect=float(rng.uniform(*ASPECT_RANGE)),
        offset=(float(rng.uniform(*OFFSET_RANGE)), float(rng.uniform(*OFFSET_RANGE))),
        identity_set=sampler.stream,
        index=index,
    )


def photo_seed(sampler: DomainSampler, index: int, shot: int) -> int:
    return derive_seed(sampler.seed, f"nuisance/{sampler.stream}", index, shot)


def _background(nuisance: PhotoNuisance, resolution: int) -> np.ndarray:
    if not nuisance.texture:
        return np.broadcast_to(np.asarray(BACKGROUND)[:, None, None], (3, resolution, resolution))
    coords = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    v, u = np.meshgrid(coords, coords, indexing="ij")
    t = 0.5 + 0.5 * np.sin(
        2.0 * math.pi * nuisance.frequency * (u * math.cos(nuisance.angle) + v * math.sin(nuisance.angle))
        + nuisance.phase
    )
    a = np.asarray(nuisance.colour_a)[:, None, None]
    b = np.asarray(nuisance.colour_b)[:, None, None]
    return a + (b - a) * t[None]


def render_photo(
    identity: IdentityLatent,
    nuisance_seed: int,
    resolution: int = 32,
    spec: Optional[ParamSpec] = None,
    nuisance: Optional[PhotoNuisance] = None,
) -> ImageTensor:
    """
    Synthetic 'in the wild' photo of an identity: the restyled avatar over a
    textured background, relit, rotated, shifted and noised.
    """
    spec = spec or sprite_spec()
    nuisance = nuisance if nuisance is not None else PhotoNuisance.sample(nuisance_seed)

    labels = spec.labels_of(identity.base_params)
    canvas, visible = composite(labels, resolution, identity.appearance)
    background = visible["background"]
    canvas[:, background] = _background(nuisance, resolution)[:, background]
    canvas *= nuisance.illumination

    image = canvas * 2.0 - 1.0
    if nuisance.rotation != 0.0 or nuisance.shift != (0.0, 0.0):
        image = affine_warp(image, nuisance.rotation, nuisance.shift)

    if nuisance.sigma > 0.0:
        rng = stream_rng(nuisance.noise_seed, "photo-noise", 0)
        image = image + nuisance.sigma * rng.standard_normal(image.shape)
    return ImageTensor(np.clip(image, -1.0, 1.0).astype(np.float32), DomainTag.PHOTO)


def ground_truth_map(identity: IdentityLatent) -> ParamVector:
    """The configuration y(x) of any photo of this identity"""
    return identity.base_params
