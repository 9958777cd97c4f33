from dataclasses import dataclass
from enum import Enum

import numpy as np

from app.exceptions import ContractError


class DomainTag(str, Enum):
    PHOTO = "photo"
    ENGINE_RENDER = "engine_render"
    GENERATED = "generated"


@dataclass
class ImageTensor:
    """C x H x W image with values in [-1, 1]"""

    data: np.ndarray
    domain_tag: DomainTag = DomainTag.ENGINE_RENDER

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ContractError(f"Image must be C x H x W, got shape {self.data.shape}")
        channels, height, width = self.data.shape
        if channels not in (1, 3) or height != width:
            raise ContractError(f"Unsupported image shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ContractError("Image contains non-finite values")
        if np.any(np.abs(self.data) > 1.0 + 1e-6):
            raise ContractError("Image values must lie in [-1, 1]")

    @property
    def resolution(self) -> int:
        return self.data.shape[-1]

    @property
    def channels(self) -> int:
        return self.data.shape[0]
