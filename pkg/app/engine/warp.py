import math
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F


def affine_warp(
    image: np.ndarray,
    degrees: float,
    shift: Tuple[float, float] = (0.0, 0.0),
    fill: Optional[float] = None,
) -> np.ndarray:
    """
    Bilinear rotation (counter-clockwise on screen) about the image centre
    followed by a translation given as a fraction of the width (x right,
    y down). Pixels sampled from outside the canvas take `fill`, or the
    nearest border pixel when fill is None.
    """
    theta_rad = math.radians(degrees)
    cos, sin = math.cos(theta_rad), math.sin(theta_rad)
    dx, dy = 2.0 * shift[0], 2.0 * shift[1]
    # output -> input sampling map in normalized coordinates
    theta = torch.tensor(
        [[cos, -sin, -(cos * dx - sin * dy)], [sin, cos, -(sin * dx + cos * dy)]],
        dtype=torch.float64,
    ).unsqueeze(0)

    src = torch.from_numpy(np.asarray(image, dtype=np.float64)).unsqueeze(0)
    if fill is not None:
        src = src - fill
    grid = F.affine_grid(theta, list(src.shape), align_corners=False)
    padding = "zeros" if fill is not None else "border"
    out = F.grid_sample(src, grid, mode="bilinear", padding_mode=padding, align_corners=False)
    if fill is not None:
        out = out + fill
    return out.squeeze(0).numpy().astype(np.float32)
