import math
from functools import lru_cache
from typing import Tuple

import numpy as np

from app.engine.images import DomainTag, ImageTensor
from app.engine.params import ParamSpec, ParamVector, polygon_spec
from app.exceptions import DomainError

# Radius is given in pixels of a 64-pixel reference canvas
REFERENCE_RESOLUTION = 64


@lru_cache(maxsize=8)
def _pixel_centres(resolution: int) -> Tuple[np.ndarray, np.ndarray]:
    coords = np.arange(resolution, dtype=np.float64) + 0.5
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    return xs, ys


def polygon_vertices(vertices: int, radius: float, rotation: float, resolution: int) -> np.ndarray:
    """Vertex positions in pixel coordinates (x right, y down), counter-clockwise on screen."""
    centre = resolution / 2.0
    r = radius * resolution / REFERENCE_RESOLUTION
    base = math.pi / 2.0 + math.radians(rotation)
    angles = base + 2.0 * math.pi * np.arange(vertices) / vertices
    return np.stack([centre + r * np.cos(angles), centre - r * np.sin(angles)], axis=1)


def rasterize_polygon(vertices: int, radius: float, rotation: float, resolution: int) -> np.ndarray:
    """Binary H x W raster: +1 where the pixel centre lies inside the polygon, -1 elsewhere."""
    xs, ys = _pixel_centres(resolution)
    pts = polygon_vertices(vertices, radius, rotation, resolution)
    inside = np.ones_like(xs, dtype=bool)
    for i in range(vertices):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % vertices]
        # counter-clockwise on screen means clockwise in y-down coordinates
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        inside &= cross <= 0.0
    return np.where(inside, 1.0, -1.0).astype(np.float32)


def render_polygon(p: ParamVector, resolution: int = 32, spec: ParamSpec = None) -> ImageTensor:
    spec = spec or polygon_spec()
    spec.check(p)
    physical = spec.decode(p)
    vertices, radius, rotation = physical["vertices"], physical["radius"], physical["rotation"]
    if vertices not in (3, 4, 5, 6):
        raise DomainError(f"Polygon needs 3 to 6 vertices, got {vertices}")
    if not 15.0 - 1e-4 <= radius <= 30.0 + 1e-4:
        raise DomainError(f"Radius {radius} outside [15, 30]")
    if not -10.0 - 1e-4 <= rotation <= 10.0 + 1e-4:
        raise DomainError(f"Rotation {rotation} outside [-10, 10]")

    raster = rasterize_polygon(vertices, radius, rotation, resolution)
    return ImageTensor(raster[None], DomainTag.ENGINE_RENDER)


def expected_area(vertices: int, radius: float, resolution: int = REFERENCE_RESOLUTION) -> float:
    """Analytic area of the regular polygon, in pixels of the given canvas"""
    r = radius * resolution / REFERENCE_RESOLUTION
    return 0.5 * vertices * r * r * math.sin(2.0 * math.pi / vertices)
