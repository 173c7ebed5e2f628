"""Spherical range-image projection with per-pixel back-pointers.

The sensor frame is z-up. The projection frame used for the angle formulas is
``(x, y, z)_proj = (y, z, x)_sensor``, so azimuth is ``atan2(x_p, z_p)`` (the
usual ``atan2(y, x)`` in the sensor frame) and elevation is ``asin(y_p / r)``.
Images are indexed ``[v, u]`` with ``v`` the elevation row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


class EmptyInputError(ValueError):
    pass


class InvalidPixelError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionConfig:
    width: int = 1024
    height: int = 64
    theta_min: float = -np.pi
    theta_max: float = np.pi
    phi_min: float = np.deg2rad(-22.5)
    phi_max: float = np.deg2rad(22.5)
    r_min: float = 0.3
    r_max: float = 100.0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("projection needs width >= 8 and height >= 8")
        if not self.theta_max > self.theta_min:
            raise ValueError("theta_max must exceed theta_min")
        if not self.phi_max > self.phi_min:
            raise ValueError("phi_max must exceed phi_min")
        if not 0 < self.r_min < self.r_max:
            raise ValueError("need 0 < r_min < r_max")

    @classmethod
    def from_fov(cls, width=1024, height=64, fov_up_deg=22.5, fov_down_deg=-22.5,
                 range_min=0.3, range_max=100.0):
        return cls(
            width=int(width),
            height=int(height),
            phi_min=float(np.deg2rad(fov_down_deg)),
            phi_max=float(np.deg2rad(fov_up_deg)),
            r_min=float(range_min),
            r_max=float(range_max),
        )

    @property
    def d_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.width

    @property
    def d_phi(self) -> float:
        return (self.phi_max - self.phi_min) / self.height

    @property
    def full_turn(self) -> bool:
        return abs(self.theta_max - self.theta_min - TWO_PI) < 1e-12

    def azimuths(self) -> np.ndarray:
        """Bin-center azimuth per column."""
        return self.theta_min + (np.arange(self.width) + 0.5) * self.d_theta

    def elevations(self) -> np.ndarray:
        """Bin-center elevation per row."""
        return self.phi_min + (np.arange(self.height) + 0.5) * self.d_phi


@dataclass
class RangeImage:
    ranges: np.ndarray  # (H, W), NaN where empty
    point_index: np.ndarray  # (H, W) int64, -1 where empty
    config: ProjectionConfig
    points: np.ndarray = field(repr=False)  # source cloud, sensor frame

    @property
    def valid(self) -> np.ndarray:
        return self.point_index >= 0

    def vertex_map(self) -> np.ndarray:
        """Back-pointed sensor-frame points as an (H, W, 3) grid, NaN where empty."""
        out = np.full(self.ranges.shape + (3,), np.nan)
        mask = self.valid
        out[mask] = self.points[self.point_index[mask]]
        return out


def sensor_to_projection(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., [1, 2, 0]]


def projection_to_sensor(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p[..., [2, 0, 1]]


def pixel_coordinates(points: np.ndarray, config: ProjectionConfig):
    """Per-point ``(u, v, r, keep)`` before collision resolution."""
    q = sensor_to_projection(points)
    r = np.linalg.norm(q, axis=1)
    keep = np.isfinite(r) & (r >= config.r_min) & (r <= config.r_max)
    theta = np.arctan2(q[:, 0], q[:, 2])
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arcsin(np.clip(q[:, 1] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    # the epsilon keeps exact bin boundaries from rounding into the lower bin
    u = np.floor((theta - config.theta_min) / config.d_theta + 1e-9)
    v = np.floor((phi - config.phi_min) / config.d_phi + 1e-9)
    if config.full_turn:
        u = np.mod(u, config.width)
    else:
        keep &= (u >= 0) & (u < config.width)
    keep &= (v >= 0) & (v < config.height)
    u = np.where(keep, u, 0).astype(np.int64)
    v = np.where(keep, v, 0).astype(np.int64)
    return u, v, r, keep


def project(points, config: ProjectionConfig) -> RangeImage:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInputError("cannot project an empty cloud")
    u, v, r, keep = pixel_coordinates(points, config)
    idx = np.flatnonzero(keep)
    H, W = config.height, config.width
    ranges = np.full((H, W), np.nan)
    point_index = np.full((H, W), -1, dtype=np.int64)
    if idx.size:
        flat = v[idx] * W + u[idx]
        # nearest return wins; ties broken by the lower point index
        order = np.lexsort((idx, r[idx], flat))
        flat_sorted = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        winners = idx[order[first]]
        cells = flat_sorted[first]
        ranges.flat[cells] = r[winners]
        point_index.flat[cells] = winners
    return RangeImage(ranges=ranges, point_index=point_index, config=config, points=points)


def unproject(image: RangeImage, u: int, v: int, frame: str = "sensor") -> np.ndarray:
    """Reconstruct the 3D point of pixel ``(u, v)`` from its range and bin-center angles.

    ``frame="projection"`` returns the raw ``(cos(phi) sin(theta), sin(phi), cos(phi) cos(theta))``
    layout; the default converts back to the z-up sensor frame.
    """
    cfg = image.config
    if not (0 <= u < cfg.width and 0 <= v < cfg.height) or image.point_index[v, u] < 0:
        raise InvalidPixelError(f"pixel ({u}, {v}) holds no return")
    r = image.ranges[v, u]
    theta = cfg.theta_min + (u + 0.5) * cfg.d_theta
    phi = cfg.phi_min + (v + 0.5) * cfg.d_phi
    p = r * np.array([np.cos(phi) * np.sin(theta), np.sin(phi), np.cos(phi) * np.cos(theta)])
    if frame == "projection":
        return p
    if frame != "sensor":
        raise ValueError(f"unknown frame {frame!r}")
    return projection_to_sensor(p)


def unproject_all(image: RangeImage) -> np.ndarray:
    """Vectorized :func:`unproject` over the whole image (sensor frame, NaN where empty)."""
    cfg = image.config
    theta = cfg.azimuths()[None, :]
    phi = cfg.elevations()[:, None]
    r = image.ranges
    q = np.stack(
        [r * np.cos(phi) * np.sin(theta), r * np.sin(phi) * np.ones_like(theta),
         r * np.cos(phi) * np.cos(theta)],
        axis=-1,
    )
    return projection_to_sensor(q)
