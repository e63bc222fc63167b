"""Named cell regions and classification of terminal positions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class TerminalClass(str, Enum):
    EXIT = "exit"
    SOURCE_DISC = "source_disc"
    WALL = "wall"
    COLLISION_CAP = "collision_cap"  # assigned by the tracer, not by geometry


@dataclass(frozen=True)
class Disc:
    """A circular disc: center (m), unit normal, radius (m)."""

    center: np.ndarray
    normal: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        normal = np.asarray(self.normal, dtype=float).reshape(3)
        norm = float(np.linalg.norm(normal))
        if not np.isfinite(center).all() or not np.isfinite(normal).all():
            raise ValueError("disc center/normal must be finite")
        if norm == 0.0:
            raise ValueError("disc normal must be nonzero")
        if not (np.isfinite(self.radius) and self.radius > 0.0):
            raise ValueError(f"disc radius must be > 0, got {self.radius}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "normal", normal / norm)
        object.__setattr__(self, "radius", float(self.radius))
        self.center.setflags(write=False)
        self.normal.setflags(write=False)

    def contains(self, r, plane_tolerance: float) -> bool:
        d = np.asarray(r, dtype=float).reshape(3) - self.center
        axial = float(np.dot(d, self.normal))
        if abs(axial) > plane_tolerance:
            return False
        radial = d - axial * self.normal
        return float(np.dot(radial, radial)) <= self.radius * self.radius


def _slab_points(disc: Disc, tol: float) -> np.ndarray:
    """Point cloud covering a disc's membership slab (disc thickened by tol)."""
    helper = (np.array([0.0, 0.0, 1.0]) if abs(disc.normal[2]) < 0.9
              else np.array([1.0, 0.0, 0.0]))
    e1 = np.cross(helper, disc.normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(disc.normal, e1)
    radii = disc.radius * np.array([0.0, 0.35, 0.7, 1.0])
    angles = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
    in_plane = (radii[:, None, None] * (np.cos(angles)[:, None] * e1
                                        + np.sin(angles)[:, None] * e2))
    pts = disc.center + in_plane.reshape(-1, 3)
    offsets = tol * np.array([-1.0, 0.0, 1.0])
    return (pts[None, :, :] + offsets[:, None, None] * disc.normal).reshape(-1, 3)


def slabs_overlap(a: Disc, b: Disc, tol: float) -> bool:
    """Whether the membership slabs of two discs can share points.

    Quick rejection by bounding spheres, then a dense sample of each slab
    tested for membership in the other.
    """
    gap = float(np.linalg.norm(a.center - b.center))
    bound_a = math.hypot(a.radius, tol)
    bound_b = math.hypot(b.radius, tol)
    if gap > bound_a + bound_b:
        return False
    return (any(b.contains(p, tol) for p in _slab_points(a, tol))
            or any(a.contains(p, tol) for p in _slab_points(b, tol)))


@dataclass(frozen=True)
class CellRegions:
    """Source disc and exit disc, plus the plane tolerance for membership.

    Positions are only resolved to voxel scale, so the tolerance normally
    equals the voxel size.
    """

    source_disc: Disc
    exit_disc: Disc
    plane_tolerance_m: float = 5e-4

    def __post_init__(self):
        if not (np.isfinite(self.plane_tolerance_m) and self.plane_tolerance_m > 0.0):
            raise ValueError("plane_tolerance_m must be > 0")
        if slabs_overlap(self.source_disc, self.exit_disc, self.plane_tolerance_m):
            raise ValueError(
                "source and exit regions must be disjoint: "
                f"source disc at {self.source_disc.center.tolist()} "
                f"(r={self.source_disc.radius:.3g} m) overlaps exit disc at "
                f"{self.exit_disc.center.tolist()} (r={self.exit_disc.radius:.3g} m) "
                f"within the {self.plane_tolerance_m:.3g} m plane tolerance")


def classify_terminal(r_f, regions: CellRegions) -> TerminalClass:
    """Sort a terminal position into Exit / SourceDisc / Wall.

    Total on finite inputs: anything not within either disc is a wall loss.
    """
    if regions.exit_disc.contains(r_f, regions.plane_tolerance_m):
        return TerminalClass.EXIT
    if regions.source_disc.contains(r_f, regions.plane_tolerance_m):
        return TerminalClass.SOURCE_DISC
    return TerminalClass.WALL


def wall_chart(r_f):
    """Chart coordinates (azimuth in degrees, y in meters) of a position.

    The azimuth is atan2(x, z) mapped to (-180, 180]; the origin column
    (x = z = 0) charts to 0 by convention.  Accepts a single 3-vector or an
    (N, 3) array.
    """
    r = np.asarray(r_f, dtype=float)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    az = np.degrees(np.arctan2(r[:, 0], r[:, 2]))
    az[az <= -180.0] += 360.0  # seam belongs to +180
    y = r[:, 1].copy()
    if single:
        return float(az[0]), float(y[0])
    return az, y
