import math

import numpy as np
import pytest

from bevloc.geometry import Camera, CameraExtrinsics, CameraIntrinsics, camera_at


@pytest.fixture
def nadir_camera():
    """Straight-down camera 1.5 m above the ego origin, f=100, c=(50, 50)."""
    return camera_at(
        "nadir", (0.0, 0.0, 1.5), yaw=0.0, pitch_down=math.pi / 2,
        fx=100.0, fy=100.0, width=101, height=101,
    )


def random_camera(rng) -> Camera:
    """A camera with random mount pose and intrinsics, looking groundward."""
    fx = rng.uniform(100, 600)
    fy = rng.uniform(100, 600)
    w = int(rng.integers(200, 700))
    h = int(rng.integers(100, 400))
    return camera_at(
        "rand",
        (rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(1.0, 3.0)),
        yaw=rng.uniform(-math.pi, math.pi),
        pitch_down=rng.uniform(math.radians(5), math.radians(70)),
        fx=fx, fy=fy, width=w, height=h,
    )


def star_polygon(rng, center=(0.0, 0.0), n_vertices=8, rmin=1.0, rmax=6.0):
    """A random simple (star-shaped) polygon."""
    angles = np.sort(rng.uniform(0, 2 * np.pi, n_vertices))
    radii = rng.uniform(rmin, rmax, n_vertices)
    return np.stack(
        [center[0] + radii * np.cos(angles), center[1] + radii * np.sin(angles)], axis=1
    )


def pip_oracle(px: float, py: float, poly: np.ndarray) -> bool:
    """Scalar even-odd point-in-polygon with boundary points inside.

    Independent ray-cast oracle for the scanline rasterizer.
    """
    n = len(poly)
    for e in range(n):
        ax, ay = poly[e]
        bx, by = poly[(e + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if (
            cross == 0.0
            and min(ax, bx) <= px <= max(ax, bx)
            and min(ay, by) <= py <= max(ay, by)
        ):
            return True
    inside = False
    for e in range(n):
        ax, ay = poly[e]
        bx, by = poly[(e + 1) % n]
        if ay == by:
            continue
        if (ay <= py < by) or (by <= py < ay):
            xc = ax + (py - ay) * (bx - ax) / (by - ay)
            if px == xc:
                return True
            if px < xc:
                inside = not inside
    return inside
