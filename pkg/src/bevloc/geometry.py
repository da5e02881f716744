"""Camera models, planar rigid transforms, and height-parameterized
inverse projective mapping between image pixels and ground coordinates.

Conventions
-----------
- Ego frame: origin at the center of the rear wheel axis, x forward,
  y left, z up. All heights are meters above the z=0 ground plane.
- Camera frame: x right, y down, z forward (optical axis).
- Extrinsics map ego to camera: ``p_cam = R @ p_ego + t``.
- Pixel coordinates are continuous with integer values at pixel centers;
  (0, 0) is the center of the top-left pixel.
- Angles are radians everywhere; degrees appear only at CLI boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "CameraExtrinsics",
    "Camera",
    "CameraRig",
    "EgoPose",
    "HeightLift",
    "Projection",
    "ground_to_pixel",
    "pixel_to_ground",
    "ground_to_pixel_matrix",
    "compose_pose",
    "invert_pose",
    "wrap_angle",
    "transform_points",
    "surround_rig",
]

# |det| below this the reduced 3x3 projection matrix is treated as singular.
_DET_EPS = 1e-12
_ORTHO_EPS = 1e-9


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    r = math.remainder(a, math.tau)
    if r <= -math.pi:
        r += math.tau
    return r


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside image bounds")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraExtrinsics:
    """Rigid ego-to-camera transform, stored as the 3x4 matrix [R|t]."""

    rotation: np.ndarray  # (3, 3), ego -> camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation length 3")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_EPS:
            raise ValueError("rotation is not orthonormal within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def matrix(self) -> np.ndarray:
        """The 3x4 projection part P = [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def center(self) -> np.ndarray:
        """Camera center in the ego frame."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    extrinsics: CameraExtrinsics

    def projection(self) -> np.ndarray:
        """K @ [R|t], shape (3, 4)."""
        return self.intrinsics.matrix() @ self.extrinsics.matrix()


@dataclass(frozen=True)
class HeightLift:
    """Pure vertical translation T_h lifting the projection plane to z=h."""

    h: float = 0.0

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[2, 3] = self.h
        return m


@dataclass(frozen=True)
class Projection:
    """A projected image point with its projective depth (meters)."""

    u: float
    v: float
    depth: float


@dataclass(frozen=True)
class EgoPose:
    """Planar pose (x, y, yaw) in the map frame; yaw normalized to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s], [s, c]])


def _lift_height(lift) -> float:
    return lift.h if isinstance(lift, HeightLift) else float(lift)


def ground_to_pixel_matrix(camera: Camera, lift=0.0) -> np.ndarray:
    """Reduced 3x3 matrix B with B @ [x, y, 1]^T = depth * [u, v, 1]^T.

    Folding the plane height h into the last column of K @ P @ T_h drops
    the z column (its coefficient is 0 on the plane), leaving an
    invertible 3x3 map between the ego ground plane at z=h and the image.
    """
    h = _lift_height(lift)
    m = camera.projection()  # (3, 4)
    b = np.empty((3, 3))
    b[:, 0] = m[:, 0]
    b[:, 1] = m[:, 1]
    b[:, 2] = m[:, 2] * h + m[:, 3]
    return b


def ground_to_pixel(camera: Camera, ground, lift=0.0) -> Projection | None:
    """Project an ego-frame ground point at plane height h to the image.

    Returns None when the point is behind the camera (depth <= 0).
    The pixel is not clamped to the image bounds.
    """
    b = ground_to_pixel_matrix(camera, lift)
    x, y = ground
    p = b @ (x, y, 1.0)
    depth = p[2]
    if depth <= 0.0:
        return None
    return Projection(p[0] / depth, p[1] / depth, depth)


def _adjugate_inverse(b: np.ndarray) -> np.ndarray | None:
    """Closed-form 3x3 inverse via the adjugate; None when near singular."""
    a, bb, c = b[0]
    d, e, f = b[1]
    g, h, i = b[2]
    co00 = e * i - f * h
    co01 = f * g - d * i
    co02 = d * h - e * g
    det = a * co00 + bb * co01 + c * co02
    if abs(det) < _DET_EPS:
        return None
    adj = np.array(
        [
            [co00, c * h - bb * i, bb * f - c * e],
            [co01, a * i - c * g, c * d - a * f],
            [co02, bb * g - a * h, a * e - bb * d],
        ]
    )
    return adj / det


def pixel_to_ground(camera: Camera, pixel, lift=0.0) -> tuple[float, float] | None:
    """Intersect the viewing ray of a pixel with the plane z=h (ego frame).

    Exact algebraic inverse of :func:`ground_to_pixel` at the same lift.
    Returns None for rays parallel to the plane, intersections behind the
    camera, or a singular reduced matrix.
    """
    b = ground_to_pixel_matrix(camera, lift)
    inv = _adjugate_inverse(b)
    if inv is None:
        return None
    u, v = pixel
    q = inv @ (u, v, 1.0)
    # q = [x, y, 1] / depth; q[2] <= 0 means parallel ray or depth <= 0.
    if q[2] <= 0.0:
        return None
    return (q[0] / q[2], q[1] / q[2])


def compose_pose(a: EgoPose, b: EgoPose) -> EgoPose:
    """SE(2) composition: the pose of b expressed through frame a."""
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    return EgoPose(
        a.x + ca * b.x - sa * b.y,
        a.y + sa * b.x + ca * b.y,
        a.yaw + b.yaw,
    )


def invert_pose(a: EgoPose) -> EgoPose:
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    return EgoPose(-(ca * a.x + sa * a.y), -(-sa * a.x + ca * a.y), -a.yaw)


def transform_points(pose: EgoPose, points: np.ndarray) -> np.ndarray:
    """Apply an SE(2) pose to (..., 2) points (local frame -> map frame)."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    out = np.empty_like(pts)
    out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + pose.x
    out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + pose.y
    return out


@dataclass(frozen=True)
class CameraRig:
    """An ordered set of cameras; the order fixes accumulation order
    everywhere downstream."""

    cameras: tuple[Camera, ...]

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("rig must contain at least one camera")
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError("camera names must be unique")
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __iter__(self):
        return iter(self.cameras)

    def __len__(self):
        return len(self.cameras)

    @staticmethod
    def from_dict(doc: dict) -> "CameraRig":
        cams = []
        for entry in doc["cameras"]:
            k = np.asarray(entry["K"], dtype=np.float64)
            if k.shape != (3, 3):
                raise ValueError(f"camera {entry['name']}: K must be 3x3")
            intr = CameraIntrinsics(
                fx=float(k[0, 0]),
                fy=float(k[1, 1]),
                cx=float(k[0, 2]),
                cy=float(k[1, 2]),
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
            extr = CameraExtrinsics(
                rotation=np.asarray(entry["R"], dtype=np.float64),
                translation=np.asarray(entry["t"], dtype=np.float64),
            )
            cams.append(Camera(entry["name"], intr, extr))
        return CameraRig(tuple(cams))

    @staticmethod
    def from_json(path) -> "CameraRig":
        with open(path) as f:
            return CameraRig.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "cameras": [
                {
                    "name": c.name,
                    "K": c.intrinsics.matrix().tolist(),
                    "R": c.extrinsics.rotation.tolist(),
                    "t": c.extrinsics.translation.tolist(),
                    "width": c.intrinsics.width,
                    "height": c.intrinsics.height,
                }
                for c in self.cameras
            ]
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _looking_rotation(yaw: float, pitch_down: float) -> np.ndarray:
    """Ego->camera rotation for a camera facing ego-frame azimuth `yaw`
    and tilted `pitch_down` radians below horizontal."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch_down), math.sin(pitch_down)
    forward = np.array([cy * cp, sy * cp, -sp])
    right = np.array([sy, -cy, 0.0])
    down = np.cross(forward, right)
    # Rows are the camera axes expressed in the ego frame.
    return np.vstack([right, down, forward])


def camera_at(
    name: str,
    position,
    yaw: float,
    pitch_down: float,
    fx: float,
    fy: float,
    width: int,
    height: int,
) -> Camera:
    """Build a camera from its ego-frame center and viewing direction."""
    r = _looking_rotation(yaw, pitch_down)
    c = np.asarray(position, dtype=np.float64)
    intr = CameraIntrinsics(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    return Camera(name, intr, CameraExtrinsics(rotation=r, translation=-r @ c))


def surround_rig(
    n_cameras: int = 6,
    width: int = 544,
    height: int = 224,
    fx: float = 240.0,
    fy: float | None = None,
    mount_height: float = 1.6,
    mount_radius: float = 1.0,
    pitch_down_deg: float = 12.0,
    forward_offset: float = 1.5,
) -> CameraRig:
    """A surround rig of evenly spaced cameras around the ego origin.

    Cameras sit on a circle of `mount_radius` centered `forward_offset`
    meters ahead of the rear axle, at `mount_height`, each facing
    outward along its azimuth and pitched down.
    """
    if n_cameras < 1:
        raise ValueError("need at least one camera")
    fy = fx if fy is None else fy
    pitch = math.radians(pitch_down_deg)
    cams = []
    for i in range(n_cameras):
        yaw = wrap_angle(i * math.tau / n_cameras)
        pos = (
            forward_offset + mount_radius * math.cos(yaw),
            mount_radius * math.sin(yaw),
            mount_height,
        )
        cams.append(
            camera_at(f"cam{i}", pos, yaw, pitch, fx, fy, width, height)
        )
    return CameraRig(tuple(cams))
