"""Procedural moving-object scenes rendered through a pinhole camera.

Objects are flat, camera-facing rectangles with a checker texture fixed in
object space, so motion produces intensity edges inside the object as well as
at its border. The background carries a static seeded texture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import BBox
from .sensor_model import FrameSequence, frame_timestamps


@dataclass(frozen=True)
class SceneObject:
    size: tuple[float, float]  # width, height in meters
    position: tuple[float, float, float]  # X right, Y down, Z forward
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    albedo: float = 0.8


@dataclass
class SceneSpec:
    seed: int = 0
    W: int = 320
    H: int = 240
    frame_rate: float = 20.0
    duration: float = 1.0
    F_v: float = 90.0
    objects: list[SceneObject] = field(default_factory=list)
    background_level: float = 100.0
    texture_amplitude: float = 20.0

    @property
    def n_frames(self) -> int:
        return int(math.floor(self.duration * self.frame_rate + 1e-9))

    def validate(self):
        if self.W <= 0 or self.H <= 0:
            raise ValueError("frame size must be positive")
        if self.frame_rate <= 0 or self.duration <= 0 or self.n_frames < 1:
            raise ValueError(
                f"duration {self.duration}s at {self.frame_rate} Hz gives no frames"
            )
        if not 0 < self.F_v < 180:
            raise ValueError(f"F_v must be in (0, 180), got {self.F_v}")
        if not 0 <= self.background_level <= 255:
            raise ValueError("background_level must be in [0, 255]")
        for o in self.objects:
            if not 0 <= o.albedo <= 1:
                raise ValueError("albedo must be in [0, 1]")
            if min(o.size) <= 0:
                raise ValueError("object size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        objs = [
            SceneObject(
                size=tuple(o["size"]) if isinstance(o["size"], (list, tuple)) else (o["size"], o["size"]),
                position=tuple(o["position"]),
                velocity=tuple(o.get("velocity", (0, 0, 0))),
                albedo=o.get("albedo", 0.8),
            )
            for o in d.pop("objects", [])
        ]
        known = {"seed", "W", "H", "frame_rate", "duration", "F_v", "background_level", "texture_amplitude"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene fields: {sorted(unknown)}")
        return cls(objects=objs, **d)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "W": self.W, "H": self.H, "frame_rate": self.frame_rate,
            "duration": self.duration, "F_v": self.F_v,
            "background_level": self.background_level,
            "texture_amplitude": self.texture_amplitude,
            "objects": [
                {"size": list(o.size), "position": list(o.position),
                 "velocity": list(o.velocity), "albedo": o.albedo}
                for o in self.objects
            ],
        }


@dataclass(frozen=True)
class CameraModel:
    f: float
    cx: float
    cy: float

    @classmethod
    def for_frame(cls, W: int, H: int, F_v: float) -> "CameraModel":
        return cls(focal_from_fov(W, F_v), W / 2.0, H / 2.0)


def focal_from_fov(W: float, F_v: float) -> float:
    if not 0 < F_v < 180:
        raise ValueError(f"F_v must be in (0, 180) degrees, got {F_v}")
    return (W / 2.0) / math.tan(F_v * math.pi / 360.0)


def project_point(p, cam: CameraModel):
    """Pixel position of a 3D point, or None when it lies at or behind the camera."""
    X, Y, Z = p
    if Z <= 0:
        return None
    return (cam.cx + cam.f * X / Z, cam.cy + cam.f * Y / Z)


def _pixel_span(a: float, b: float, n: int) -> tuple[int, int]:
    # pixels whose centers fall in [a, b), clipped to [0, n)
    lo = max(0, math.ceil(a - 0.5))
    hi = min(n, math.ceil(b - 0.5))
    return lo, hi


def _background(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    coarse = rng.uniform(-1, 1, size=(spec.H // 8 + 2, spec.W // 8 + 2))
    tex = np.kron(coarse, np.ones((8, 8)))[: spec.H, : spec.W]
    return spec.background_level + spec.texture_amplitude * tex


def render_frame(spec: SceneSpec, t: float, background: np.ndarray | None = None):
    """Render one frame at time ``t`` seconds; returns (uint8 image, boxes)."""
    cam = CameraModel.for_frame(spec.W, spec.H, spec.F_v)
    img = (_background(spec) if background is None else background).copy()
    owner = np.full((spec.H, spec.W), -1, dtype=np.int32)
    phase = np.random.default_rng(spec.seed + 1).uniform(0, 1, size=max(1, len(spec.objects)))

    placed = []
    for k, o in enumerate(spec.objects):
        X = o.position[0] + o.velocity[0] * t
        Y = o.position[1] + o.velocity[1] * t
        Z = o.position[2] + o.velocity[2] * t
        if Z <= 0:
            continue
        placed.append((Z, k, X, Y, o))
    # painter's order: far to near, ties by index
    placed.sort(key=lambda r: (-r[0], r[1]))

    for Z, k, X, Y, o in placed:
        w, h = o.size
        left = cam.cx + cam.f * (X - w / 2) / Z
        right = cam.cx + cam.f * (X + w / 2) / Z
        top = cam.cy + cam.f * (Y - h / 2) / Z
        bottom = cam.cy + cam.f * (Y + h / 2) / Z
        c0, c1 = _pixel_span(left, right, spec.W)
        r0, r1 = _pixel_span(top, bottom, spec.H)
        if c0 >= c1 or r0 >= r1:
            continue
        # checker texture anchored to the object surface
        cell = min(w, h) / 4.0
        u = (np.arange(c0, c1) + 0.5 - cam.cx) * Z / cam.f - (X - w / 2)
        v = (np.arange(r0, r1) + 0.5 - cam.cy) * Z / cam.f - (Y - h / 2)
        cu = np.floor(u / cell + phase[k]).astype(np.int64)
        cv = np.floor(v / cell).astype(np.int64)
        checker = ((cv[:, None] + cu[None, :]) & 1).astype(np.float64)
        img[r0:r1, c0:c1] = 255.0 * o.albedo * (0.3 + 0.7 * checker)
        owner[r0:r1, c0:c1] = k

    boxes = []
    for k in range(len(spec.objects)):
        ys, xs = np.nonzero(owner == k)
        if ys.size == 0:
            continue
        x0, x1, y0, y1 = int(xs.min()), int(xs.max()), int(ys.min()), int(ys.max())
        boxes.append(BBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1, class_id=0, track_id=k))
    frame = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return frame, boxes


def generate_sequence(spec: SceneSpec) -> tuple[FrameSequence, list[list[BBox]]]:
    spec.validate()
    n = spec.n_frames
    ts = frame_timestamps(n, spec.frame_rate)
    bg = _background(spec)
    frames = np.empty((n, spec.H, spec.W), dtype=np.uint8)
    labels = []
    for i in range(n):
        frames[i], boxes = render_frame(spec, int(ts[i]) / 1e9, bg)
        labels.append(boxes)
    seq = FrameSequence(spec.W, spec.H, spec.frame_rate, ts, frames, F_v=spec.F_v)
    return seq, labels


def random_scene(
    seed: int, W: int = 320, H: int = 240, n_frames: int = 20, frame_rate: float = 20.0,
    F_v: float = 90.0, n_objects: int | None = None,
) -> SceneSpec:
    """Seeded scene with a few vehicle-sized objects crossing the view."""
    rng = np.random.default_rng(seed)
    if n_objects is None:
        n_objects = int(rng.integers(1, 4))
    objs = []
    for _ in range(n_objects):
        Z = float(rng.uniform(6.0, 14.0))
        half_w = Z * math.tan(math.radians(45.0 / 2))  # keep inside a 45 deg view
        X = float(rng.uniform(-0.6, 0.6) * half_w)
        Y = float(rng.uniform(-0.2, 0.4) * half_w * H / W)
        size = (float(rng.uniform(2.0, 4.5)), float(rng.uniform(1.4, 2.5)))
        vel = (float(rng.choice([-1, 1]) * rng.uniform(2.0, 8.0)), 0.0, float(rng.uniform(-2.0, 2.0)))
        objs.append(SceneObject(size, (X, Y, Z), vel, float(rng.uniform(0.25, 0.95))))
    return SceneSpec(
        seed=seed, W=W, H=H, frame_rate=frame_rate, duration=n_frames / frame_rate,
        F_v=F_v, objects=objs, background_level=float(rng.uniform(60, 140)),
    )
