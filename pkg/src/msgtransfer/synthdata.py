"""Synthetic moving-shape clips with exact ground-truth centroid paths.

Each object is a symmetric stamp (sampled Gaussian or area-coverage square)
laid on integer offsets and then bilinearly splatted to its sub-cell
position. Splatting preserves mass and first moment, so the rendered
intensity centroid equals the analytic position whenever nothing is
clipped at the frame border (which the generator rejects).

Motion categories mirror a single-object / multi-object / camera-motion
split; the shape kind doubles as the conditioning label.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Union

import numpy as np

from msgtransfer.videocore import DEFAULT_SHAPE, SeededRng, category_id, save_tensor

MOTION_CATEGORIES = ("single", "multi", "camera")
DEFAULT_COUNTS = (85, 65, 50)
BLOB_CUTOFF = 2.5  # stamp truncation radius in units of blob_sigma


class TrajectoryError(ValueError):
    """The requested motion leaves the frame."""


@dataclass(frozen=True)
class Linear:
    start: tuple[float, float]
    velocity: tuple[float, float]
    kind: Literal["linear"] = "linear"

    def positions(self, n_frames: int) -> np.ndarray:
        f = np.arange(n_frames, dtype=np.float64)[:, None]
        return np.asarray(self.start, dtype=np.float64) + f * np.asarray(self.velocity, dtype=np.float64)


@dataclass(frozen=True)
class Circular:
    center: tuple[float, float]
    radius: float
    angular_rate: float
    phase: float = 0.0
    kind: Literal["circular"] = "circular"

    def positions(self, n_frames: int) -> np.ndarray:
        theta = self.phase + self.angular_rate * np.arange(n_frames, dtype=np.float64)
        return np.stack(
            [self.center[0] + self.radius * np.sin(theta), self.center[1] + self.radius * np.cos(theta)],
            axis=1,
        )


@dataclass(frozen=True)
class Sinusoidal:
    """Drift along ``velocity`` plus a row oscillation."""

    start: tuple[float, float]
    velocity: tuple[float, float]
    amplitude: float
    period: float
    kind: Literal["sinusoidal"] = "sinusoidal"

    def positions(self, n_frames: int) -> np.ndarray:
        pts = Linear(self.start, self.velocity).positions(n_frames)
        f = np.arange(n_frames, dtype=np.float64)
        pts[:, 0] += self.amplitude * np.sin(2.0 * np.pi * f / self.period)
        return pts


@dataclass(frozen=True)
class Pan:
    velocity: tuple[float, float]
    kind: Literal["pan"] = "pan"


@dataclass(frozen=True)
class Zoom:
    rate: float
    kind: Literal["zoom"] = "zoom"


TrajectorySpec = Union[Linear, Circular, Sinusoidal]
CameraSpec = Union[Pan, Zoom, None]


@dataclass(frozen=True)
class ClipSpec:
    shape_kind: Literal["gaussian_blob", "square"]
    trajectories: tuple[TrajectorySpec, ...]
    camera: CameraSpec = None
    amplitude: float = 1.0
    blob_sigma: float = 0.8
    square_side: float = 4.0
    shape: tuple[int, int, int, int] = DEFAULT_SHAPE
    noise_std: float = 0.0

    def __post_init__(self):
        if self.shape_kind not in ("gaussian_blob", "square"):
            raise ValueError(f"unknown shape_kind {self.shape_kind!r}")
        if len(self.trajectories) not in (1, 2):
            raise ValueError("object_count must be 1 or 2")
        if not 0 < self.amplitude <= 1:
            raise ValueError(f"amplitude must lie in (0, 1], got {self.amplitude}")
        if not self.blob_sigma > 0 or not self.square_side > 0:
            raise ValueError("shape size parameters must be positive")
        if self.shape[-1] != 1:
            raise ValueError("synthetic clips are single-channel")

    @property
    def object_count(self) -> int:
        return len(self.trajectories)

    @property
    def category(self) -> int:
        return category_id(self.shape_kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trajectories"] = [asdict(t) for t in self.trajectories]
        d["camera"] = asdict(self.camera) if self.camera is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClipSpec":
        kinds = {"linear": Linear, "circular": Circular, "sinusoidal": Sinusoidal}
        trajs = []
        for t in d["trajectories"]:
            t = dict(t)
            k = kinds[t.pop("kind")]
            trajs.append(k(**{key: tuple(v) if isinstance(v, list) else v for key, v in t.items()}))
        cam = d.get("camera")
        if cam is not None:
            cam = dict(cam)
            kind = cam.pop("kind")
            cam = Pan(tuple(cam["velocity"])) if kind == "pan" else Zoom(cam["rate"])
        rest = {k: v for k, v in d.items() if k not in ("trajectories", "camera")}
        rest["shape"] = tuple(rest.get("shape", DEFAULT_SHAPE))
        return cls(trajectories=tuple(trajs), camera=cam, **rest)


def _stamp(spec: ClipSpec, scale: float) -> np.ndarray:
    """Symmetric stamp on integer offsets [-R, R]^2."""
    if spec.shape_kind == "gaussian_blob":
        s = spec.blob_sigma * scale
        radius = int(math.ceil(BLOB_CUTOFF * s))
        o = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-0.5 * (o / s) ** 2)
        return spec.amplitude * np.outer(g, g)
    half = 0.5 * spec.square_side * scale
    radius = int(math.ceil(half + 0.5)) - 1
    o = np.arange(-radius, radius + 1, dtype=np.float64)
    cover = np.clip(np.minimum(o + 0.5, half) - np.maximum(o - 0.5, -half), 0.0, 1.0)
    return spec.amplitude * np.outer(cover, cover)


def _splat(frame: np.ndarray, stamp: np.ndarray, pos: np.ndarray) -> bool:
    """Add ``stamp`` centred at ``pos``; returns False if it would clip."""
    radius = stamp.shape[0] // 2
    h, w = frame.shape
    base = np.floor(pos).astype(int)
    fr, fc = pos - base
    r0, c0 = base[0] - radius, base[1] - radius
    n = stamp.shape[0]
    if r0 < 0 or c0 < 0 or r0 + n >= h or c0 + n >= w:
        return False
    frame[r0 : r0 + n, c0 : c0 + n] += (1 - fr) * (1 - fc) * stamp
    frame[r0 + 1 : r0 + n + 1, c0 : c0 + n] += fr * (1 - fc) * stamp
    frame[r0 : r0 + n, c0 + 1 : c0 + n + 1] += (1 - fr) * fc * stamp
    frame[r0 + 1 : r0 + n + 1, c0 + 1 : c0 + n + 1] += fr * fc * stamp
    return True


def object_paths(spec: ClipSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-object positions after the camera transform, shape (objects, F, 2), and per-frame scale."""
    n_frames, h, w, _ = spec.shape
    paths = np.stack([t.positions(n_frames) for t in spec.trajectories])
    scales = np.ones(n_frames)
    f = np.arange(n_frames, dtype=np.float64)
    if isinstance(spec.camera, Pan):
        paths = paths + f[None, :, None] * np.asarray(spec.camera.velocity, dtype=np.float64)
    elif isinstance(spec.camera, Zoom):
        scales = (1.0 + spec.camera.rate) ** f
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        paths = center + scales[None, :, None] * (paths - center)
    return paths, scales


def generate_clip(spec: ClipSpec, rng: SeededRng | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Render ``spec``; returns ``(clip, trajectory, condition)``.

    The trajectory is the mean object position per frame, which equals the
    intensity centroid because every object carries the same mass.
    """
    n_frames, h, w, _ = spec.shape
    paths, scales = object_paths(spec)
    clip = np.zeros((n_frames, h, w), dtype=np.float64)
    for f in range(n_frames):
        stamp = _stamp(spec, scales[f])
        for k in range(spec.object_count):
            if not _splat(clip[f], stamp, paths[k, f]):
                raise TrajectoryError(
                    f"object {k} at frame {f} (position {tuple(np.round(paths[k, f], 3))}) "
                    f"leaves the {h}x{w} frame"
                )
    if spec.noise_std > 0:
        if rng is None:
            raise ValueError("noise_std > 0 needs an rng")
        clip += spec.noise_std * rng.normal(clip.shape)
    clip = np.clip(clip, 0.0, 1.0)
    return clip[..., None].astype(np.float32), paths.mean(axis=0), spec.category


# random specs for the suite


def _extent(spec_kwargs: dict) -> float:
    return BLOB_CUTOFF * spec_kwargs["blob_sigma"] if spec_kwargs["shape_kind"] == "gaussian_blob" else 0.5 * spec_kwargs["square_side"]


def _random_trajectory(rng: SeededRng, kind: str, h: int, w: int, margin: float) -> TrajectorySpec:
    u = lambda lo, hi: float(lo + (hi - lo) * rng.uniform())  # noqa: E731
    if kind == "linear":
        speed = u(0.6, 1.3)
        angle = u(0.0, 2 * np.pi)
        return Linear(
            start=(u(margin, h - 1 - margin), u(margin, w - 1 - margin)),
            velocity=(speed * math.sin(angle), speed * math.cos(angle)),
        )
    if kind == "circular":
        radius = u(2.0, 3.5)
        return Circular(
            center=(u(margin + radius, h - 1 - margin - radius), u(margin + radius, w - 1 - margin - radius)),
            radius=radius,
            angular_rate=u(0.35, 0.6) * (1 if rng.uniform() < 0.5 else -1),
            phase=u(0.0, 2 * np.pi),
        )
    angle = u(0.0, 2 * np.pi)
    speed = u(0.5, 1.0)
    return Sinusoidal(
        start=(u(margin, h - 1 - margin), u(margin, w - 1 - margin)),
        velocity=(0.3 * speed * math.sin(angle), speed * math.cos(angle)),
        amplitude=u(1.0, 2.0),
        period=u(5.0, 8.0),
    )


def random_clip_spec(
    motion_category: str, rng: SeededRng, shape=DEFAULT_SHAPE, shape_kind: str | None = None, max_tries: int = 500
) -> ClipSpec:
    """Draw a valid random spec of the given motion category (rejection sampling)."""
    if motion_category not in MOTION_CATEGORIES:
        raise ValueError(f"unknown motion category {motion_category!r}")
    n_frames, h, w, _ = shape
    if shape_kind is None:
        shape_kind = "gaussian_blob" if rng.uniform() < 0.5 else "square"
    base = dict(shape_kind=shape_kind, blob_sigma=0.8, square_side=4.0, shape=tuple(shape))
    margin = _extent(base) + 0.5
    for _ in range(max_tries):
        if motion_category == "single":
            kind = ("linear", "circular", "sinusoidal")[int(rng.integers(3))]
            trajs = (_random_trajectory(rng, kind, h, w, margin),)
            camera = None
        elif motion_category == "multi":
            trajs = tuple(
                _random_trajectory(rng, ("linear", "circular")[int(rng.integers(2))], h, w, margin)
                for _ in range(2)
            )
            camera = None
        else:
            # slow object plus a global camera move
            trajs = (
                Linear(
                    start=(margin + (h - 1 - 2 * margin) * float(rng.uniform()),
                           margin + (w - 1 - 2 * margin) * float(rng.uniform())),
                    velocity=tuple(float(v) for v in 0.3 * (rng.uniform(2) - 0.5)),
                ),
            )
            if rng.uniform() < 0.6:
                angle = float(2 * np.pi * rng.uniform())
                speed = float(0.6 + 0.6 * rng.uniform())
                camera = Pan((speed * math.sin(angle), speed * math.cos(angle)))
            else:
                camera = Zoom(float((0.04 + 0.04 * rng.uniform()) * (1 if rng.uniform() < 0.5 else -1)))
        spec = ClipSpec(trajectories=trajs, camera=camera, **base)
        if motion_category == "multi" and _min_separation(spec) < 2 * margin:
            continue
        try:
            generate_clip(spec)
        except TrajectoryError:
            continue
        return spec
    raise TrajectoryError(f"could not place a {motion_category} clip in {max_tries} tries")


def _min_separation(spec: ClipSpec) -> float:
    paths, _ = object_paths(spec)
    return float(np.min(np.linalg.norm(paths[0] - paths[1], axis=1)))


@dataclass
class SuiteConfig:
    counts: tuple[int, int, int] = DEFAULT_COUNTS
    shape: tuple[int, int, int, int] = DEFAULT_SHAPE
    seed: int = 0
    extra: dict = field(default_factory=dict)


MANIFEST_FIELDS = (
    "id",
    "category",
    "shape_kind",
    "label",
    "trajectory_kind",
    "camera_kind",
    "clip_path",
    "trajectory_path",
    "spec",
)


def suite_specs(counts=DEFAULT_COUNTS, rng: SeededRng | None = None, shape=DEFAULT_SHAPE) -> list[tuple[str, str, ClipSpec]]:
    """``(id, motion_category, spec)`` per clip; shape kinds alternate within each category."""
    if any(c < 1 for c in counts):
        raise ValueError(f"every category needs at least one clip, got {counts}")
    rng = rng or SeededRng(0)
    out = []
    for cat, n in zip(MOTION_CATEGORIES, counts):
        for i in range(n):
            clip_rng = rng.spawn(cat, i)
            kind = "gaussian_blob" if i % 2 == 0 else "square"
            out.append((f"{cat}_{i:04d}", cat, random_clip_spec(cat, clip_rng, shape, shape_kind=kind)))
    return out


def write_trajectory_csv(path, traj: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "row", "col"])
        for f, (r, c) in enumerate(traj):
            wr.writerow([f, repr(float(r)), repr(float(c))])


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([[float(r["row"]), float(r["col"])] for r in rows])


def generate_suite(out_dir, counts=DEFAULT_COUNTS, rng: SeededRng | None = None, shape=DEFAULT_SHAPE) -> Path:
    """Write clips, trajectories and ``manifest.csv`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "clips").mkdir(parents=True, exist_ok=True)
        (out / "trajectories").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rows = []
    for clip_id, cat, spec in suite_specs(counts, rng, shape):
        clip, traj, label = generate_clip(spec)
        clip_rel = f"clips/{clip_id}.msgt"
        traj_rel = f"trajectories/{clip_id}.csv"
        save_tensor(out / clip_rel, clip)
        write_trajectory_csv(out / traj_rel, traj)
        kinds = sorted({t.kind for t in spec.trajectories})
        rows.append(
            dict(
                id=clip_id,
                category=cat,
                shape_kind=spec.shape_kind,
                label=label,
                trajectory_kind="+".join(kinds),
                camera_kind=spec.camera.kind if spec.camera is not None else "none",
                clip_path=clip_rel,
                trajectory_path=traj_rel,
                spec=json.dumps(spec.to_dict(), sort_keys=True),
            )
        )
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_suite(manifest_path) -> tuple[list[dict], np.ndarray, np.ndarray, list[np.ndarray]]:
    """Returns ``(rows, clips, labels, trajectories)`` for a written suite."""
    from msgtransfer.videocore import load_tensor

    root = Path(manifest_path).parent
    rows = read_manifest(manifest_path)
    clips = np.stack([load_tensor(root / r["clip_path"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    trajs = [read_trajectory_csv(root / r["trajectory_path"]) for r in rows]
    return rows, clips, labels, trajs
