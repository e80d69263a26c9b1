"""Synthetic multi-view scenes with exact ground truth, and dataset I/O.

Scenes are analytic surfaces (planes, a step, a sphere on a plane)
carrying a procedural 3-D texture.  Every view is rendered by casting
rays from its own camera and intersecting the surface, so ground-truth
depth and poses are exact by construction and all views are
photometrically consistent without any image resampling.  Rendering
supersamples 2x per axis and quantizes to 8-bit levels, which makes
save/load round trips bit-exact.

On-disk format (the dataset contract):
  <root>/manifest.txt   header "fx fy cx cy width height", then per
                        sample a "# sample <id>" marker followed by one
                        line per frame: image path, depth path or "-",
                        and 12 row-major [R|t] numbers (context pose is
                        context-from-reference; the reference row holds
                        the identity).  Other "#" lines are comments.
  <root>/images/*.png   8-bit RGB
  <root>/depths/*.png   16-bit grayscale, value = meters * 256, 0 = invalid
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from . import tensor as T
from .errors import (
    ConfigError,
    FormatError,
    GenerationError,
    IoError,
)
from .geometry import Intrinsics, Pose, parse_pose_line, pose_to_line, se3_exp, warp_coords

GEOMETRIES = ("fronto-parallel", "tilted", "two-plane-step", "sphere-on-plane")
MANIFEST = "manifest.txt"
MIN_OVERLAP = 0.8
MAX_RESAMPLES = 100
DEPTH_SCALE = 256.0  # stored integer = meters * 256


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for the synthetic generator; one spec describes a dataset."""

    seed: int = 0
    width: int = 64
    height: int = 64
    n_views: int = 2
    geometry: str = "mixed"      # one of GEOMETRIES, or "mixed"
    texture: str = "noise"
    max_rotation_deg: float = 5.0
    max_translation: float = 0.2
    depth_min: float = 2.0
    depth_max: float = 8.0
    noise_std: float = 0.0       # optional Gaussian pixel noise
    supersample: int = 2

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"extents too small: {self.width}x{self.height}")
        if self.n_views < 1:
            raise ConfigError("need at least one context view")
        if self.geometry not in GEOMETRIES + ("mixed",):
            raise ConfigError(f"unknown geometry {self.geometry!r}; "
                              f"choose from {GEOMETRIES + ('mixed',)}")
        if self.texture != "noise":
            raise ConfigError(f"unknown texture mode {self.texture!r}")
        if not 0.0 < self.depth_min < self.depth_max:
            raise ConfigError(
                f"need 0 < depth_min < depth_max, got "
                f"[{self.depth_min}, {self.depth_max}]")
        if not 0.0 <= self.max_rotation_deg <= 45.0:
            raise ConfigError("max_rotation_deg must be in [0, 45]")
        if self.max_translation < 0.0:
            raise ConfigError("max_translation must be >= 0")
        if self.noise_std < 0.0:
            raise ConfigError("noise_std must be >= 0")
        if self.supersample < 1:
            raise ConfigError("supersample must be >= 1")


@dataclass
class SceneSample:
    reference: np.ndarray              # (3,H,W) float32 in [0,1]
    contexts: list                     # N arrays like reference
    intrinsics: Intrinsics
    gt_depth: Optional[np.ndarray]     # (1,H,W) float32, reference camera
    gt_poses: Optional[list]           # N Poses, context-from-reference
    sample_id: str = "s0000"

    def __post_init__(self):
        for c in self.contexts:
            if c.shape != self.reference.shape:
                raise FormatError(
                    f"context shape {c.shape} != reference "
                    f"{self.reference.shape} in sample {self.sample_id}")
        if self.gt_poses is not None and len(self.gt_poses) != len(self.contexts):
            raise FormatError(
                f"{len(self.gt_poses)} poses for {len(self.contexts)} "
                f"contexts in sample {self.sample_id}")


def default_intrinsics(width: int, height: int) -> Intrinsics:
    """Pinhole with focal = width (about 53 degrees horizontal FOV) and the
    principal point on the half-integer image center."""
    return Intrinsics(fx=float(width), fy=float(width),
                      cx=width / 2.0 - 0.5, cy=height / 2.0 - 0.5,
                      width=width, height=height)


# -- procedural texture -------------------------------------------------------


def _hash01(ix, iy, iz, salt: int):
    """Deterministic lattice hash -> float64 in [0, 1)."""
    h = (ix.astype(np.uint32) * np.uint32(0x9E3779B1)
         ^ iy.astype(np.uint32) * np.uint32(0x85EBCA77)
         ^ iz.astype(np.uint32) * np.uint32(0xC2B2AE3D)
         ^ np.uint32(salt & 0xFFFFFFFF))
    h ^= h >> np.uint32(15)
    h *= np.uint32(0x2C1B3C6D)
    h ^= h >> np.uint32(12)
    h *= np.uint32(0x297A2D39)
    h ^= h >> np.uint32(15)
    return h.astype(np.float64) / 4294967296.0


def _value_noise(points: np.ndarray, salt: int) -> np.ndarray:
    """Trilinearly interpolated lattice noise with a quintic fade (C2)."""
    base = np.floor(points)
    f = points - base
    u = f * f * f * (f * (f * 6.0 - 15.0) + 10.0)
    ib = base.astype(np.int64)
    out = np.zeros(points.shape[1:], dtype=np.float64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = _hash01(ib[0] + dx, ib[1] + dy, ib[2] + dz, salt)
                wx = u[0] if dx else 1.0 - u[0]
                wy = u[1] if dy else 1.0 - u[1]
                wz = u[2] if dz else 1.0 - u[2]
                out += corner * wx * wy * wz
    return out


def _fbm(points: np.ndarray, base_scale: float, salt: int,
         octaves: int = 3) -> np.ndarray:
    """Multi-octave value noise, normalized to [0, 1]."""
    total = np.zeros(points.shape[1:], dtype=np.float64)
    norm = 0.0
    for o in range(octaves):
        amp = 0.5**o
        freq = (2.0**o) / base_scale
        total += amp * _value_noise(points * freq + 31.7 * o, salt + o)
        norm += amp
    return total / norm


@dataclass(frozen=True)
class _Texture:
    salt1: int
    salt2: int
    base_scale: float
    base: np.ndarray      # (3,)
    w_noise: np.ndarray   # (3,)
    w_mix: np.ndarray     # (3,)
    grad: np.ndarray      # (3,3): per-channel world-space gradient


def _sample_texture(rng) -> _Texture:
    return _Texture(
        salt1=int(rng.integers(0, 2**32)),
        salt2=int(rng.integers(0, 2**32)),
        base_scale=float(rng.uniform(0.5, 1.0)),
        base=rng.uniform(0.35, 0.65, 3),
        w_noise=rng.uniform(0.35, 0.65, 3) * rng.choice([-1.0, 1.0], 3),
        w_mix=rng.uniform(0.15, 0.35, 3) * rng.choice([-1.0, 1.0], 3),
        grad=rng.uniform(-0.04, 0.04, (3, 3)),
    )


def _shade(tex: _Texture, points: np.ndarray) -> np.ndarray:
    """Color (3,...) in [0,1] for world points (3,...)."""
    f1 = _fbm(points, tex.base_scale, tex.salt1)
    f2 = _fbm(points, tex.base_scale * 2.3, tex.salt2)
    out = np.empty((3,) + points.shape[1:], dtype=np.float64)
    for k in range(3):
        ramp = np.tensordot(tex.grad[k], points, axes=(0, 0))
        out[k] = (tex.base[k] + 0.8 * tex.w_noise[k] * (f1 - 0.5)
                  + 0.8 * tex.w_mix[k] * (f2 - 0.5) + ramp)
    return np.clip(out, 0.0, 1.0)


# -- analytic geometry ---------------------------------------------------------


@dataclass(frozen=True)
class _Scene:
    kind: str
    params: dict
    texture: _Texture


def _intersect(scene: _Scene, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter s (== z-depth in the casting camera when the rotated
    ray keeps unit z in that camera) for origin (3,) and dirs (3,...)."""
    p = scene.params
    ox, oy, oz = origin
    dx, dy, dz = dirs[0], dirs[1], dirs[2]
    inf = np.inf

    def plane_hit(depth):
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (depth - oz) / dz
        return np.where((dz > 1e-12) & (s > 0), s, inf)

    if scene.kind == "fronto-parallel":
        return plane_hit(p["d0"])

    if scene.kind == "tilted":
        n = p["normal"]
        denom = n[0] * dx + n[1] * dy + n[2] * dz
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (p["offset"] - (n[0] * ox + n[1] * oy + n[2] * oz)) / denom
        return np.where((np.abs(denom) > 1e-12) & (s > 0), s, inf)

    if scene.kind == "two-plane-step":
        d_near, d_far = p["d_near"], p["d_far"]
        x0, side = p["x0"], p["side"]  # near region: side*x <= side*x0
        s_near = plane_hit(d_near)
        s_far = plane_hit(d_far)
        x_near = ox + s_near * dx
        x_far = ox + s_far * dx
        s_near = np.where(side * x_near <= side * x0, s_near, inf)
        s_far = np.where(side * x_far >= side * x0, s_far, inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_face = (x0 - ox) / dx
        z_face = oz + s_face * dz
        face_ok = ((np.abs(dx) > 1e-12) & (s_face > 0)
                   & (z_face >= d_near) & (z_face <= d_far))
        s_face = np.where(face_ok, s_face, inf)
        return np.minimum(np.minimum(s_near, s_far), s_face)

    if scene.kind == "sphere-on-plane":
        s_plane = plane_hit(p["d_plane"])
        c = p["center"]
        r = p["radius"]
        ocx, ocy, ocz = ox - c[0], oy - c[1], oz - c[2]
        a = dx * dx + dy * dy + dz * dz
        b = 2.0 * (dx * ocx + dy * ocy + dz * ocz)
        c0 = ocx * ocx + ocy * ocy + ocz * ocz - r * r
        disc = b * b - 4.0 * a * c0
        with np.errstate(invalid="ignore"):
            root = np.sqrt(np.maximum(disc, 0.0))
            s_sphere = (-b - root) / (2.0 * a)
        s_sphere = np.where((disc >= 0) & (s_sphere > 0), s_sphere, inf)
        return np.minimum(s_plane, s_sphere)

    raise ConfigError(f"unknown geometry kind {scene.kind!r}")


def _sample_scene(spec: SceneSpec, rng) -> _Scene:
    """Draw geometry parameters until the reference depth map honors the
    configured bounds (analytic margins make failures rare)."""
    lo, hi = spec.depth_min, spec.depth_max
    span = hi - lo
    kind = spec.geometry
    intr = default_intrinsics(spec.width, spec.height)
    for _ in range(MAX_RESAMPLES):
        k = str(rng.choice(GEOMETRIES)) if kind == "mixed" else kind
        if k == "fronto-parallel":
            params = {"d0": float(rng.uniform(lo + 0.1 * span, hi - 0.1 * span))}
        elif k == "tilted":
            tilt = rng.uniform(np.radians(5.0), np.radians(18.0))
            az = rng.uniform(0.0, 2.0 * np.pi)
            n = np.array([np.sin(tilt) * np.cos(az),
                          np.sin(tilt) * np.sin(az), np.cos(tilt)])
            dc = float(rng.uniform(lo + 0.3 * span, hi - 0.3 * span))
            params = {"normal": n, "offset": float(n[2] * dc)}
        elif k == "two-plane-step":
            d_near = float(rng.uniform(lo + 0.1 * span, lo + 0.4 * span))
            d_far = float(rng.uniform(hi - 0.4 * span, hi - 0.1 * span))
            params = {"d_near": d_near, "d_far": d_far,
                      "x0": float(rng.uniform(-0.25, 0.25) * d_near),
                      "side": float(rng.choice([-1.0, 1.0]))}
        else:  # sphere-on-plane
            d_plane = float(rng.uniform(lo + 0.55 * span, hi - 0.1 * span))
            rad_px = rng.uniform(0.15, 0.3) * spec.height
            cz = float(rng.uniform(lo + 0.25 * span, d_plane - 0.1 * span))
            radius = float(min(rad_px * cz / intr.fy, 0.45 * (cz - lo)))
            lateral = 0.2 * cz * spec.width / (2.0 * intr.fx)
            center = np.array([rng.uniform(-lateral, lateral),
                               rng.uniform(-lateral, lateral), cz])
            params = {"d_plane": d_plane, "center": center, "radius": radius}
        scene = _Scene(kind=k, params=params, texture=_sample_texture(rng))
        depth = _reference_depth(scene, intr)
        if np.isfinite(depth).all() and depth.min() >= lo and depth.max() <= hi:
            return scene
    raise GenerationError(
        f"no {kind!r} geometry satisfied depth bounds [{lo}, {hi}] after "
        f"{MAX_RESAMPLES} attempts")


def _camera_rays(intr: Intrinsics, pose: Pose, supersample: int):
    """Ray origin (3,) and directions (3,h,w) in the scene (reference)
    frame for the camera at `pose` (context-from-reference), sampled on a
    supersampled pixel grid.  Directions keep unit z in the camera frame,
    so the ray parameter equals that camera's z-depth."""
    f = supersample
    us = (np.arange(intr.width * f, dtype=np.float64) + 0.5) / f - 0.5
    vs = (np.arange(intr.height * f, dtype=np.float64) + 0.5) / f - 0.5
    uu, vv = np.meshgrid(us, vs)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                      np.ones_like(uu)])
    rt = pose.rotation.T
    d_ref = np.tensordot(rt, d_cam, axes=(1, 0))
    origin = -rt @ pose.translation
    return origin, d_ref


def _reference_depth(scene: _Scene, intr: Intrinsics) -> np.ndarray:
    """Exact z-depth map (1,H,W) float64 for the reference camera."""
    origin, dirs = _camera_rays(intr, Pose.identity(), supersample=1)
    return _intersect(scene, origin, dirs)[None]


def _render(scene: _Scene, intr: Intrinsics, pose: Pose, spec: SceneSpec,
            rng) -> np.ndarray:
    """Render the camera at `pose`: cast rays, shade the hit points,
    box-average the supersampled grid, add optional noise, quantize."""
    f = spec.supersample
    origin, dirs = _camera_rays(intr, pose, f)
    s = _intersect(scene, origin, dirs)
    if not np.isfinite(s).all():
        raise GenerationError(
            f"a {scene.kind!r} render had rays that miss the surface")
    points = origin[:, None, None] + s * dirs
    colors = _shade(scene.texture, points)
    img = colors.reshape(3, intr.height, f, intr.width, f).mean(axis=(2, 4))
    if spec.noise_std > 0.0:
        img = np.clip(img + rng.normal(0.0, spec.noise_std, img.shape), 0.0, 1.0)
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def _sample_pose(spec: SceneSpec, rng) -> Pose:
    axis = rng.normal(size=3)
    norm = np.linalg.norm(axis)
    axis = axis / norm if norm > 1e-12 else np.array([0.0, 0.0, 1.0])
    angle = rng.uniform(0.0, np.radians(spec.max_rotation_deg))
    tdir = rng.normal(size=3)
    tnorm = np.linalg.norm(tdir)
    tdir = tdir / tnorm if tnorm > 1e-12 else np.array([1.0, 0.0, 0.0])
    tmag = rng.uniform(0.0, spec.max_translation)
    rot = se3_exp(np.concatenate([axis * angle, np.zeros(3)])).rotation
    return Pose(rot, tdir * tmag)


def _overlap_fraction(gt_depth: np.ndarray, pose: Pose, intr: Intrinsics) -> float:
    with T.no_grad():
        _, valid = warp_coords(gt_depth.astype(np.float64), pose, intr)
    return float(valid.mean())


def generate_scene(spec: SceneSpec, rng, sample_id: str = "s0000") -> SceneSample:
    """One textured surface, one reference render, n_views context renders
    whose poses are resampled until each view overlaps >= 80%."""
    intr = default_intrinsics(spec.width, spec.height)
    scene = _sample_scene(spec, rng)
    gt_depth64 = _reference_depth(scene, intr)
    reference = _render(scene, intr, Pose.identity(), spec, rng)
    contexts, poses = [], []
    for _ in range(spec.n_views):
        for _ in range(MAX_RESAMPLES):
            pose = _sample_pose(spec, rng)
            if _overlap_fraction(gt_depth64, pose, intr) >= MIN_OVERLAP:
                break
        else:
            raise GenerationError(
                f"could not reach {MIN_OVERLAP:.0%} view overlap within "
                f"{MAX_RESAMPLES} pose draws (motion bounds too large for "
                f"the depth range?)")
        contexts.append(_render(scene, intr, pose, spec, rng))
        poses.append(pose)
    return SceneSample(reference=reference, contexts=contexts, intrinsics=intr,
                       gt_depth=gt_depth64.astype(np.float32), gt_poses=poses,
                       sample_id=sample_id)


def generate_dataset(spec: SceneSpec, count: int,
                     start_index: int = 0) -> Iterator[SceneSample]:
    """Deterministic sample stream: sample k draws from its own rng seeded
    by (spec.seed, k), so workers can generate disjoint ranges in parallel."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    for k in range(start_index, start_index + count):
        rng = np.random.default_rng([spec.seed, k])
        yield generate_scene(spec, rng, sample_id=f"s{k:05d}")


# -- on-disk format ------------------------------------------------------------


def encode_depth(depth: np.ndarray) -> np.ndarray:
    """meters -> uint16 with 1/256 m resolution; 0 stays 0 (invalid)."""
    return np.clip(np.round(np.asarray(depth, np.float64) * DEPTH_SCALE),
                   0, 65535).astype(np.uint16)


def decode_depth(raw: np.ndarray) -> np.ndarray:
    return (np.asarray(raw, np.float64) / DEPTH_SCALE).astype(np.float32)


def _write_image(path: str, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def _read_image(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise IoError(f"missing image file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise IoError(f"unreadable image file {path}: {exc}") from exc
    if img.mode != "RGB":
        raise FormatError(f"{path}: expected an 8-bit RGB file, got {img.mode}")
    arr = np.asarray(img, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def _write_depth(path: str, depth: np.ndarray) -> None:
    Image.fromarray(encode_depth(depth[0])).save(path)


# standalone depth files (inference outputs) use the same 16-bit encoding
def write_depth(path: str, depth: np.ndarray) -> None:
    """Write a (1,H,W) metric depth map as a 16-bit PNG (meters x 256)."""
    _write_depth(path, depth)


def read_depth(path: str) -> np.ndarray:
    """Read a 16-bit depth PNG back as a (1,H,W) float32 map in meters."""
    return _read_depth(path)


def _read_depth(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise IoError(f"missing depth file: {path}")
    try:
        img = Image.open(path)
        img.load()
    except OSError as exc:
        raise IoError(f"unreadable depth file {path}: {exc}") from exc
    if img.mode not in ("I;16", "I"):
        raise FormatError(f"{path}: expected a 16-bit depth file, got {img.mode}")
    return decode_depth(np.asarray(img))[None]


def _header_line(intr: Intrinsics) -> str:
    return (f"{intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} "
            f"{intr.width} {intr.height}")


def _parse_header(line: str, path: str) -> Intrinsics:
    parts = line.split()
    if len(parts) != 6:
        raise FormatError(
            f"{path}: header must be 'fx fy cx cy width height', got {line!r}")
    try:
        fx, fy, cx, cy = (float(p) for p in parts[:4])
        w, h = int(parts[4]), int(parts[5])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {line!r}: {exc}") from exc
    return Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


def init_dataset_dir(root: str, intr: Intrinsics,
                     comments: Optional[list] = None) -> None:
    """Create the directory skeleton and a fresh manifest header."""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "depths"), exist_ok=True)
    lines = [_header_line(intr)]
    lines += [f"# {c}" for c in (comments or [])]
    with open(os.path.join(root, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_sample(sample: SceneSample, root: str) -> None:
    """Write one sample's files and append its frames to the manifest,
    creating the dataset skeleton on first use.  The manifest header must
    agree with the sample's intrinsics."""
    mpath = os.path.join(root, MANIFEST)
    if not os.path.exists(mpath):
        init_dataset_dir(root, sample.intrinsics)
    else:
        with open(mpath) as fh:
            existing = _parse_header(fh.readline().strip(), mpath)
        if existing != sample.intrinsics:
            raise FormatError(
                f"{mpath}: header intrinsics {existing} do not match the "
                f"sample's {sample.intrinsics}")
    os.makedirs(os.path.join(root, "images"), exist_ok=True)

    sid = sample.sample_id
    lines = [f"# sample {sid}"]

    ref_rel = f"images/{sid}_ref.png"
    _write_image(os.path.join(root, ref_rel), sample.reference)
    if sample.gt_depth is not None:
        os.makedirs(os.path.join(root, "depths"), exist_ok=True)
        depth_rel = f"depths/{sid}_ref.png"
        _write_depth(os.path.join(root, depth_rel), sample.gt_depth)
    else:
        depth_rel = "-"
    lines.append(f"{ref_rel} {depth_rel} {pose_to_line(Pose.identity())}")

    for i, ctx in enumerate(sample.contexts):
        ctx_rel = f"images/{sid}_ctx{i}.png"
        _write_image(os.path.join(root, ctx_rel), ctx)
        if sample.gt_poses is not None:
            pose_text = pose_to_line(sample.gt_poses[i])
        else:
            pose_text = "-"
        lines.append(f"{ctx_rel} - {pose_text}")

    with open(mpath, "a") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_frame_line(line: str, path: str):
    parts = line.split()
    if len(parts) == 3 and parts[2] == "-":
        return parts[0], parts[1], None
    if len(parts) != 14:
        raise FormatError(
            f"{path}: frame line needs 'image depth <12 pose numbers>' or "
            f"'image depth -', got {line!r}")
    try:
        pose = parse_pose_line(" ".join(parts[2:]))
    except ValueError as exc:
        raise FormatError(f"{path}: bad pose numbers in {line!r}: {exc}") from exc
    return parts[0], parts[1], pose


def _build_sample(root: str, intr: Intrinsics, sid: str, frames: list,
                  mpath: str) -> SceneSample:
    if len(frames) < 2:
        raise FormatError(
            f"{mpath}: sample {sid!r} needs a reference and at least one "
            f"context frame, got {len(frames)} line(s)")

    def read_frame_image(rel: str) -> np.ndarray:
        img = _read_image(os.path.join(root, rel))
        if img.shape[1:] != (intr.height, intr.width):
            raise FormatError(
                f"{rel}: image is {img.shape[2]}x{img.shape[1]} but the "
                f"manifest header says {intr.width}x{intr.height}")
        return img

    ref_rel, ref_depth_rel, _ = frames[0]
    reference = read_frame_image(ref_rel)
    gt_depth = None
    if ref_depth_rel != "-":
        gt_depth = _read_depth(os.path.join(root, ref_depth_rel))
        if gt_depth.shape[1:] != (intr.height, intr.width):
            raise FormatError(
                f"{ref_depth_rel}: depth extents do not match the header")

    contexts, poses = [], []
    for rel, _, pose in frames[1:]:
        contexts.append(read_frame_image(rel))
        poses.append(pose)
    gt_poses = None if any(p is None for p in poses) else poses
    return SceneSample(reference=reference, contexts=contexts, intrinsics=intr,
                       gt_depth=gt_depth, gt_poses=gt_poses, sample_id=sid)


def load_sequence(root: str) -> list:
    """Read every sample under `root` (see the module docstring for the
    format).  Returns a list so callers can shuffle across epochs."""
    mpath = os.path.join(root, MANIFEST)
    if not os.path.exists(mpath):
        raise IoError(f"missing manifest: {mpath}")
    with open(mpath) as fh:
        raw = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in raw if ln.strip()]
    if not lines:
        raise FormatError(f"{mpath}: empty manifest")
    intr = _parse_header(lines[0], mpath)

    samples = []
    sid = None
    frames: list = []

    def flush():
        if sid is not None:
            samples.append(_build_sample(root, intr, sid, frames, mpath))

    for line in lines[1:]:
        stripped = line.strip()
        if stripped.startswith("#"):
            tokens = stripped[1:].split()
            if tokens and tokens[0] == "sample":
                if len(tokens) < 2:
                    raise FormatError(f"{mpath}: '# sample' marker without an id")
                flush()
                sid = tokens[1]
                frames = []
            continue
        if sid is None:
            raise FormatError(
                f"{mpath}: frame line before any '# sample' marker: {stripped!r}")
        frames.append(_parse_frame_line(stripped, mpath))
    flush()
    if not samples:
        raise FormatError(f"{mpath}: manifest declares no samples")
    return samples
