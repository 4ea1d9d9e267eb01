"""Grayscale rasterizer for mesh sequences.

Pinhole camera, flat Lambertian shading against a single directional
light, per-pixel depth buffer, constant mid-gray background.  Appearance
realism is deliberately out of scope: downstream analysis consumes the
temporal structure of the moving silhouette and shading, not texture.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import kernels
from .errors import ConfigError, IngestionError

BACKGROUND = 0.5
SHADE_FLOOR = 0.1  # darkest cloth shade; keeps cloth separable from black
NEAR_PLANE = 0.05  # m; triangles closer than this are culled
WORLD_UP = np.array([0.0, 0.0, 1.0])

_VOLUME_MAGIC = b"FVOL"
_VOLUME_VERSION = 1


@dataclass
class Camera:
    """Pinhole camera looking from `position` toward `look_at`, z-up world."""

    position: np.ndarray
    look_at: np.ndarray
    vertical_fov: float = np.deg2rad(50.0)  # radians
    image_size: tuple[int, int] = (224, 224)  # (H, W)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.look_at = np.asarray(self.look_at, dtype=float)
        if self.position.shape != (3,) or self.look_at.shape != (3,):
            raise ConfigError("camera position and look_at must be 3-vectors")
        if np.allclose(self.position, self.look_at):
            raise ConfigError("camera position must differ from look_at")
        if not 0 < self.vertical_fov < np.pi:
            raise ConfigError("vertical fov must be in (0, pi)")
        h, w = self.image_size
        if h < 32 or w < 32:
            raise ConfigError("image size must be at least 32x32")

    def basis(self):
        """Right-handed (right, up, forward) unit vectors."""
        forward = self.look_at - self.position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, WORLD_UP)
        n = np.linalg.norm(right)
        if n < 1e-12:  # looking straight up/down: fall back to world x
            right = np.array([1.0, 0.0, 0.0])
        else:
            right = right / n
        up = np.cross(right, forward)
        return right, up, forward


@dataclass
class VideoVolume:
    """Grayscale clip: frames in [0, 1], constant frame rate."""

    frames: np.ndarray  # (N_t, H, W) float64
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ConfigError("video volume must be (N_t, H, W) with N_t >= 1")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ConfigError("pixel values must lie in [0, 1]")

    @property
    def n_frames(self):
        return self.frames.shape[0]


def default_camera(image_size=(224, 224)) -> Camera:
    """Side-on view a few meters from the default flag, wind axis in-plane."""
    return Camera(
        position=np.array([0.75, -3.2, -0.55]),
        look_at=np.array([0.75, 0.0, -0.55]),
        vertical_fov=np.deg2rad(45.0),
        image_size=image_size,
    )


DEFAULT_LIGHT = np.array([0.45, -0.8, 0.4])


def _project(positions, cam: Camera):
    """Pixel coordinates, inverse view depth and in-front flags."""
    right, up, forward = cam.basis()
    rel = positions - cam.position
    x = rel @ right
    y = rel @ up
    z = rel @ forward
    h, w = cam.image_size
    focal = (h / 2.0) / np.tan(cam.vertical_fov / 2.0)
    in_front = z > NEAR_PLANE
    zsafe = np.where(in_front, z, 1.0)
    px = w / 2.0 + focal * x / zsafe
    py = h / 2.0 - focal * y / zsafe
    return np.column_stack([px, py]), 1.0 / zsafe, in_front


def _shades(positions, triangles, light_dir):
    light = np.asarray(light_dir, dtype=float)
    norm = np.linalg.norm(light)
    if norm == 0:
        raise ConfigError("light direction must be non-zero")
    light = light / norm
    a = positions[triangles[:, 0]]
    b = positions[triangles[:, 1]]
    c = positions[triangles[:, 2]]
    n = np.cross(b - a, c - a)
    lengths = np.linalg.norm(n, axis=1)
    lengths[lengths == 0] = 1.0
    cos = np.abs((n / lengths[:, None]) @ light)
    return SHADE_FLOOR + (1.0 - SHADE_FLOOR) * cos


def render_frame(mesh, cam: Camera, light_dir=DEFAULT_LIGHT) -> np.ndarray:
    """Rasterize one mesh state (any object with positions and triangles)."""
    return _render_positions(mesh.positions, mesh.triangles, cam, light_dir)


def _render_positions(positions, triangles, cam, light_dir):
    h, w = cam.image_size
    image = np.full((h, w), BACKGROUND)
    if len(triangles) == 0:
        return image
    xy, zinv, in_front = _project(positions, cam)
    valid = np.all(in_front[triangles], axis=1).astype(np.uint8)
    if not valid.any():
        return image
    shades = _shades(positions, triangles, light_dir)
    zbuffer = np.zeros((h, w))
    kernels.rasterize(
        image, zbuffer,
        np.ascontiguousarray(xy), np.ascontiguousarray(zinv),
        np.ascontiguousarray(triangles, dtype=np.int32),
        np.ascontiguousarray(shades), valid,
    )
    return image


def render_sequence(seq, cam: Camera, light_dir=DEFAULT_LIGHT) -> VideoVolume:
    """Rasterize every frame of a MeshSequence at fps = 1/dt."""
    if seq.n_frames < 1:
        raise ConfigError("empty mesh sequence")
    frames = np.empty((seq.n_frames, *cam.image_size))
    for f in range(seq.n_frames):
        frames[f] = _render_positions(
            seq.positions[f], seq.triangles, cam, light_dir
        )
    return VideoVolume(frames=frames, fps=1.0 / seq.dt)


# ---------------------------------------------------------------------------
# quantization and file formats

def to_uint8(frames):
    return np.clip(np.round(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image_u8):
    image_u8 = np.asarray(image_u8)
    if image_u8.dtype != np.uint8 or image_u8.ndim != 2:
        raise ConfigError("PGM writer expects a 2-D uint8 image")
    h, w = image_u8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image_u8.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise IngestionError(f"{path} is not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise IngestionError(f"{path}: expected 8-bit PGM, maxval {maxval}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=m.end())
    if pixels.size < h * w:
        raise IngestionError(f"{path}: truncated PGM payload")
    return pixels[: h * w].reshape(h, w)


def save_video_pgm(volume: VideoVolume, directory):
    """Directory of frame_%04d.pgm plus a one-line meta file (fps, count)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for f in range(volume.n_frames):
        write_pgm(directory / f"frame_{f:04d}.pgm", to_uint8(volume.frames[f]))
    (directory / "meta.txt").write_text(
        f"fps {volume.fps!r} count {volume.n_frames}\n"
    )


def load_video_pgm(directory) -> VideoVolume:
    directory = Path(directory)
    meta = directory / "meta.txt"
    if not meta.is_file():
        raise IngestionError(f"{directory} has no meta.txt")
    parts = meta.read_text().split()
    if len(parts) != 4 or parts[0] != "fps" or parts[2] != "count":
        raise IngestionError(f"{meta}: expected 'fps <value> count <n>'")
    try:
        fps, count = float(parts[1]), int(parts[3])
    except ValueError as exc:
        raise IngestionError(f"{meta}: {exc}") from exc
    paths = sorted(directory.glob("frame_*.pgm"))
    if len(paths) != count:
        raise IngestionError(
            f"{directory}: meta says {count} frames, found {len(paths)}"
        )
    frames = np.stack([read_pgm(p) for p in paths]).astype(float) / 255.0
    return VideoVolume(frames=frames, fps=fps)


def save_video_raw(volume: VideoVolume, path):
    """Single-file form: magic, version, counts, fps, then uint8 pixels."""
    import struct

    nt, h, w = volume.frames.shape
    with open(path, "wb") as fh:
        fh.write(_VOLUME_MAGIC)
        fh.write(struct.pack("<IIIId", _VOLUME_VERSION, nt, h, w, volume.fps))
        fh.write(to_uint8(volume.frames).tobytes())


def load_video_raw(path) -> VideoVolume:
    import struct

    raw = Path(path).read_bytes()
    head = struct.calcsize("<IIIId")
    if len(raw) < 4 + head or raw[:4] != _VOLUME_MAGIC:
        raise IngestionError(f"{path} is not a raw video volume")
    version, nt, h, w, fps = struct.unpack_from("<IIIId", raw, 4)
    if version != _VOLUME_VERSION:
        raise IngestionError(f"{path}: unsupported version {version}")
    if len(raw) != 4 + head + nt * h * w:
        raise IngestionError(f"{path}: truncated volume payload")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=4 + head)
    return VideoVolume(
        frames=pixels.reshape(nt, h, w).astype(float) / 255.0, fps=fps
    )
