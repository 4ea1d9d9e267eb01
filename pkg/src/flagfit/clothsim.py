"""Mass-spring flag simulation.

A rectangular flag is discretized as a regular grid of point masses in
the x-z plane (x along the wind, z up, y toward the camera), pinned
along its left column (the hoist edge).  Each grid cell is split into
two triangles; edges carry linear stretch springs, interior edges carry
dihedral-angle bending hinges whose stiffness is direction-dependent and
piecewise-linear in the fold amplitude.  External forcing is gravity
plus Stokes drag toward a constant wind field along +x.  Integration is
semi-implicit Euler with enough substeps to keep the stiffest admissible
spring stable.

The inner loops live in the selected kernel backend (compiled or NumPy);
this module owns mesh construction, configuration, error reporting and
serialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import kernels
from .errors import ConfigError, IngestionError, InstabilityError, NumericalError
from .params import ALPHA_SAMPLES, AREA_WEIGHT_RANGE, ParameterVector

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)

# Semi-implicit Euler is stable for dt < 2/omega; divide by this margin.
STABILITY_SAFETY = 5.0

_MESHSEQ_MAGIC = b"FSEQ"
_MESHSEQ_VERSION = 1

# Hinge direction codes index rows of the bending table.  A hinge's
# direction is the direction of the curvature it resists, i.e. the
# in-plane perpendicular of its edge: vertical rest edges fold the cloth
# along x (warp), horizontal rest edges fold it along z (weft), diagonal
# edges use the bias curve.
DIR_WARP, DIR_WEFT, DIR_BIAS = 0, 1, 2


@dataclass
class SimConfig:
    """Simulation settings; defaults give a 1.5 m x 1.0 m flag at 25 fps."""

    grid_nx: int = 45
    grid_ny: int = 30
    flag_width: float = 1.5
    flag_height: float = 1.0
    dt_output: float = 0.04
    substeps: int | None = None  # None: smallest stable count
    n_frames: int = 60
    damping: float = 0.5  # 1/s, velocity damping
    gravity: tuple[float, float, float] = GRAVITY_DEFAULT
    # Stokes drag gamma = 6*pi*R*eta.  R is an effective coupling radius
    # for the fabric patch a vertex represents, not a literal sphere; the
    # default is tuned so wind and gravity compete at flag scale.
    drag_radius: float = 0.6
    air_viscosity: float = 1.81e-5  # Pa*s, air at room temperature
    stretch_stiffness: float = 60.0  # N/m, fixed (not searched)

    def __post_init__(self):
        if self.grid_nx < 2 or self.grid_ny < 2:
            raise ConfigError("grid must be at least 2x2 vertices")
        if self.flag_width <= 0 or self.flag_height <= 0:
            raise ConfigError("flag dimensions must be positive")
        if abs(self.flag_height / self.flag_width - 2.0 / 3.0) > 1e-9:
            raise ConfigError(
                f"flag aspect must be 2:3 (height:width), got "
                f"{self.flag_height}:{self.flag_width}"
            )
        if self.dt_output <= 0:
            raise ConfigError("dt_output must be positive")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be at least 1")
        if self.damping < 0:
            raise ConfigError("damping must be non-negative")
        if self.stretch_stiffness < 0 or self.drag_radius < 0 or self.air_viscosity < 0:
            raise ConfigError("stiffness and drag constants must be non-negative")
        if self.substeps is not None and self.substeps < 1:
            raise ConfigError("substeps must be at least 1")

    def drag_coefficient(self):
        """Stokes coefficient gamma in F = gamma * (v_wind - v)."""
        return 6.0 * np.pi * self.drag_radius * self.air_viscosity

    def max_stable_dt(self):
        """Largest stable substep for the stiffest admissible material.

        The lightest admissible fabric gives the smallest vertex mass and
        the highest spring frequency omega = sqrt(2 k_s / m); the substep
        must stay below 2/omega by the safety margin.
        """
        if self.stretch_stiffness == 0:
            return np.inf
        m_min = AREA_WEIGHT_RANGE[0] * self.flag_width * self.flag_height \
            / (self.grid_nx * self.grid_ny)
        omega = np.sqrt(2.0 * self.stretch_stiffness / m_min)
        return 2.0 / (STABILITY_SAFETY * omega)

    def resolved_substeps(self):
        limit = self.max_stable_dt()
        if self.substeps is None:
            if not np.isfinite(limit):
                return 1
            return max(1, int(np.ceil(self.dt_output / limit)))
        if self.dt_output / self.substeps > limit * (1 + 1e-12):
            raise ConfigError(
                f"substeps={self.substeps} gives dt={self.dt_output / self.substeps:.3e} s, "
                f"unstable for the stiffest admissible material (limit {limit:.3e} s)"
            )
        return self.substeps


@dataclass
class ClothMesh:
    """Flag state plus the fixed topology the kernels consume.

    positions/velocities are mutated by integration; everything else is
    construction-time constant.  `copy()` clones the state and shares the
    topology arrays.
    """

    positions: np.ndarray  # (N, 3) float64, m
    velocities: np.ndarray  # (N, 3) float64, m/s
    triangles: np.ndarray  # (T, 3) int32
    edges: np.ndarray  # (E, 2) int32
    rest_lengths: np.ndarray  # (E,) float64
    vertex_mass: np.ndarray  # (N,) float64, kg
    pinned: np.ndarray  # sorted vertex indices, int32
    stretch_stiffness: float
    hinges: np.ndarray  # (H, 4) int32: x1, x2 opposite; x3 -> x4 edge
    hinge_dir: np.ndarray  # (H,) int32 direction codes
    hinge_rest_sum_n: np.ndarray  # (H,) |N1| + |N2| at rest
    hinge_rest_edge: np.ndarray  # (H,) rest edge length
    hinge_tris: np.ndarray  # (H, 2) int32 triangle ids, for error messages
    pinned_mask: np.ndarray = field(default=None)  # (N,) bool, derived

    def __post_init__(self):
        if self.pinned_mask is None:
            mask = np.zeros(len(self.positions), dtype=bool)
            mask[self.pinned] = True
            self.pinned_mask = mask

    @property
    def n_vertices(self):
        return len(self.positions)

    def copy(self):
        new = ClothMesh.__new__(ClothMesh)
        new.__dict__.update(self.__dict__)
        new.positions = self.positions.copy()
        new.velocities = self.velocities.copy()
        return new


@dataclass
class MeshSequence:
    """Positions per output frame at uniform dt, with constant topology."""

    positions: np.ndarray  # (F, N, 3) float64
    dt: float
    triangles: np.ndarray  # (T, 3) int32
    velocities: np.ndarray | None = None  # (F, N, 3), absent for loaded files
    vertex_mass: np.ndarray | None = None

    @property
    def n_frames(self):
        return len(self.positions)


def _triangulate(nx, ny):
    """Two triangles per grid cell, consistent winding (+y rest normals)."""
    tris = np.empty((2 * (nx - 1) * (ny - 1), 3), dtype=np.int32)
    t = 0
    for j in range(ny - 1):
        for i in range(nx - 1):
            v00 = j * nx + i
            v10 = v00 + 1
            v01 = v00 + nx
            v11 = v01 + 1
            tris[t] = (v00, v10, v11)
            tris[t + 1] = (v00, v11, v01)
            t += 2
    return tris


def _edges_and_hinges(triangles):
    """Unique edges plus a hinge for every edge shared by two triangles.

    Hinge layout: x3 -> x4 is the shared edge as wound in the first
    (lower-index) triangle; x1/x2 are the opposite vertices of the first
    and second triangle.
    """
    seen = {}
    for t, (a, b, c) in enumerate(triangles):
        for va, vb, opp in ((a, b, c), (b, c, a), (c, a, b)):
            key = (min(va, vb), max(va, vb))
            seen.setdefault(key, []).append((t, int(va), int(vb), int(opp)))

    edges = np.array(sorted(seen.keys()), dtype=np.int32).reshape(-1, 2)
    hinges, hinge_tris = [], []
    for key in sorted(seen.keys()):
        users = seen[key]
        if len(users) == 1:
            continue
        if len(users) > 2:
            raise ConfigError(f"non-manifold edge {key} shared by {len(users)} triangles")
        (t1, va, vb, opp1), (t2, _, _, opp2) = sorted(users)
        hinges.append((opp1, opp2, va, vb))
        hinge_tris.append((t1, t2))
    return (
        edges,
        np.array(hinges, dtype=np.int32).reshape(-1, 4),
        np.array(hinge_tris, dtype=np.int32).reshape(-1, 2),
    )


def _rest_hinge_geometry(positions, hinges):
    x1 = positions[hinges[:, 0]]
    x2 = positions[hinges[:, 1]]
    x3 = positions[hinges[:, 2]]
    x4 = positions[hinges[:, 3]]
    n1 = np.cross(x1 - x3, x1 - x4)
    n2 = np.cross(x2 - x4, x2 - x3)
    sum_n = np.linalg.norm(n1, axis=1) + np.linalg.norm(n2, axis=1)
    edge = np.linalg.norm(x4 - x3, axis=1)
    return sum_n, edge


def _classify_hinges(positions, hinges):
    d = positions[hinges[:, 3]] - positions[hinges[:, 2]]
    vertical = np.abs(d[:, 0]) < 1e-12
    horizontal = np.abs(d[:, 2]) < 1e-12
    out = np.full(len(hinges), DIR_BIAS, dtype=np.int32)
    out[vertical] = DIR_WARP
    out[horizontal] = DIR_WEFT
    return out


def build_flag_mesh(cfg: SimConfig, p: ParameterVector) -> ClothMesh:
    """Planar rest-state flag hanging from its pinned left (hoist) column.

    Vertex (i, j) sits at (i*dx, 0, -j*dz); total mass is spread uniformly
    so it equals area_weight times the flag area exactly.
    """
    if np.any(p.bending < 0):
        raise ConfigError("bending stiffness samples must be non-negative")
    if p.area_weight <= 0:
        raise ConfigError("area weight must be positive")
    nx, ny = cfg.grid_nx, cfg.grid_ny
    xs = np.linspace(0.0, cfg.flag_width, nx)
    zs = np.linspace(0.0, -cfg.flag_height, ny)
    gx, gz = np.meshgrid(xs, zs)  # row j, column i
    positions = np.column_stack(
        [gx.ravel(), np.zeros(nx * ny), gz.ravel()]
    ).astype(np.float64)

    triangles = _triangulate(nx, ny)
    edges, hinges, hinge_tris = _edges_and_hinges(triangles)
    rest_lengths = np.linalg.norm(
        positions[edges[:, 1]] - positions[edges[:, 0]], axis=1
    )
    rest_sum_n, rest_edge = _rest_hinge_geometry(positions, hinges)
    hinge_dir = _classify_hinges(positions, hinges)

    total_mass = p.area_weight * cfg.flag_width * cfg.flag_height
    vertex_mass = np.full(nx * ny, total_mass / (nx * ny))
    pinned = (np.arange(ny, dtype=np.int32) * nx).astype(np.int32)

    return ClothMesh(
        positions=np.ascontiguousarray(positions),
        velocities=np.zeros((nx * ny, 3)),
        triangles=triangles,
        edges=np.ascontiguousarray(edges),
        rest_lengths=rest_lengths,
        vertex_mass=vertex_mass,
        pinned=pinned,
        stretch_stiffness=cfg.stretch_stiffness,
        hinges=np.ascontiguousarray(hinges),
        hinge_dir=hinge_dir,
        hinge_rest_sum_n=rest_sum_n,
        hinge_rest_edge=rest_edge,
        hinge_tris=hinge_tris,
    )


def _raise_degenerate(mesh, hinge_idx):
    t1, t2 = mesh.hinge_tris[hinge_idx]
    raise NumericalError(
        f"degenerate triangle pair at hinge {hinge_idx} "
        f"(triangles {t1} and {t2} lost their area)"
    )


def bending_force(mesh: ClothMesh, p: ParameterVector) -> np.ndarray:
    forces = np.zeros_like(mesh.positions)
    rc = kernels.add_bending_forces(
        forces, mesh.positions, mesh.hinges, mesh.hinge_dir,
        mesh.hinge_rest_sum_n, np.ascontiguousarray(p.bending_table()),
    )
    if rc >= 0:
        _raise_degenerate(mesh, rc)
    return forces


def stretch_force(mesh: ClothMesh) -> np.ndarray:
    forces = np.zeros_like(mesh.positions)
    kernels.add_stretch_forces(
        forces, mesh.positions, mesh.edges, mesh.rest_lengths,
        mesh.stretch_stiffness,
    )
    return forces


def wind_velocity(p: ParameterVector) -> np.ndarray:
    return np.array([p.wind_speed, 0.0, 0.0])


def external_forces(mesh: ClothMesh, p: ParameterVector, cfg: SimConfig) -> np.ndarray:
    forces = np.zeros_like(mesh.positions)
    kernels.add_external_forces(
        forces, mesh.velocities, mesh.vertex_mass,
        np.asarray(cfg.gravity, dtype=np.float64), wind_velocity(p),
        cfg.drag_coefficient(),
    )
    return forces


# A flag-scale mesh whose coordinates leave this radius has diverged;
# degenerate-geometry reports beyond it are blamed on instability.
_DIVERGENCE_RADIUS = 1e6


def _diverged(mesh):
    return not np.all(np.isfinite(mesh.positions)) or \
        float(np.abs(mesh.positions).max()) > _DIVERGENCE_RADIUS


def _integrate_inplace(mesh, p, cfg, dt, n_substeps, step_index):
    rc = kernels.integrate(
        mesh.positions, mesh.velocities, mesh.vertex_mass,
        mesh.pinned_mask.view(np.uint8),
        mesh.edges, mesh.rest_lengths, mesh.stretch_stiffness,
        mesh.hinges, mesh.hinge_dir, mesh.hinge_rest_sum_n,
        np.ascontiguousarray(p.bending_table()),
        np.asarray(cfg.gravity, dtype=np.float64), wind_velocity(p),
        cfg.drag_coefficient(), cfg.damping, dt, n_substeps,
    )
    if rc >= 0:
        if _diverged(mesh):
            raise InstabilityError(
                f"simulation diverged at step {step_index}", step=step_index
            )
        _raise_degenerate(mesh, rc)
    if _diverged(mesh) or not np.all(np.isfinite(mesh.velocities)):
        raise InstabilityError(
            f"simulation diverged at step {step_index}", step=step_index
        )


def step(mesh: ClothMesh, p: ParameterVector, cfg: SimConfig, dt: float) -> ClothMesh:
    """One semi-implicit Euler step of size dt; returns the new state."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    new = mesh.copy()
    _integrate_inplace(new, p, cfg, dt, 1, 0)
    return new


def simulate(p: ParameterVector, cfg: SimConfig) -> MeshSequence:
    """Run the flag for n_frames output frames of dt_output seconds each.

    Each output frame advances the state by the resolved number of
    substeps; snapshots are taken after each frame, so frame f shows the
    state at time (f+1) * dt_output.
    """
    mesh = build_flag_mesh(cfg, p)
    n_sub = cfg.resolved_substeps()
    dt_sub = cfg.dt_output / n_sub

    n = mesh.n_vertices
    positions = np.empty((cfg.n_frames, n, 3))
    velocities = np.empty((cfg.n_frames, n, 3))
    for f in range(cfg.n_frames):
        _integrate_inplace(mesh, p, cfg, dt_sub, n_sub, f)
        positions[f] = mesh.positions
        velocities[f] = mesh.velocities
    return MeshSequence(
        positions=positions,
        dt=cfg.dt_output,
        triangles=mesh.triangles,
        velocities=velocities,
        vertex_mass=mesh.vertex_mass,
    )


def mechanical_energy(positions, velocities, mesh: ClothMesh,
                      p: ParameterVector, cfg: SimConfig) -> float:
    """Kinetic + gravitational + elastic energy of a state, in joules.

    The bending term integrates the hinge force model at frozen rest
    geometry, E_h = 2 k(alpha) |E0|^2 (1 - cos(phi/2)) / (|N1|+|N2|)_0,
    which is exact for pure hinge rotations and a close surrogate
    otherwise; fine for monitoring dissipation trends.
    """
    m = mesh.vertex_mass
    ke = 0.5 * float(np.sum(m[:, None] * velocities**2))
    g = np.asarray(cfg.gravity, dtype=np.float64)
    pe_g = -float(np.sum(m * (positions @ g)))
    d = positions[mesh.edges[:, 1]] - positions[mesh.edges[:, 0]]
    stretch = np.linalg.norm(d, axis=1) - mesh.rest_lengths
    pe_s = 0.5 * mesh.stretch_stiffness * float(np.sum(stretch**2))

    x1 = positions[mesh.hinges[:, 0]]
    x2 = positions[mesh.hinges[:, 1]]
    x3 = positions[mesh.hinges[:, 2]]
    x4 = positions[mesh.hinges[:, 3]]
    n1 = np.cross(x1 - x3, x1 - x4)
    n2 = np.cross(x2 - x4, x2 - x3)
    l1 = np.linalg.norm(n1, axis=1)
    l2 = np.linalg.norm(n2, axis=1)
    cos_phi = np.clip(
        np.sum(n1 * n2, axis=1) / np.maximum(l1 * l2, 1e-300), -1.0, 1.0
    )
    half_cos = np.sqrt(np.maximum(0.0, 0.5 * (1.0 + cos_phi)))
    alpha = np.sqrt(np.maximum(0.0, 0.5 * (1.0 - cos_phi))) \
        * mesh.hinge_rest_sum_n / np.maximum(l1 + l2, 1e-300)
    table = p.bending_table()
    k = np.empty_like(alpha)
    for dcode in range(table.shape[0]):
        sel = mesh.hinge_dir == dcode
        if np.any(sel):
            k[sel] = np.interp(alpha[sel], ALPHA_SAMPLES, table[dcode])
    pe_b = float(np.sum(
        2.0 * k * mesh.hinge_rest_edge**2 * (1.0 - half_cos)
        / mesh.hinge_rest_sum_n
    ))
    return ke + pe_g + pe_s + pe_b


def kinetic_energy(seq: MeshSequence, frame: int) -> float:
    if seq.velocities is None or seq.vertex_mass is None:
        raise ConfigError("sequence carries no velocity data")
    v = seq.velocities[frame]
    return 0.5 * float(np.sum(seq.vertex_mass[:, None] * v**2))


def save_meshseq(seq: MeshSequence, path):
    """Binary frame dump: header (counts, dt), int32 triangles, f32 positions."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MESHSEQ_MAGIC)
        fh.write(struct.pack(
            "<IIIId", _MESHSEQ_VERSION, seq.n_frames,
            seq.positions.shape[1], len(seq.triangles), seq.dt,
        ))
        fh.write(np.ascontiguousarray(seq.triangles, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(seq.positions, dtype="<f4").tobytes())


def load_meshseq(path) -> MeshSequence:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read mesh sequence {path}: {exc}") from exc
    header = struct.calcsize("<IIIId")
    if len(raw) < 4 + header or raw[:4] != _MESHSEQ_MAGIC:
        raise IngestionError(f"{path} is not a mesh sequence file")
    version, n_frames, n_vertices, n_tris, dt = struct.unpack_from("<IIIId", raw, 4)
    if version != _MESHSEQ_VERSION:
        raise IngestionError(f"{path}: unsupported version {version}")
    off = 4 + header
    tri_bytes = n_tris * 3 * 4
    pos_bytes = n_frames * n_vertices * 3 * 4
    if len(raw) != off + tri_bytes + pos_bytes:
        raise IngestionError(f"{path}: truncated mesh sequence")
    triangles = np.frombuffer(raw, dtype="<i4", count=n_tris * 3, offset=off)
    positions = np.frombuffer(
        raw, dtype="<f4", count=n_frames * n_vertices * 3, offset=off + tri_bytes
    )
    return MeshSequence(
        positions=positions.astype(np.float64).reshape(n_frames, n_vertices, 3),
        dt=dt,
        triangles=triangles.astype(np.int32).reshape(n_tris, 3),
    )


def save_obj_frames(seq: MeshSequence, directory):
    """One Wavefront OBJ per frame, for eyeballing in a mesh viewer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    faces = "".join(
        f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in seq.triangles
    )
    for f in range(seq.n_frames):
        verts = "".join(
            "v {:.6f} {:.6f} {:.6f}\n".format(*row) for row in seq.positions[f]
        )
        (directory / f"frame_{f:04d}.obj").write_text(verts + faces)
