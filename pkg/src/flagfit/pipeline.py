"""End-to-end refinement loop: target video in, best-fitting parameters out.

Each evaluation denormalizes a candidate point, simulates the flag, renders
the tail of the sequence with the shared camera, reduces the clip to a
spectral descriptor and scores it against the target descriptor.  A GP
optimizer proposes the next candidate; the whole loop is a deterministic
function of (target bytes, config, seed).
"""

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clothsim import MeshSequence, SimConfig, simulate
from .errors import ConfigError, IngestionError, NumericalError
from .gpopt import N_INITIAL, EvaluationHistory, GPConfig, suggest_next
from .params import (
    NormalizedParams,
    ParameterVector,
    SearchSpace,
    default_search_space,
    denormalize,
    save_params,
)
from .render import (
    DEFAULT_LIGHT,
    Camera,
    VideoVolume,
    default_camera,
    load_video_pgm,
    render_sequence,
    save_video_pgm,
)
from .spectral import DescriptorConfig, SpectralDescriptor, descriptor, distance

_FALLBACK_PENALTY = 1e6  # stands in when no finite distance exists yet
_PENALTY_FACTOR = 10.0
_GROUND_TRUTH_FILE = "ground_truth.txt"


@dataclass
class RefineConfig:
    space: SearchSpace = field(default_factory=default_search_space)
    sim: SimConfig = field(default_factory=SimConfig)
    camera: Camera = field(default_factory=default_camera)
    light: np.ndarray = field(default_factory=lambda: DEFAULT_LIGHT.copy())
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    n_iterations: int = 40
    frames_per_clip: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be at least 1")
        if self.frames_per_clip > self.sim.n_frames:
            raise ConfigError(
                f"clip of {self.frames_per_clip} frames exceeds the "
                f"{self.sim.n_frames} simulated frames"
            )
        if self.descriptor.frames != self.frames_per_clip:
            raise ConfigError(
                "descriptor frame count must equal frames_per_clip"
            )
        fps = 1.0 / self.sim.dt_output
        if abs(fps - self.descriptor.fps) > 1e-9:
            raise ConfigError(
                f"descriptor expects {self.descriptor.fps} fps but the "
                f"simulation steps at {fps} fps"
            )


@dataclass
class RefineResult:
    best_params: ParameterVector
    best_distance: float
    history: EvaluationHistory


# ---------------------------------------------------------------------------
# target handling

def ingest_target(path, cfg: RefineConfig) -> VideoVolume:
    """Load a PGM clip, validate its geometry and keep the trailing window."""
    volume = load_video_pgm(path)
    if abs(volume.fps - 1.0 / cfg.sim.dt_output) > 1e-6:
        raise ConfigError(
            f"target recorded at {volume.fps} fps, refinement expects "
            f"{1.0 / cfg.sim.dt_output}"
        )
    h, w = volume.frames.shape[1:]
    if (h, w) != tuple(cfg.camera.image_size):
        raise ConfigError(
            f"target frames are {h}x{w}, camera renders "
            f"{cfg.camera.image_size[0]}x{cfg.camera.image_size[1]}"
        )
    if volume.n_frames < cfg.frames_per_clip:
        raise IngestionError(
            f"target has {volume.n_frames} frames, need {cfg.frames_per_clip}"
        )
    return VideoVolume(
        frames=volume.frames[-cfg.frames_per_clip:], fps=volume.fps
    )


def target_descriptor(volume: VideoVolume, cfg: RefineConfig) -> SpectralDescriptor:
    return descriptor(volume, cfg.descriptor)


def load_ground_truth(target_dir) -> ParameterVector | None:
    """Ground-truth parameters recorded next to a generated target, if any."""
    from .params import load_params

    sidecar = Path(target_dir) / _GROUND_TRUTH_FILE
    if not sidecar.is_file():
        return None
    return load_params(sidecar)


# ---------------------------------------------------------------------------
# evaluation

def simulate_clip(p: ParameterVector, cfg: RefineConfig) -> VideoVolume:
    """Simulate and render only the trailing window the descriptor needs."""
    seq = simulate(p, cfg.sim)
    tail = MeshSequence(
        positions=seq.positions[-cfg.frames_per_clip:],
        dt=seq.dt,
        triangles=seq.triangles,
    )
    return render_sequence(tail, cfg.camera, cfg.light)


def evaluate(
    theta_n: NormalizedParams,
    target_desc: SpectralDescriptor,
    cfg: RefineConfig,
) -> float:
    """One objective evaluation; instability propagates to the caller."""
    vec = getattr(theta_n, "values", theta_n)
    p = denormalize(NormalizedParams(vec), cfg.space)
    clip = simulate_clip(p, cfg)
    return distance(descriptor(clip, cfg.descriptor), target_desc)


# ---------------------------------------------------------------------------
# the loop

def _penalty(history: EvaluationHistory) -> float:
    finite = [
        v for v, flag in zip(history.values, history.flags) if flag == "ok"
    ]
    return _PENALTY_FACTOR * max(finite) if finite else _FALLBACK_PENALTY


def refine(
    target: VideoVolume,
    cfg: RefineConfig,
    history: EvaluationHistory | None = None,
    out_dir=None,
) -> RefineResult:
    """Run (or resume) the full loop: exactly N_INITIAL + n_iterations
    evaluations, persisting history after every step when out_dir is set."""
    target_desc = target_descriptor(target, cfg)
    history = history if history is not None else EvaluationHistory()
    total = N_INITIAL + cfg.n_iterations
    if len(history) > total:
        raise ConfigError(
            f"history already has {len(history)} entries, run wants {total}"
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    while len(history) < total:
        started = time.perf_counter()
        point = suggest_next(history, cfg.gp, cfg.seed)
        try:
            value, flag = evaluate(point, target_desc, cfg), "ok"
        except NumericalError:
            value, flag = _penalty(history), "penalized"
        history.append(point, value, flag)
        if out_dir is not None:
            history.save_csv(out_dir / "history.csv")
            with open(out_dir / "timings.csv", "a") as fh:
                if fh.tell() == 0:
                    fh.write("iteration,seconds\n")
                fh.write(
                    f"{len(history) - 1},"
                    f"{time.perf_counter() - started:.6f}\n"
                )

    idx, best_point, best_value = history.best()
    return RefineResult(
        best_params=denormalize(best_point, cfg.space),
        best_distance=best_value,
        history=history,
    )


# ---------------------------------------------------------------------------
# target generation and reporting

def gen_target(p: ParameterVector, cfg: RefineConfig, out_dir) -> Path:
    """Render a full clip from known parameters, with a truth sidecar."""
    cfg.space.check_contains(p.as_array())
    seq = simulate(p, cfg.sim)
    volume = render_sequence(seq, cfg.camera, cfg.light)
    out_dir = Path(out_dir)
    save_video_pgm(volume, out_dir)
    save_params(p, out_dir / _GROUND_TRUTH_FILE)
    return out_dir


def _plot_series(path, series, label, truth=None, running_min=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    iterations = np.arange(len(series))
    ax.plot(iterations, series, marker="o", markersize=3, lw=1.0, label=label)
    if running_min:
        ax.plot(
            iterations,
            np.minimum.accumulate(series),
            lw=1.8,
            label="running best",
        )
    if truth is not None:
        ax.axhline(truth, ls="--", color="0.35", label="ground truth")
    ax.set_xlabel("evaluation")
    ax.set_ylabel(label)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def emit_report(
    result: RefineResult,
    out_dir,
    cfg: RefineConfig,
    ground_truth: ParameterVector | None = None,
):
    """History CSV, parameter-trace SVG plots and a text summary."""
    if len(result.history) == 0:
        raise ValueError("cannot report on an empty history")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.history.save_csv(out_dir / "history.csv")

    params = [denormalize(p, cfg.space) for p in result.history.points]
    _plot_series(
        out_dir / "distance.svg",
        np.array(result.history.values),
        "descriptor distance",
        running_min=True,
    )
    _plot_series(
        out_dir / "wind_speed.svg",
        np.array([p.wind_speed for p in params]),
        "wind speed (m/s)",
        truth=None if ground_truth is None else ground_truth.wind_speed,
    )
    _plot_series(
        out_dir / "area_weight.svg",
        np.array([p.area_weight for p in params]),
        "area weight (kg/m^2)",
        truth=None if ground_truth is None else ground_truth.area_weight,
    )

    save_params(result.best_params, out_dir / "best_params.txt")
    lines = [
        f"evaluations {len(result.history)}",
        f"best_distance {result.best_distance!r}",
        f"best_wind_speed {result.best_params.wind_speed!r}",
        f"best_area_weight {result.best_params.area_weight!r}",
    ]
    if ground_truth is not None:
        lines.append(f"true_wind_speed {ground_truth.wind_speed!r}")
        lines.append(f"true_area_weight {ground_truth.area_weight!r}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return out_dir


# ---------------------------------------------------------------------------
# plain-text configuration files

_INT_KEYS = {
    "seed", "n_iterations", "frames_per_clip", "grid_nx", "grid_ny",
    "n_frames", "image_height", "image_width", "top_k", "pool_grid",
    "substeps",
}
_FLOAT_KEYS = {
    "dt", "damping", "drag_radius", "air_viscosity", "stretch_stiffness",
    "flag_width", "flag_height", "camera_x", "camera_y", "camera_z",
    "camera_look_x", "camera_look_y", "camera_look_z", "camera_vfov_deg",
    "sigma_t", "sigma_xy", "gp_lengthscale", "gp_signal_variance", "gp_noise",
}
_PATH_KEYS = {"space_file"}


def parse_config_text(text, base_dir=".") -> dict:
    """Key-value lines -> typed dict; '#' starts a comment."""
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"config line {ln}: expected 'key value'")
        key, cell = parts
        try:
            if key in _INT_KEYS:
                values[key] = int(cell)
            elif key in _FLOAT_KEYS:
                values[key] = float(cell)
            elif key in _PATH_KEYS:
                values[key] = Path(base_dir) / cell
            else:
                raise ConfigError(f"config line {ln}: unknown key '{key}'")
        except ValueError as exc:
            raise ConfigError(f"config line {ln}: {exc}") from exc
    return values


def build_refine_config(values: dict) -> RefineConfig:
    """Assemble a RefineConfig from parsed key-value pairs."""
    space = default_search_space()
    if "space_file" in values:
        space = SearchSpace.load(values["space_file"])

    sim_keys = {
        "grid_nx", "grid_ny", "n_frames", "dt", "damping", "drag_radius",
        "air_viscosity", "stretch_stiffness", "flag_width", "flag_height",
        "substeps",
    }
    sim_kwargs = {k: values[k] for k in sim_keys if k in values}
    if "dt" in sim_kwargs:  # file key "dt" is the output frame interval
        sim_kwargs["dt_output"] = sim_kwargs.pop("dt")
    sim = SimConfig(**sim_kwargs)

    cam = default_camera()
    position = np.array([
        values.get("camera_x", cam.position[0]),
        values.get("camera_y", cam.position[1]),
        values.get("camera_z", cam.position[2]),
    ])
    look_at = np.array([
        values.get("camera_look_x", cam.look_at[0]),
        values.get("camera_look_y", cam.look_at[1]),
        values.get("camera_look_z", cam.look_at[2]),
    ])
    vfov = np.deg2rad(values["camera_vfov_deg"]) \
        if "camera_vfov_deg" in values else cam.vertical_fov
    image_size = (
        values.get("image_height", cam.image_size[0]),
        values.get("image_width", cam.image_size[1]),
    )
    camera = Camera(
        position=position, look_at=look_at,
        vertical_fov=vfov, image_size=image_size,
    )

    frames_per_clip = values.get("frames_per_clip", 30)
    desc = DescriptorConfig(
        frames=frames_per_clip,
        fps=1.0 / sim.dt_output,
        sigma_t=values.get("sigma_t", 1.0),
        sigma_xy=values.get("sigma_xy", 2.0),
        top_k=values.get("top_k", 1),
        pool_grid=values.get("pool_grid", 14),
    )
    gp = GPConfig(
        signal_variance=values.get("gp_signal_variance", 1.0),
        lengthscale=values.get("gp_lengthscale", 0.8),
        noise=values.get("gp_noise", 1e-6),
    )
    return RefineConfig(
        space=space,
        sim=sim,
        camera=camera,
        descriptor=desc,
        gp=gp,
        n_iterations=values.get("n_iterations", 40),
        frames_per_clip=frames_per_clip,
        seed=values.get("seed", 0),
    )


def load_refine_config(path=None) -> RefineConfig:
    """RefineConfig from a key-value file; defaults when path is None."""
    if path is None:
        return RefineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    return build_refine_config(parse_config_text(path.read_text(), path.parent))
