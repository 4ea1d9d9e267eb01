import numpy as np
import pytest

from flagfit import pipeline
from flagfit.clothsim import SimConfig
from flagfit.errors import BoundsError, ConfigError, IngestionError, NumericalError
from flagfit.gpopt import N_INITIAL, EvaluationHistory
from flagfit.params import NormalizedParams, ParameterVector, normalize
from flagfit.pipeline import (
    RefineConfig,
    build_refine_config,
    emit_report,
    evaluate,
    gen_target,
    ingest_target,
    load_ground_truth,
    load_refine_config,
    parse_config_text,
    refine,
    target_descriptor,
)
from flagfit.render import Camera, load_video_pgm
from flagfit.spectral import DescriptorConfig

TRUE_PARAMS = ParameterVector(np.full(15, 1e-5), 0.135, 5.0)


def small_camera(size=(64, 64)):
    return Camera(
        position=np.array([0.75, -3.2, -0.55]),
        look_at=np.array([0.75, 0.0, -0.55]),
        vertical_fov=np.deg2rad(45.0),
        image_size=size,
    )


def tiny_config(n_iterations=2, frames=16, image=(64, 64), **sim_over):
    """A refinement config small enough to run dozens of times in a test."""
    sim_kwargs = dict(grid_nx=12, grid_ny=9, n_frames=16)
    sim_kwargs.update(sim_over)
    return RefineConfig(
        sim=SimConfig(**sim_kwargs),
        camera=small_camera(image),
        descriptor=DescriptorConfig(frames=frames),
        n_iterations=n_iterations,
        frames_per_clip=frames,
    )


@pytest.fixture(scope="module")
def target_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("target")
    gen_target(TRUE_PARAMS, tiny_config(), out)
    return out


@pytest.fixture(scope="module")
def short_run(target_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(n_iterations=3)
    volume = ingest_target(target_dir, cfg)
    result = refine(volume, cfg, out_dir=out)
    return cfg, result, out


# ---------------------------------------------------------------------------
# config validation


def test_refine_config_defaults():
    cfg = RefineConfig()
    assert cfg.n_iterations == 40
    assert cfg.frames_per_clip == 30
    assert cfg.sim.grid_nx == 45
    assert tuple(cfg.camera.image_size) == (224, 224)


def test_refine_config_rejects_zero_iterations():
    with pytest.raises(ConfigError):
        tiny_config(n_iterations=0)


def test_refine_config_clip_longer_than_sim():
    with pytest.raises(ConfigError, match="simulated"):
        RefineConfig(
            sim=SimConfig(grid_nx=12, grid_ny=9, n_frames=16),
            camera=small_camera(),
            descriptor=DescriptorConfig(frames=30),
            frames_per_clip=30,
        )


def test_refine_config_descriptor_frames_must_match():
    with pytest.raises(ConfigError, match="frames_per_clip"):
        RefineConfig(
            sim=SimConfig(grid_nx=12, grid_ny=9, n_frames=16),
            camera=small_camera(),
            descriptor=DescriptorConfig(frames=30),
            frames_per_clip=16,
        )


def test_refine_config_fps_must_match():
    with pytest.raises(ConfigError, match="fps"):
        tiny_config(dt_output=0.05)


# ---------------------------------------------------------------------------
# target generation and ingestion


def test_gen_target_writes_frames_and_sidecars(target_dir):
    frames = sorted(target_dir.glob("frame_*.pgm"))
    assert len(frames) == 16
    assert (target_dir / "meta.txt").is_file()
    assert (target_dir / "ground_truth.txt").is_file()


def test_gen_target_rejects_out_of_range_params(tmp_path):
    bad = ParameterVector(np.full(15, 1e-5), 0.135, 99.0)
    with pytest.raises(BoundsError):
        gen_target(bad, tiny_config(), tmp_path / "bad")


def test_ingest_round_trip(target_dir):
    cfg = tiny_config()
    volume = ingest_target(target_dir, cfg)
    assert volume.frames.shape == (16, 64, 64)
    assert volume.fps == pytest.approx(25.0)


def test_ingest_keeps_trailing_window(target_dir):
    cfg = tiny_config(frames=12)
    got = ingest_target(target_dir, cfg)
    full = load_video_pgm(target_dir)
    assert np.array_equal(got.frames, full.frames[-12:])


def test_ingest_rejects_wrong_fps(target_dir, tmp_path):
    # a consistent 20 fps setup; the 25 fps target must be refused
    cfg = RefineConfig(
        sim=SimConfig(grid_nx=12, grid_ny=9, n_frames=16, dt_output=0.05),
        camera=small_camera(),
        descriptor=DescriptorConfig(frames=16, fps=20.0),
        n_iterations=2,
        frames_per_clip=16,
    )
    with pytest.raises(ConfigError, match="fps"):
        ingest_target(target_dir, cfg)


def test_ingest_rejects_wrong_image_size(target_dir):
    cfg = tiny_config(image=(48, 48))
    with pytest.raises(ConfigError, match="48"):
        ingest_target(target_dir, cfg)


def test_ingest_rejects_short_clip(target_dir):
    cfg = tiny_config(frames=24, n_frames=24)
    with pytest.raises(IngestionError, match="frames"):
        ingest_target(target_dir, cfg)


def test_ground_truth_sidecar_round_trip(target_dir, tmp_path):
    truth = load_ground_truth(target_dir)
    assert truth is not None
    assert truth.wind_speed == TRUE_PARAMS.wind_speed
    assert np.array_equal(truth.bending, TRUE_PARAMS.bending)
    assert load_ground_truth(tmp_path) is None


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_is_deterministic(target_dir):
    cfg = tiny_config()
    desc = target_descriptor(ingest_target(target_dir, cfg), cfg)
    theta = normalize(TRUE_PARAMS, cfg.space)
    assert evaluate(theta, desc, cfg) == evaluate(theta, desc, cfg)


def test_evaluate_self_target_is_near_floor(target_dir):
    # rendering quantizes to uint8, so the distance is small but not zero
    cfg = tiny_config()
    desc = target_descriptor(ingest_target(target_dir, cfg), cfg)
    d = evaluate(normalize(TRUE_PARAMS, cfg.space), desc, cfg)
    assert 0.0 < d < 0.05


def test_evaluate_accepts_plain_arrays(target_dir):
    cfg = tiny_config()
    desc = target_descriptor(ingest_target(target_dir, cfg), cfg)
    theta = normalize(TRUE_PARAMS, cfg.space)
    assert evaluate(theta.values, desc, cfg) == evaluate(theta, desc, cfg)


# ---------------------------------------------------------------------------
# the refinement loop


def test_refine_runs_exact_budget(short_run):
    cfg, result, _ = short_run
    assert len(result.history) == N_INITIAL + cfg.n_iterations
    assert all(flag == "ok" for flag in result.history.flags)


def test_refine_best_matches_history(short_run):
    _, result, _ = short_run
    assert result.best_distance == min(result.history.values)
    idx, point, value = result.history.best()
    assert value == result.best_distance


def test_refine_points_stay_in_box(short_run):
    _, result, _ = short_run
    for point in result.history.points:
        assert np.all(np.abs(point.values) <= 1.0)


def test_refine_persists_history_and_timings(short_run):
    cfg, result, out = short_run
    text = (out / "history.csv").read_text()
    assert text.count("\n") == len(result.history) + 1
    timings = (out / "timings.csv").read_text().splitlines()
    assert timings[0] == "iteration,seconds"
    assert len(timings) == len(result.history) + 1


def test_refine_same_seed_is_byte_identical(target_dir, short_run, tmp_path):
    cfg, _, out = short_run
    volume = ingest_target(target_dir, cfg)
    refine(volume, cfg, out_dir=tmp_path)
    assert (tmp_path / "history.csv").read_bytes() == (out / "history.csv").read_bytes()


def test_refine_resumes_from_saved_history(target_dir, short_run, tmp_path):
    """Interrupt after one iteration, reload the CSV, finish the run: the
    final history file must match an uninterrupted run byte for byte."""
    _, _, reference = short_run
    volume = ingest_target(target_dir, tiny_config(n_iterations=1))
    refine(volume, tiny_config(n_iterations=1), out_dir=tmp_path)
    partial = EvaluationHistory.load_csv(tmp_path / "history.csv")
    assert len(partial) == N_INITIAL + 1
    refine(volume, tiny_config(n_iterations=3), history=partial, out_dir=tmp_path)
    assert (tmp_path / "history.csv").read_bytes() == (
        reference / "history.csv"
    ).read_bytes()


def test_refine_rejects_oversized_history(target_dir):
    cfg = tiny_config(n_iterations=1)
    volume = ingest_target(target_dir, cfg)
    hist = EvaluationHistory()
    for _ in range(N_INITIAL + 2):
        hist.append(NormalizedParams(np.zeros(17)), 1.0)
    with pytest.raises(ConfigError, match="history"):
        refine(volume, cfg, history=hist)


def test_refine_penalizes_failed_evaluations(target_dir, monkeypatch):
    cfg = tiny_config(n_iterations=2)
    volume = ingest_target(target_dir, cfg)
    real = pipeline.evaluate
    calls = {"n": 0}

    def flaky(theta, desc, cfg_):
        calls["n"] += 1
        if calls["n"] == N_INITIAL + 1:
            raise NumericalError("simulation diverged")
        return real(theta, desc, cfg_)

    monkeypatch.setattr(pipeline, "evaluate", flaky)
    result = refine(volume, cfg)
    assert result.history.flags[N_INITIAL] == "penalized"
    ok_before = result.history.values[:N_INITIAL]
    assert result.history.values[N_INITIAL] == 10.0 * max(ok_before)
    assert len(result.history) == N_INITIAL + 2


# ---------------------------------------------------------------------------
# reporting


def test_emit_report_writes_expected_files(short_run, target_dir, tmp_path):
    cfg, result, _ = short_run
    truth = load_ground_truth(target_dir)
    emit_report(result, tmp_path, cfg, ground_truth=truth)
    for name in (
        "history.csv",
        "distance.svg",
        "wind_speed.svg",
        "area_weight.svg",
        "best_params.txt",
        "summary.txt",
    ):
        assert (tmp_path / name).is_file(), name
    svg = (tmp_path / "distance.svg").read_text()
    assert "<svg" in svg
    summary = (tmp_path / "summary.txt").read_text()
    assert f"best_distance {result.best_distance!r}" in summary
    assert "true_wind_speed 5.0" in summary


def test_emit_report_without_truth(short_run, tmp_path):
    cfg, result, _ = short_run
    emit_report(result, tmp_path, cfg)
    assert "true_wind_speed" not in (tmp_path / "summary.txt").read_text()


def test_emit_report_rejects_empty_history(tmp_path):
    cfg = tiny_config()
    empty = pipeline.RefineResult(
        best_params=TRUE_PARAMS, best_distance=0.0, history=EvaluationHistory()
    )
    with pytest.raises(ValueError):
        emit_report(empty, tmp_path, cfg)


# ---------------------------------------------------------------------------
# plain-text config files


def test_parse_config_types_and_comments():
    text = "\n".join(
        [
            "# full-size run",
            "seed 3",
            "dt 0.05   # output interval",
            "gp_noise 1e-06",
            "",
            "space_file box.txt",
        ]
    )
    values = parse_config_text(text, base_dir="/cfg")
    assert values["seed"] == 3
    assert values["dt"] == 0.05
    assert values["gp_noise"] == 1e-06
    assert str(values["space_file"]) == "/cfg/box.txt"


def test_parse_config_unknown_key():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed 1\nbogus 4")


def test_parse_config_bad_value():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("seed notanint")


def test_parse_config_wrong_token_count():
    with pytest.raises(ConfigError, match="key value"):
        parse_config_text("seed 1 2")


def test_build_refine_config_defaults():
    cfg = build_refine_config({})
    assert cfg.n_iterations == 40
    assert cfg.seed == 0
    assert cfg.sim.dt_output == 0.04
    assert cfg.descriptor.fps == pytest.approx(25.0)


def test_build_refine_config_overrides():
    text = "\n".join(
        [
            "grid_nx 12",
            "grid_ny 9",
            "n_frames 16",
            "frames_per_clip 16",
            "dt 0.05",
            "image_height 64",
            "image_width 64",
            "camera_x 0.5",
            "camera_vfov_deg 50",
            "gp_lengthscale 0.4",
            "n_iterations 2",
            "seed 7",
        ]
    )
    cfg = build_refine_config(parse_config_text(text))
    assert cfg.sim.dt_output == 0.05
    assert cfg.descriptor.fps == pytest.approx(20.0)
    assert cfg.camera.position[0] == 0.5
    assert cfg.camera.vertical_fov == pytest.approx(np.deg2rad(50.0))
    assert tuple(cfg.camera.image_size) == (64, 64)
    assert cfg.gp.lengthscale == 0.4
    assert cfg.seed == 7


def test_build_refine_config_space_file(tmp_path):
    from flagfit.params import default_search_space

    space = default_search_space()
    space.upper[-1] = 8.0
    space.save(tmp_path / "box.txt")
    cfg = build_refine_config({"space_file": tmp_path / "box.txt"})
    assert cfg.space.upper[-1] == 8.0


def test_load_refine_config_defaults_when_missing_path():
    cfg = load_refine_config(None)
    assert cfg.n_iterations == 40


def test_load_refine_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="exist"):
        load_refine_config(tmp_path / "nope.txt")


def test_load_refine_config_round_trip(tmp_path):
    (tmp_path / "run.txt").write_text("seed 11\nn_iterations 4\n")
    cfg = load_refine_config(tmp_path / "run.txt")
    assert cfg.seed == 11
    assert cfg.n_iterations == 4
