"""Acceptance suite: ten end-to-end checks of the whole toolkit.

Each test prints a single `criterion N [PASS|FAIL]` line (always visible,
even under pytest's capture) and then asserts.  The slow checks — hidden-wind
self-recovery and descriptor discrimination — run full-size simulations and
dominate the suite's runtime.

Oracles here are written from scratch against the definitions, not by
calling the library: the periodogram check multiplies out the DFT phase
matrix, the GP check solves the dense system without a Cholesky.
"""

import math
import time

import numpy as np
import pytest

from flagfit.clothsim import (
    MeshSequence,
    SimConfig,
    bending_force,
    build_flag_mesh,
    kinetic_energy,
    simulate,
    step,
    stretch_force,
)
from flagfit.gpopt import (
    N_INITIAL,
    EvaluationHistory,
    GPConfig,
    expected_improvement,
    gp_posterior,
    suggest_next,
)
from flagfit.params import (
    NormalizedParams,
    ParameterVector,
    denormalize,
)
from flagfit.pipeline import (
    RefineConfig,
    gen_target,
    ingest_target,
    refine,
)
from flagfit.render import Camera, render_sequence
from flagfit.spectral import DescriptorConfig, descriptor, dft_periodogram, distance

CENTER_PARAMS = ParameterVector(np.full(15, 1e-5), 0.135, 5.0)


@pytest.fixture
def announce(capsys):
    def _announce(n, label, ok, detail=""):
        with capsys.disabled():
            print(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, f"criterion {n} ({label}): {detail}"

    return _announce


def random_signals(seed=7, count=100):
    rng = np.random.default_rng(seed)
    return [
        rng.standard_normal(int(rng.integers(8, 65))) for _ in range(count)
    ]


def naive_periodogram(signal, fps):
    """Periodogram by explicit phase-matrix multiplication."""
    n = len(signal)
    j = np.arange(n)
    phase = np.exp(-2j * np.pi * np.outer(j, j) / n)
    power = np.abs(phase @ signal) ** 2 / n
    half = n // 2 + 1
    return power[:half], j[:half] * fps / n


def test_criterion_01_periodogram_matches_naive_dft(announce):
    t0 = time.perf_counter()
    worst = 0.0
    for signal in random_signals():
        fast_p, fast_f = dft_periodogram(signal, 25.0)
        slow_p, slow_f = naive_periodogram(signal, 25.0)
        worst = max(worst, float(np.abs(fast_p - slow_p).max()))
        worst = max(worst, float(np.abs(fast_f - slow_f).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 1.0
    announce(1, "periodogram vs naive DFT", ok,
             f"max |diff| {worst:.2e}, {elapsed:.2f}s")


def test_criterion_02_parseval_identity(announce):
    worst = 0.0
    for signal in random_signals():
        n = len(signal)
        power, _ = dft_periodogram(signal, 25.0)
        weights = np.full(len(power), 2.0)
        weights[0] = 1.0
        if n % 2 == 0:
            weights[-1] = 1.0
        worst = max(worst, abs(float(weights @ power) - float(signal @ signal)))
    ok = worst < 1e-9
    announce(2, "Parseval identity", ok, f"max |diff| {worst:.2e}")


def test_criterion_03_force_fields_balance(announce):
    t0 = time.perf_counter()
    cfg = SimConfig()
    rng = np.random.default_rng(11)
    worst_rel = 0.0
    for _ in range(50):
        mesh = build_flag_mesh(cfg, CENTER_PARAMS)
        mesh.positions += 0.005 * rng.standard_normal(mesh.positions.shape)
        for force in (bending_force(mesh, CENTER_PARAMS), stretch_force(mesh)):
            total = np.linalg.norm(force.sum(axis=0))
            scale = np.linalg.norm(force, axis=1).sum()
            if scale > 0:
                worst_rel = max(worst_rel, total / scale)
    flat = build_flag_mesh(cfg, CENTER_PARAMS)
    flat_bend = float(np.abs(bending_force(flat, CENTER_PARAMS)).max())
    elapsed = time.perf_counter() - t0
    ok = worst_rel < 1e-10 and flat_bend == 0.0 and elapsed < 10.0
    announce(3, "internal forces sum to zero", ok,
             f"worst rel {worst_rel:.2e}, flat bending {flat_bend}, {elapsed:.1f}s")


def test_criterion_04_free_fall_acceleration(announce):
    t0 = time.perf_counter()
    cfg = SimConfig(damping=0.0, air_viscosity=0.0)
    p = ParameterVector(np.full(15, 1e-5), 0.135, 0.0)
    mesh = build_flag_mesh(cfg, p)
    mesh.pinned_mask[:] = False
    dt = 0.00025
    assert dt < cfg.max_stable_dt()
    masses = mesh.vertex_mass
    com = []
    for _ in range(int(0.5 / dt)):
        mesh = step(mesh, p, cfg, dt)
        com.append(masses @ mesh.positions / masses.sum())
    com = np.array(com)
    accel = np.diff(com[:, 2], 2) / dt**2
    err = float(np.abs(accel + 9.81).max()) / 9.81
    elapsed = time.perf_counter() - t0
    ok = err < 0.01 and elapsed < 5.0
    announce(4, "free-fall center of mass", ok,
             f"max rel accel error {err:.2e}, {elapsed:.1f}s")


def test_criterion_05_zero_wind_settling(announce):
    t0 = time.perf_counter()
    p = ParameterVector(np.full(15, 1e-5), 0.135, 0.0)
    seq = simulate(p, SimConfig(n_frames=150))
    energies = [kinetic_energy(seq, f) for f in range(150)]
    ratio = energies[-1] / max(energies)
    elapsed = time.perf_counter() - t0
    ok = ratio < 0.01 and elapsed < 30.0
    announce(5, "zero-wind settling", ok,
             f"final/max KE {ratio:.2e}, {elapsed:.1f}s")


def naive_gp_posterior(hist, query, cfg):
    """Dense GP solve with scalar kernel evaluations and no factorization."""
    x = np.array([pt.values for pt in hist.points])
    y = np.array(hist.values)
    n = len(y)
    if cfg.normalize_outputs and n > 1 and y.std() > 0:
        mu0, sc = y.mean(), y.std()
    else:
        mu0, sc = 0.0, 1.0
    yn = (y - mu0) / sc

    def k(a, b):
        r = math.dist(a, b) / cfg.lengthscale
        s5r = math.sqrt(5.0) * r
        return cfg.signal_variance * (1 + s5r + 5 * r * r / 3) * math.exp(-s5r)

    gram = np.array([[k(x[i], x[j]) for j in range(n)] for i in range(n)])
    gram += cfg.noise * np.eye(n)
    kq = np.array([k(x[i], query) for i in range(n)])
    mean = kq @ np.linalg.solve(gram, yn)
    var = cfg.signal_variance + cfg.noise - kq @ np.linalg.solve(gram, kq)
    return mu0 + sc * mean, max(var, 0.0) * sc * sc


def test_criterion_06_gp_matches_dense_solve(announce):
    t0 = time.perf_counter()
    rng = np.random.default_rng(23)
    cfg = GPConfig()
    worst = 0.0
    for _ in range(20):
        hist = EvaluationHistory()
        for _ in range(int(rng.integers(2, 21))):
            hist.append(
                NormalizedParams(rng.uniform(-1, 1, 17)),
                float(rng.standard_normal()),
            )
        query = rng.uniform(-1, 1, 17)
        mean, var = gp_posterior(hist, query, cfg)
        ref_mean, ref_var = naive_gp_posterior(hist, query, cfg)
        worst = max(worst, abs(mean - ref_mean), abs(var - ref_var))

    hist = EvaluationHistory()
    for _ in range(12):
        hist.append(
            NormalizedParams(rng.uniform(-1, 1, 17)),
            float(rng.standard_normal()),
        )
    ei = np.array([
        expected_improvement(hist, rng.uniform(-1, 1, 17), cfg)
        for _ in range(1000)
    ])
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and float(ei.min()) >= 0.0 and elapsed < 5.0
    announce(6, "GP posterior vs dense solve", ok,
             f"max |diff| {worst:.2e}, min EI {ei.min():.2e}, {elapsed:.1f}s")


def test_criterion_07_optimizer_smoke_2d(announce):
    t0 = time.perf_counter()

    def objective(v):
        return (v[0] - 0.2) ** 2 + 2.0 * (v[1] + 0.3) ** 2

    corners = [np.array([sx, sy]) for sx in (-1, 1) for sy in (-1, 1)]
    span = max(objective(c) for c in corners)
    cfg = GPConfig()
    wins = 0
    for seed in range(10):
        hist = EvaluationHistory()
        for _ in range(40):
            point = suggest_next(hist, cfg, seed, dim=2)
            hist.append(point, objective(point.values))
        if min(hist.values) <= 0.05 * span:
            wins += 1
    elapsed = time.perf_counter() - t0
    ok = wins >= 9 and elapsed < 30.0
    announce(7, "2-D optimizer smoke", ok, f"{wins}/10 runs, {elapsed:.1f}s")


def test_criterion_08_hidden_wind_recovery(announce, tmp_path):
    t0 = time.perf_counter()
    gen_target(CENTER_PARAMS, RefineConfig(), tmp_path)
    wins = 0
    details = []
    for seed in range(5):
        cfg = RefineConfig(seed=seed)
        volume = ingest_target(tmp_path, cfg)
        result = refine(volume, cfg)
        init_min = min(result.history.values[:N_INITIAL])
        wind = result.best_params.wind_speed
        hit = abs(wind - 5.0) <= 1.0 and result.best_distance < init_min
        wins += hit
        details.append(f"{wind:.2f}{'+' if hit else '-'}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and elapsed < 1800.0
    announce(8, "hidden wind recovery", ok,
             f"{wins}/5 (winds {' '.join(details)}), {elapsed:.0f}s")


def yawed_camera(base, degrees):
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Camera(
        position=base.look_at + rot @ (base.position - base.look_at),
        look_at=base.look_at.copy(),
        vertical_fov=base.vertical_fov,
        image_size=base.image_size,
    )


def test_criterion_09_descriptor_discrimination(announce):
    t0 = time.perf_counter()
    cfg = RefineConfig()
    rng = np.random.default_rng(20260822)
    hits = 0
    n_triplets = 50

    def clip(seq, camera):
        tail = MeshSequence(
            positions=seq.positions[-cfg.frames_per_clip:],
            dt=seq.dt,
            triangles=seq.triangles,
        )
        return descriptor(
            render_sequence(tail, camera, cfg.light), cfg.descriptor
        )

    for _ in range(n_triplets):
        anchor = denormalize(
            NormalizedParams(rng.uniform(-1.0, 1.0, 17)), cfg.space
        )
        w = anchor.wind_speed
        low_span = max(0.0, w - 3.0)
        high_span = max(0.0, 10.0 - (w + 3.0))
        u = rng.uniform(0.0, low_span + high_span)
        w_neg = u if u < low_span else w + 3.0 + (u - low_span)
        negative = ParameterVector(
            anchor.bending.copy(), anchor.area_weight, w_neg
        )
        yaw = rng.uniform(0.25, 2.0) * rng.choice([-1.0, 1.0])

        seq_a = simulate(anchor, cfg.sim)
        seq_n = simulate(negative, cfg.sim)
        d_anchor = clip(seq_a, cfg.camera)
        d_pos = clip(seq_a, yawed_camera(cfg.camera, yaw))
        d_neg = clip(seq_n, cfg.camera)
        hits += distance(d_anchor, d_pos) < distance(d_anchor, d_neg)

    elapsed = time.perf_counter() - t0
    ok = hits >= int(0.8 * n_triplets) and elapsed < 900.0
    announce(9, "descriptor discrimination", ok,
             f"{hits}/{n_triplets} triplets, {elapsed:.0f}s")


def test_criterion_10_refine_is_byte_deterministic(announce, tmp_path):
    cfg_kwargs = dict(
        sim=SimConfig(grid_nx=12, grid_ny=9, n_frames=16),
        camera=Camera(
            position=np.array([0.75, -3.2, -0.55]),
            look_at=np.array([0.75, 0.0, -0.55]),
            vertical_fov=np.deg2rad(45.0),
            image_size=(64, 64),
        ),
        descriptor=DescriptorConfig(frames=16),
        n_iterations=6,
        frames_per_clip=16,
        seed=5,
    )
    target = tmp_path / "target"
    gen_target(CENTER_PARAMS, RefineConfig(**cfg_kwargs), target)
    blobs = []
    for run in ("first", "second"):
        cfg = RefineConfig(**cfg_kwargs)
        volume = ingest_target(target, cfg)
        out = tmp_path / run
        refine(volume, cfg, out_dir=out)
        blobs.append((out / "history.csv").read_bytes())
    ok = blobs[0] == blobs[1]
    announce(10, "same-seed byte determinism", ok,
             f"{len(blobs[0])} bytes compared")
