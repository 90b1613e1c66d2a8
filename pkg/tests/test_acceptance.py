"""Acceptance suite: one recorded PASS/FAIL line per criterion.

The desk-scale training criteria share one set of run directories built by
the ``desk_runs`` fixture; they take several minutes on one CPU core.
"""

import csv
import hashlib
import itertools
import math
import time

import numpy as np
import pytest
from conftest import cw_closed_form

from proxrl import cli, docking, inspection
from proxrl.actions import continuous, discrete
from proxrl.config import ExperimentConfig, default_ppo
from proxrl.docking import DIST_SCALE, DockingEnv, max_speed
from proxrl.dynamics import MEAN_MOTION, DynamicsParams, propagate, step_delta_v
from proxrl.inspection import (ALL_INSPECTED, CRASH, InspectionEnv, adaptive_w_update, generate_points,
                               sun_vector, visible_and_illuminated)
from proxrl.metrics import FINAL_EVAL_SEED_BASE, evaluate_random, iqm, read_records
from proxrl.network import LossSpec, forward, gradients, init_params, sample
from proxrl.ppo import compute_gae

DESK_CASES = 30
DOCKING_SEEDS = (0, 1, 2)


# ---------------------------------------------------------------- exact suites

def test_dynamics_oracle(criterion):
    rng = np.random.default_rng(7)
    params = DynamicsParams(dt=10.0)
    worst, worst_z = 0.0, 0.0
    start = time.perf_counter()
    for _ in range(3):
        s0 = np.concatenate([rng.uniform(-100, 100, 3), rng.uniform(-0.3, 0.3, 3)])
        s = s0.copy()
        for k in range(1, 1224):
            s = propagate(s, np.zeros(3), params)
            exact = cw_closed_form(s0, MEAN_MOTION, 10.0 * k)
            worst = max(worst, float(np.abs(s - exact).max()))
            t = 10.0 * k
            z = s0[2] * math.cos(MEAN_MOTION * t) + s0[5] / MEAN_MOTION * math.sin(MEAN_MOTION * t)
            worst_z = max(worst_z, abs(s[2] - z))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and worst_z < 1e-9 and elapsed < 1.0
    criterion("dynamics oracle", ok, f"max|err|={worst:.2e} z={worst_z:.2e} t={elapsed:.2f}s")
    assert ok


def test_formula_suite(criterion):
    checks = {
        "delta_v": step_delta_v(np.ones(3), DynamicsParams(mass=12.0, dt=10.0)) == 2.5,
        "max_speed(10)": max_speed(10.0) == 0.2,
        "max_speed(110)": abs(max_speed(110.0) - 0.4054) <= 1e-12,
        "w(0.001,0.95)": abs(adaptive_w_update(0.001, 0.95) - 0.00105) <= 1e-15,
        "w(0.001,0.70)": adaptive_w_update(0.001, 0.70) == 0.001,
        "w(0.05,0.85)": adaptive_w_update(0.05, 0.85) == 0.05,
        "iqm(1..8)": iqm(range(1, 9)) == 4.5,
    }
    ok = all(checks.values())
    criterion("formula suite", ok, " ".join(k for k, v in checks.items() if not v))
    assert ok


def brute_visibility(radius, points, deputy, sun_theta):
    """Per-point loop over the two half-space tests, written against surface points."""
    sun = (math.cos(sun_theta), math.sin(sun_theta), 0.0)
    out = []
    for p in points:
        q = [radius * c for c in p]
        lit = sum(a * b for a, b in zip(p, sun)) > 0.0
        to_deputy = [d - c for d, c in zip(deputy, q)]
        facing = sum(a * b for a, b in zip(p, to_deputy)) > 0.0
        out.append(lit and facing)
    return out


def test_geometry_oracle(criterion):
    model = generate_points()
    rng = np.random.default_rng(11)
    pts = model.points.tolist()
    mismatches = 0
    start = time.perf_counter()
    for _ in range(1000):
        direction = rng.normal(size=3)
        deputy = direction / np.linalg.norm(direction) * rng.uniform(10.5, 800.0)
        theta = rng.uniform(0, 2 * math.pi)
        fast = visible_and_illuminated(model, deputy, theta)
        mismatches += int(np.count_nonzero(fast != np.array(brute_visibility(model.radius, pts, deputy, theta))))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5.0
    criterion("geometry oracle", ok, f"mismatches={mismatches} t={elapsed:.2f}s")
    assert ok
    assert np.allclose(sun_vector(0.0), [1, 0, 0])


def _fd_worst(rng, space, coords, eps=1e-5):
    obs_dim = int(rng.integers(3, 12))
    hidden = tuple(int(h) for h in rng.integers(4, 12, size=2))
    params = init_params(obs_dim, space, hidden, seed=int(rng.integers(1 << 30)))
    for k, v in params.arrays.items():
        params.arrays[k] = rng.normal(scale=0.6, size=v.shape)
    if "log_std" in params.arrays:
        params.arrays["log_std"] = rng.uniform(-1.5, 0.5, size=3)
    obs = rng.normal(size=(24, obs_dim))
    dist, value = forward(params, obs)
    actions, logp, _ = sample(dist, rng)
    batch = {"obs": obs, "actions": actions, "old_log_probs": logp + rng.normal(scale=0.3, size=24),
             "advantages": rng.normal(size=24), "returns": value + rng.normal(size=24)}
    spec = LossSpec(0.2, 0.5, 0.01)
    _, grads = gradients(params, spec, batch)
    names = list(params.arrays)
    worst = 0.0
    for _ in range(coords):
        name = names[int(rng.integers(len(names)))]
        arr = params.arrays[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        up = gradients(params, spec, batch)[0]["loss"]
        arr[idx] = orig - eps
        down = gradients(params, spec, batch)[0]["loss"]
        arr[idx] = orig
        numeric = (up - down) / (2 * eps)
        worst = max(worst, abs(numeric - grads[name][idx]) / max(abs(numeric), abs(grads[name][idx]), 1e-6))
    return worst


def test_gradient_check(criterion):
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    worst = {label: max(_fd_worst(rng, space, 100) for _ in range(10))
             for label, space in (("categorical", discrete(5, 1.0)), ("gaussian", continuous(0.5)))}
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30.0
    criterion("gradient check", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" t={elapsed:.1f}s")
    assert ok


def brute_gae(rewards, values, dones, gamma, lam, bootstrap):
    T = len(rewards)
    nxt = list(values[1:]) + [bootstrap]
    deltas = [rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t] for t in range(T)]
    out = []
    for t in range(T):
        total, weight = 0.0, 1.0
        for k in range(t, T):
            total += weight * deltas[k]
            if dones[k]:
                break
            weight *= gamma * lam
        out.append(total)
    return np.array(out)


def test_gae_oracle(criterion):
    rng = np.random.default_rng(5)
    cases = [d for T in range(1, 7) for d in itertools.product((0.0, 1.0), repeat=T)]
    while len(cases) < 1000:
        T = int(rng.integers(1, 13))
        cases.append(tuple((rng.random(T) < 0.25).astype(float)))
    worst = 0.0
    for dones in cases:
        T = len(dones)
        r, v = rng.normal(size=T), rng.normal(size=T)
        g, lam, boot = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0), rng.normal()
        adv, _ = compute_gae(r, v, dones, g, lam, boot)
        worst = max(worst, float(np.abs(adv - brute_gae(r, v, dones, g, lam, boot)).max()))
    ok = worst <= 1e-12
    criterion("GAE oracle", ok, f"sequences={len(cases)} max|err|={worst:.1e}")
    assert ok


def test_reward_decomposition(criterion):
    rng = np.random.default_rng(3)
    bad = 0
    for env, u in ((InspectionEnv(), 1.0), (DockingEnv(), 1.0)):
        env.reset(0)
        for _ in range(10_000):
            out = env.step(rng.uniform(-u, u, 3))
            bad += out.reward != sum(out.reward_components.values())
            if out.terminal:
                env.reset(int(rng.integers(1 << 30)))
    worst = 0.0
    env = DockingEnv()
    for seed in range(20):
        env.reset(seed)
        r0, total = env.state.prev_distance, 0.0
        while True:
            out = env.step(rng.uniform(-1, 1, 3))
            total += out.reward_components["dist_change"]
            if out.terminal:
                break
        r1 = env.state.prev_distance
        worst = max(worst, abs(total - 2 * (math.exp(-DIST_SCALE * r1) - math.exp(-DIST_SCALE * r0))))
    ok = bad == 0 and worst < 1e-9
    criterion("reward decomposition", ok, f"mismatched_steps={bad} telescoping_err={worst:.1e}")
    assert ok


def test_termination_exactness(criterion):
    tags = {}
    env = InspectionEnv()
    env.reset_to([16.0, 0, 0, -1.0, 0, 0], sun0=0.0)
    tags["inspection/Crash"] = env.step(np.zeros(3)).done
    env.reset_to([795.0, 0, 0, 1.0, 0, 0], sun0=0.0)
    tags["inspection/OutOfBounds"] = env.step(np.zeros(3)).done
    mask = np.ones(99, bool)
    mask[np.argmax(env.model.points[:, 0])] = False
    env.reset_to([60.0, 0, 0, 0, 0, 0], sun0=0.0, inspected=mask)
    tags["inspection/AllInspected"] = env.step(np.zeros(3)).done
    env.reset_to([0.0, 60.0, 0, 0, 0, 0], sun0=0.0)
    seq = [env.step(np.zeros(3)).done for _ in range(1223)]
    timeout_ok = seq[-1] == inspection.TIMEOUT and set(seq[:-1]) == {inspection.RUNNING}
    tags["inspection/Timeout"] = seq[-1] if timeout_ok else "bad"

    denv = DockingEnv()
    denv.reset_to([0, 9.1, 0, 0, -0.1, 0])
    tags["docking/Docked"] = denv.step(np.zeros(3)).done
    denv.reset_to([0, 10.3, 0, 0, -0.5, 0])
    tags["docking/Crashed"] = denv.step(np.zeros(3)).done
    denv.reset_to([0, 799.5, 0, 0, 1.0, 0])
    tags["docking/OutOfBounds"] = denv.step(np.zeros(3)).done
    denv.reset_to([0, 100.0, 0, 0, 0, 0])
    seq = [denv.step(np.zeros(3)).done for _ in range(2000)]
    ok_dock = seq[-1] == docking.TIMEOUT and set(seq[:-1]) == {docking.RUNNING}
    tags["docking/Timeout"] = seq[-1] if ok_dock else "bad"

    wrong = [k for k, v in tags.items() if k.split("/")[1] != v]
    criterion("termination exactness", not wrong, " ".join(wrong))
    assert not wrong
    assert CRASH != ALL_INSPECTED


# ------------------------------------------------------------ desk-scale runs

def _metric_csvs(root):
    files = sorted(list(root.rglob("eval_final.csv")) + list(root.rglob("eval_log.csv"))
                   + list(root.rglob("train_log.csv")) + list((root / "report").glob("*.csv")))
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}


def _desk_pipeline(root, jobs):
    for task, space, seeds in jobs:
        cfg = ExperimentConfig(task, space, default_ppo(task, "desk"), seeds=seeds, out_dir=str(root))
        for s in seeds:
            cli.train_one(cfg, s, log=lambda *_: None)
            cli.evaluate_run(cfg.run_dir(s), DESK_CASES, deterministic=True, trajectories=1)
    cli.report(root)
    return root


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    return _desk_pipeline(root, [
        ("docking", continuous(0.1), DOCKING_SEEDS),
        ("inspection", discrete(3, 0.1), (0,)),
        ("inspection", continuous(1.0), (0,)),
    ])


def _records(root, task, slug, seeds):
    return [r for s in seeds for r in read_records(root / task / slug / f"seed_{s}" / "eval_final.csv")]


@pytest.mark.slow
def test_desk_docking(desk_runs, criterion):
    recs = _records(desk_runs, "docking", "continuous_u0.1", DOCKING_SEEDS)
    baseline = evaluate_random("docking", continuous(0.1), DESK_CASES, FINAL_EVAL_SEED_BASE)
    base_success = iqm([r.success for r in baseline])
    success = iqm([r.success for r in recs])
    final_d = iqm([r.final_distance for r in recs])
    init_d = iqm([r.initial_distance for r in recs])
    base_ok = sum(r.success for r in baseline) == 0
    criterion("desk docking: random baseline 0-success", base_ok, f"baseline_successes={sum(r.success for r in baseline)}")
    criterion("desk docking: success IQM > baseline", success > base_success,
              f"success_iqm={success:.3f} successes={sum(r.success for r in recs)}/{len(recs)}")
    criterion("desk docking: final distance IQM < initial", final_d < init_d, f"final={final_d:.1f} initial={init_d:.1f}")
    assert base_ok
    assert final_d < init_d
    assert success > base_success


@pytest.mark.slow
def test_desk_inspection(desk_runs, criterion):
    recs = _records(desk_runs, "inspection", "discrete3_u0.1", (0,))
    pts = iqm([r.inspected_points for r in recs])
    ok = pts >= 50
    criterion("desk inspection: inspected points IQM >= 50", ok, f"iqm={pts:.1f}")
    assert ok


@pytest.mark.slow
def test_desk_delta_v_trend(desk_runs, criterion):
    disc = iqm([r.delta_v for r in _records(desk_runs, "inspection", "discrete3_u0.1", (0,))])
    cont = iqm([r.delta_v for r in _records(desk_runs, "inspection", "continuous_u1", (0,))])
    # non-blocking trend check with 20% slack
    criterion("desk trend: discrete-3 0.1 N uses less dv than continuous 1.0 N", disc < 1.2 * cont,
              f"discrete={disc:.3f} continuous={cont:.3f}", blocking=False)


@pytest.mark.slow
def test_desk_determinism(desk_runs, tmp_path, criterion):
    again = _desk_pipeline(tmp_path / "desk", [("docking", continuous(0.1), DOCKING_SEEDS)])
    first = {k: v for k, v in _metric_csvs(desk_runs).items() if k.startswith("docking") or "docking" in k}
    second = _metric_csvs(again)
    ok = first == second and len(second) >= 3 * 3 + 2
    criterion("determinism: train+evaluate+report byte-identical", ok, f"files={len(second)}")
    assert ok
    with open(again / "report" / "docking_table.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 1
