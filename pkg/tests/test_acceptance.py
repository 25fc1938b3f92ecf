"""End-to-end acceptance checks. Each test prints one PASS/FAIL line, collected
again in the terminal summary. The learning runs (criteria 4 and 5) take about
20 minutes on one core; deselect them with ``-m "not slow"``."""
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from isacspike.channel import LinkConstants, matched_plan
from isacspike.cli import main, run_sweep
from isacspike.config import load_config
from isacspike.energy import PJ, energy_dense, energy_spiking, flops_spiking, ratio
from isacspike.estimation import crlb_d, crlb_theta, fim, noise_variances
from isacspike.rl import Agent, Trainer, evaluate
from isacspike.snn import (DenseNetwork, SpikingNetwork, dense_backward, dense_forward,
                           snn_backward, snn_forward)
from isacspike.world import V2XEnv

from oracles import numerical_fim_diag

LEARN = dict(batch_size=256, iterations=300)
SEEDS = [0, 1, 2, 3, 4]


# -- 1 ----------------------------------------------------------------------------

def _random_scenario(rng, cfg):
    k = int(rng.integers(1, 4))
    th = rng.uniform(0.2, math.pi - 0.2, k)
    d = rng.uniform(5.0, 60.0, k)
    beam_th = np.clip(th + rng.normal(0, 0.05, k), 0.05, math.pi - 0.05)
    plan = matched_plan(beam_th, cfg.n_ta, cfg.pmax_w)
    plan.powers[:] = cfg.pmax_w * rng.dirichlet(np.ones(k))
    return plan, th, d, int(rng.integers(0, k))


def test_criterion_1_crlb_oracle(report_criterion):
    t0 = time.perf_counter()
    cfg = load_config()
    link = LinkConstants.from_config(cfg)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        plan, th, d, k = _random_scenario(rng, cfg)
        noise = noise_variances(k, plan, th, d, link)
        f = np.diag(fim(th[k], d[k], plan.beams[:, k], plan.powers[k], link, noise))
        ref = np.array(numerical_fim_diag(
            th[k], d[k], 12.0, list(plan.beams[:, k]), plan.powers[k], n_ta=cfg.n_ta,
            n_ra=cfg.n_ra, kappa=link.kappa, xi=link.matched_gain, carrier_hz=link.carrier_hz,
            var_echo=noise.var_echo, var_delay=noise.var_delay, var_doppler=noise.var_doppler,
            rng=rng, pairs=5))
        bounds = np.array([crlb_theta(th[k], d[k], plan.beams[:, k], plan.powers[k], link, noise),
                           crlb_d(noise)])
        rel = np.concatenate([np.abs(f - ref) / ref, np.abs(bounds - 1.0 / ref[:2]) * ref[:2]])
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-3 and elapsed < 120
    report_criterion(1, "CRLB oracle equivalence", ok,
                     f"max rel err {worst:.2e} (tol 1e-3) over 20 scenarios, {elapsed:.2f}s")
    assert ok


# -- 2 ----------------------------------------------------------------------------

def _fd_worst(loss, params, grads, h, per_param, rng):
    worst = 0.0
    for p, g in zip(params, grads):
        for _ in range(per_param):
            idx = tuple(int(rng.integers(0, s)) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            lp = loss()
            p[idx] = old - h
            lm = loss()
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            scale = max(abs(fd), abs(g[idx]), 1e-3 * float(np.abs(g).max()))
            worst = max(worst, abs(fd - g[idx]) / scale)
    return worst


def test_criterion_2_gradients(report_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    sizes = [12, 128, 128, 7]
    x = rng.normal(size=(4, 12))
    c = rng.normal(size=(4, 7))
    snn = SpikingNetwork.create(sizes, rng=rng)
    _, trace = snn_forward(snn, x, smooth=True)
    g = snn_backward(snn, trace, c)
    gates = trace.gates
    snn_loss = lambda: float(np.sum(c * snn_forward(snn, x, smooth=True, frozen_gates=gates)[0]))
    w_snn = _fd_worst(snn_loss, snn.params, g, 1e-5, 10, rng)
    dense = DenseNetwork.create(sizes, rng=rng)
    _, cache = dense_forward(dense, x)
    g = dense_backward(dense, cache, c)
    dense_loss = lambda: float(np.sum(c * dense_forward(dense, x)[0]))
    w_dense = _fd_worst(dense_loss, dense.params, g, 1e-6, 10, rng)
    elapsed = time.perf_counter() - t0
    ok = w_snn < 1e-4 and w_dense < 1e-6 and elapsed < 60
    report_criterion(2, "gradient correctness", ok,
                     f"spiking {w_snn:.2e} (tol 1e-4), dense {w_dense:.2e} (tol 1e-6), {elapsed:.2f}s")
    assert ok


# -- 3 ----------------------------------------------------------------------------

def test_criterion_3_energy(report_criterion):
    dims = [(12, 128), (128, 128), (128, 7)]
    e_s = energy_spiking(flops_spiking(dims, [0.1, 0.1]), 6, dims[2]) / PJ
    e_d = energy_dense(dims) / PJ
    exact = abs(e_s - 3942.4) < 1e-9 and abs(e_d - 60211.2) < 1e-9
    # measured per-forward ratio on observations from real episodes
    cfg = load_config()
    agent = Agent("spiking", cfg.obs_dim, cfg.act_dim, cfg, np.random.default_rng(0))
    env = V2XEnv(cfg)
    obs = [env.reset(seed=1)]
    rng = np.random.default_rng(2)
    while not env.done:
        obs.append(env.step(rng.normal(size=cfg.act_dim)).observation)
    ratios, rates = [], []
    for o in obs:
        _, tr = snn_forward(agent.actor, o)
        r = tr.firing_rates
        rates.append(r)
        e = energy_spiking(flops_spiking(agent.actor.layer_dims, r), cfg.steps,
                           agent.actor.layer_dims[2])
        if max(r) < 0.5:
            ratios.append(ratio(energy_dense(agent.actor.layer_dims), e))
    ok = exact and len(ratios) > 0 and min(ratios) > 2.0
    mean_rates = np.mean(rates, axis=0)
    report_criterion(3, "energy formula fidelity", ok,
                     f"3942.4/60211.2 pJ exact={exact}; measured dense/spiking per-forward ratio "
                     f"min {min(ratios):.2f} mean {np.mean(ratios):.2f} at rates "
                     f"{mean_rates[0]:.3f}/{mean_rates[1]:.3f}")
    assert ok


# -- 4 ----------------------------------------------------------------------------

def _bootstrap_ci(values, rng, n=10000):
    v = np.asarray(values, dtype=float)
    means = v[rng.integers(0, v.size, (n, v.size))].mean(axis=1)
    return float(np.percentile(means, 2.5)), float(np.percentile(means, 97.5))


@pytest.fixture(scope="module")
def trained_runs():
    cfg = load_config(**LEARN)
    runs = []
    for seed in SEEDS:
        t = Trainer(cfg, "spiking", seed=seed)
        t0 = time.perf_counter()
        for _ in range(cfg.iterations):
            t.train_iteration()
        runs.append((t, time.perf_counter() - t0))
    return cfg, runs


@pytest.mark.slow
def test_criterion_4_learning_trend(trained_runs, report_criterion):
    cfg, runs = trained_runs
    w = cfg.iterations // 10
    first = [np.mean([h.mean_reward for h in t.history[:w]]) for t, _ in runs]
    last = [np.mean([h.mean_reward for h in t.history[-w:]]) for t, _ in runs]
    rand = []
    for seed in SEEDS:
        rt = Trainer(cfg, "random", seed=seed)
        rand.append(np.mean([rt.train_iteration().mean_reward for _ in range(w)]))
    rng = np.random.default_rng(0)
    ci_first, ci_last, ci_rand = (_bootstrap_ci(v, rng) for v in (first, last, rand))
    fracs = []
    for seed, (t, _) in zip(SEEDS, runs):
        ev = evaluate(t.agent, cfg, 3, seed=10_000 + seed)
        fracs.append(ev.mean_sum_rate / ev.oracle_sum_rate)
    wall = sum(s for _, s in runs)
    ok = (ci_last[0] > ci_first[1] and ci_last[0] > ci_rand[1] and min(fracs) >= 0.7
          and wall < 1800)
    report_criterion(4, "learning trend", ok,
                     f"final-10% reward CI [{ci_last[0]:.2f}, {ci_last[1]:.2f}] vs first-10% "
                     f"[{ci_first[0]:.2f}, {ci_first[1]:.2f}] vs random [{ci_rand[0]:.2f}, "
                     f"{ci_rand[1]:.2f}]; sum-rate / matched-beam oracle at 40 dBm min "
                     f"{min(fracs):.3f} mean {np.mean(fracs):.3f}; training {wall:.0f}s")
    assert ok


# -- 5 ----------------------------------------------------------------------------

def _decreasing_with_one_inversion(values):
    return sum(b > a for a, b in zip(values, values[1:])) <= 1


@pytest.mark.slow
def test_criterion_5_sensing_trend(tmp_path, report_criterion):
    pmax = [0.0, 10.0, 20.0, 30.0, 40.0]
    rows = run_sweep("", pmax, [0], "spiking", tmp_path, episodes=5, overrides=LEARN,
                     wall_clock=False)
    rows.sort(key=lambda r: r["pmax_dbm"])
    th = [r["rmse_theta"] for r in rows]
    dd = [r["rmse_d"] for r in rows]
    top = rows[-1]
    bound_ratio = top["rmse_theta"] / math.sqrt(top["mean_crlb_theta"])
    ok_t = _decreasing_with_one_inversion(th)
    ok_d = _decreasing_with_one_inversion(dd)
    ok = ok_t and ok_d and bound_ratio <= 1.5
    report_criterion(5, "sensing trend", ok,
                     "RMSE_theta " + ", ".join(f"{v:.3e}" for v in th)
                     + f" (monotone={ok_t}); RMSE_d " + ", ".join(f"{v:.3e}" for v in dd)
                     + f" (monotone={ok_d}); RMSE_theta/sqrt(CRLB) at 40 dBm {bound_ratio:.3f}")
    assert ok


# -- 6 ----------------------------------------------------------------------------

def test_criterion_6_property_suite(report_criterion):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(Path(__file__).with_name("test_properties.py"))],
                          capture_output=True, text=True)
    code = proc.returncode
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    elapsed = time.perf_counter() - t0
    ok = code == 0 and elapsed < 60
    report_criterion(6, "physics property suite", ok,
                     f"1000 examples per property, {summary}, {elapsed:.2f}s")
    assert ok


# -- 7 ----------------------------------------------------------------------------

def test_criterion_7_determinism(tmp_path, report_criterion):
    logs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--iterations", "5", "--seed", "11", "--no-wall-clock",
                     "--out", str(out)]) == 0
        logs.append((out / "metrics.jsonl").read_bytes())
    ok = logs[0] == logs[1] and len(logs[0]) > 0
    report_criterion(7, "determinism", ok,
                     f"two 5-iteration runs, metrics logs identical={logs[0] == logs[1]} "
                     f"({len(logs[0])} bytes)")
    assert ok
