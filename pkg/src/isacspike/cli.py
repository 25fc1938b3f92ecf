"""Command-line entry point: train, eval, sweep and energy-report."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .energy import energy_dense
from .rl import AGENT_KINDS, Agent, Trainer, baseline_random, evaluate

log = logging.getLogger("isacspike")

METRICS = "metrics.jsonl"
CHECKPOINT = "checkpoint.bin"


def _clean(x):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _append_jsonl(path: Path, record: dict):
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(_clean(record), sort_keys=True) + "\n")


def _write_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(_clean(r))


def _read_jsonl(path: Path):
    """Returns (records, number of malformed lines)."""
    records, bad = [], 0
    if not path.exists():
        return records, bad
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            bad += 1
            continue
        if isinstance(rec, dict):
            records.append(rec)
        else:
            bad += 1
    return records, bad


def _config(args, **extra) -> ScenarioConfig:
    overrides = dict(extra)
    if getattr(args, "pmax_dbm", None) is not None and not isinstance(args.pmax_dbm, list):
        overrides["pmax_dbm"] = args.pmax_dbm
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "batch_size", None) is not None:
        overrides["batch_size"] = args.batch_size
    return load_config(args.config, **overrides)


def _energy_ratio(agent: Agent, cfg: ScenarioConfig, energy_per_step_j: float) -> float:
    """Dense-equivalent inference energy over the measured one (same layer sizes)."""
    if agent.actor is None or energy_per_step_j <= 0:
        return float("nan")
    return energy_dense(agent.actor.layer_dims, cfg.e_mac_pj) / energy_per_step_j


# -- train -------------------------------------------------------------------------

def run_training(cfg: ScenarioConfig, agent_kind: str, seed: int, out: Path, resume=False,
                 wall_clock=True, progress=True) -> Trainer:
    out.mkdir(parents=True, exist_ok=True)
    metrics = out / METRICS
    ckpt = out / CHECKPOINT
    if resume and ckpt.exists():
        trainer = load_checkpoint(ckpt, cfg, record_wall_clock=wall_clock)
        records, _ = _read_jsonl(metrics)
        kept = [r for r in records
                if r.get("type") != "iteration" or r.get("iteration", 0) <= trainer.iteration]
        metrics.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept),
                           encoding="utf-8")
        log.info("resumed from iteration %d", trainer.iteration)
    else:
        if metrics.exists():
            metrics.unlink()
        trainer = Trainer(cfg, agent_kind, seed=seed, record_wall_clock=wall_clock)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    h = cfg.config_hash()
    stopped = "iterations"
    while trainer.iteration < cfg.iterations:
        rep = trainer.train_iteration()
        _append_jsonl(metrics, {"type": "iteration", "config_hash": h, "agent": trainer.agent.kind,
                                "seed": seed, **rep.to_dict()})
        if progress and (rep.iteration % 10 == 0 or rep.iteration == 1):
            log.info("iter %d  reward %.3f  sum-rate %.3f  critic %.3g", rep.iteration,
                     rep.mean_reward, rep.mean_sum_rate, rep.critic_loss)
        if rep.iteration % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, trainer)
        if trainer.plateaued():
            stopped = "plateau"
            log.info("reward plateau at iteration %d", rep.iteration)
            break
    save_checkpoint(ckpt, trainer)
    records, _ = _read_jsonl(metrics)
    it = [r for r in records if r.get("type") == "iteration"]
    rewards = [r["mean_reward"] for r in it]
    w = max(1, len(rewards) // 10)
    _write_json(out / "summary.json", {
        "config_hash": h,
        "agent": trainer.agent.kind,
        "seed": seed,
        "iterations": trainer.iteration,
        "stopped_by": stopped,
        "first_window_reward": float(np.mean(rewards[:w])) if rewards else None,
        "final_window_reward": float(np.mean(rewards[-w:])) if rewards else None,
        "energy_train_j": float(sum(r["energy_train_j"] for r in it)),
        "episodes": int(sum(r["episodes"] for r in it)),
    })
    return trainer


def cmd_train(args) -> int:
    cfg = _config(args)
    run_training(cfg, args.agent, args.seed, Path(args.out), resume=args.resume,
                 wall_clock=not args.no_wall_clock)
    return 0


# -- eval --------------------------------------------------------------------------

def _eval_agent(args):
    if args.checkpoint:
        header, _ = read_checkpoint(args.checkpoint)
        cfg = parse_config(header["config"])
        if args.pmax_dbm is not None:
            cfg = cfg.replace(pmax_dbm=args.pmax_dbm)
        agent = load_checkpoint(args.checkpoint).agent
        agent.cfg = cfg
        return agent, cfg
    if args.agent != "random":
        raise CheckpointError("eval needs a checkpoint unless --agent random")
    cfg = _config(args)
    return Agent("random", cfg.obs_dim, cfg.act_dim, cfg), cfg


def write_eval(out: Path, agent: Agent, cfg: ScenarioConfig, report, seed) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "eval.csv", report.rows)
    summary = {"config_hash": cfg.config_hash(), "agent": agent.kind, "seed": seed,
               "pmax_dbm": cfg.pmax_dbm, **report.summary(),
               "dense_energy_ratio": _energy_ratio(agent, cfg, report.energy_per_step_j)}
    _write_json(out / "eval_summary.json", summary)
    _append_jsonl(out / METRICS, {"type": "eval", **summary})
    return summary


def cmd_eval(args) -> int:
    agent, cfg = _eval_agent(args)
    if agent.kind == "random":
        report = baseline_random(cfg, args.episodes, seed=args.seed)
    else:
        report = evaluate(agent, cfg, args.episodes, seed=args.seed)
    s = write_eval(Path(args.out), agent, cfg, report, args.seed)
    print(f"mean sum-rate {s['mean_sum_rate']:.4f} bps/Hz  RMSE theta {s['rmse_theta']:.4g} rad  "
          f"RMSE d {s['rmse_d']:.4g} m  energy/step {s['energy_per_step_j']:.4g} J")
    return 0


# -- sweep -------------------------------------------------------------------------

def _sweep_job(job):
    cfg_text, overrides, kind, seed, episodes, out, wall_clock = job
    cfg = parse_config(cfg_text, **overrides)
    out = Path(out)
    if kind == "random":
        agent = Agent("random", cfg.obs_dim, cfg.act_dim, cfg)
        report = baseline_random(cfg, episodes, seed=seed + 10_000)
    else:
        trainer = run_training(cfg, kind, seed, out, wall_clock=wall_clock, progress=False)
        agent = trainer.agent
        report = evaluate(agent, cfg, episodes, seed=seed + 10_000)
    s = write_eval(out, agent, cfg, report, seed)
    return {"pmax_dbm": cfg.pmax_dbm, "seed": seed, "agent": kind,
            "mean_sum_rate": s["mean_sum_rate"], "oracle_sum_rate": s["oracle_sum_rate"],
            "rmse_theta": s["rmse_theta"], "rmse_d": s["rmse_d"],
            "mean_crlb_theta": s["mean_crlb_theta"], "mean_crlb_d": s["mean_crlb_d"],
            "mean_reward": s["mean_reward"], "energy_per_step_j": s["energy_per_step_j"],
            "dense_energy_ratio": s["dense_energy_ratio"]}


SWEEP_COLUMNS = ["pmax_dbm", "seed", "agent", "mean_sum_rate", "oracle_sum_rate", "rmse_theta",
                 "rmse_d", "mean_crlb_theta", "mean_crlb_d", "mean_reward", "energy_per_step_j",
                 "dense_energy_ratio"]


def run_sweep(cfg_text: str, pmax_list, seeds, kind, out: Path, episodes=2, workers=1,
              overrides=None, wall_clock=True) -> list[dict]:
    if not pmax_list or not seeds:
        return []
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in pmax_list:
        for s in seeds:
            ov = dict(overrides or {}, pmax_dbm=float(p))
            jobs.append((cfg_text, ov, kind, int(s), episodes,
                         str(out / f"pmax{float(p):g}_seed{s}"), wall_clock))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    _write_csv(out / "sweep.csv", rows, SWEEP_COLUMNS)
    for r in rows:
        _append_jsonl(out / "sweep.jsonl", r)
    return rows


def cmd_sweep(args) -> int:
    if not args.pmax_dbm:
        log.info("empty P_max list, nothing to do")
        return 0
    text = Path(args.config).read_text() if args.config else ""
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    parse_config(text, **overrides)  # fail early on a bad config
    rows = run_sweep(text, args.pmax_dbm, args.seeds, args.agent, Path(args.out), args.episodes,
                     args.workers, overrides, wall_clock=not args.no_wall_clock)
    for r in rows:
        print(f"P_max {r['pmax_dbm']:5.1f} dBm  seed {r['seed']}  sum-rate {r['mean_sum_rate']:.4f}  "
              f"RMSE theta {r['rmse_theta']:.4g}  RMSE d {r['rmse_d']:.4g}")
    return 0


# -- energy report -----------------------------------------------------------------

def energy_report(records) -> list[dict]:
    """Aggregate per (agent, context): op counts, energy, energy per episode."""
    acc = {}
    for r in records:
        kind = r.get("type")
        if kind == "iteration":
            ctx, episodes = "train", r.get("episodes", 0)
        elif kind == "eval":
            ctx, episodes = "inference", r.get("episodes", 0)
        else:
            continue
        key = (r.get("agent", "?"), ctx)
        a = acc.setdefault(key, {"agent": key[0], "context": ctx, "records": 0, "episodes": 0,
                                 "flops_ac": 0.0, "flops_mac": 0.0, "energy_j": 0.0,
                                 "_rates": []})
        a["records"] += 1
        a["episodes"] += int(episodes or 0)
        a["flops_ac"] += float(r.get("flops_ac", 0.0) or 0.0)
        a["flops_mac"] += float(r.get("flops_mac", 0.0) or 0.0)
        if kind == "iteration":
            a["energy_j"] += float(r.get("energy_train_j", 0.0) or 0.0)
        else:
            a["energy_j"] += float(r.get("energy_per_step_j", 0.0) or 0.0) * int(r.get("steps", 0))
        if r.get("firing_rates"):
            a["_rates"].append(float(np.mean(r["firing_rates"])))
    rows = []
    for a in acc.values():
        rates = a.pop("_rates")
        a["mean_firing_rate"] = float(np.mean(rates)) if rates else None
        a["energy_per_episode_j"] = a["energy_j"] / a["episodes"] if a["episodes"] else 0.0
        rows.append(a)
    rows.sort(key=lambda r: (r["context"], r["agent"]))
    return rows


ENERGY_COLUMNS = ["context", "agent", "records", "episodes", "flops_ac", "flops_mac", "energy_j",
                  "energy_per_episode_j", "mean_firing_rate"]


def cmd_energy_report(args) -> int:
    path = Path(args.metrics)
    paths = sorted(path.rglob(METRICS)) if path.is_dir() else [path]
    records, bad = [], 0
    for p in paths:
        r, b = _read_jsonl(p)
        records += r
        bad += b
    if bad:
        log.warning("skipped %d malformed line(s)", bad)
    rows = energy_report(records)
    ratios = {}
    by = {(r["agent"], r["context"]): r for r in rows}
    for ctx in ("train", "inference"):
        d, s = by.get(("dense", ctx)), by.get(("spiking", ctx))
        if d and s and s["energy_per_episode_j"] > 0:
            ratios[ctx] = d["energy_per_episode_j"] / s["energy_per_episode_j"]
    if args.out:
        _write_csv(Path(args.out), rows, ENERGY_COLUMNS)
    print(f"{'context':<10} {'agent':<8} {'episodes':>8} {'energy_j':>12} {'J/episode':>12} {'rate':>6}")
    for r in rows:
        rate = "" if r["mean_firing_rate"] is None else f"{r['mean_firing_rate']:.3f}"
        print(f"{r['context']:<10} {r['agent']:<8} {r['episodes']:>8d} {r['energy_j']:>12.4g} "
              f"{r['energy_per_episode_j']:>12.4g} {rate:>6}")
    if not rows:
        print("no energy records (all totals 0)")
    for ctx, v in ratios.items():
        print(f"dense/spiking energy per episode ({ctx}): {v:.3f}")
    print(f"malformed lines skipped: {bad}")
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isacspike",
                                description="ISAC V2X beamforming with spiking actor-critic agents")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, agent_default="spiking"):
        sp.add_argument("--config", help="INI config file (defaults apply to missing keys)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--agent", choices=AGENT_KINDS, default=agent_default)
        sp.add_argument("--out", default="runs/default", help="output directory")
        sp.add_argument("--workers", type=int, default=1,
                        help="parallel processes for seed/P_max fan-out")

    t = sub.add_parser("train", help="train an agent")
    common(t)
    t.add_argument("--pmax-dbm", type=float, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.bin")
    t.add_argument("--no-wall-clock", action="store_true",
                   help="log wall_s as 0 so metrics are byte-reproducible")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint (or the random baseline)")
    common(e)
    e.add_argument("checkpoint", nargs="?", help="checkpoint.bin from a training run")
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--pmax-dbm", type=float, default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate across P_max values")
    common(s)
    s.add_argument("--pmax-dbm", type=float, nargs="*", default=[0, 10, 20, 30, 40])
    s.add_argument("--seeds", type=int, nargs="*", default=[0])
    s.add_argument("--episodes", type=int, default=2)
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--no-wall-clock", action="store_true")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("energy-report", help="aggregate energy records from metrics logs")
    r.add_argument("metrics", help="metrics.jsonl file or a directory searched recursively")
    r.add_argument("--out", default=None, help="CSV output path")
    r.set_defaults(func=cmd_energy_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("ISACSPIKE_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
