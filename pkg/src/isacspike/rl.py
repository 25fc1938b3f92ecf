"""On-policy actor-critic training with a clipped policy-ratio objective.

The actor outputs the mean of a diagonal Gaussian over the 2K raw action
components; the log-std is a learned state-independent vector. Advantages are
Monte-Carlo returns-to-go minus the critic's value, normalized per batch.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ScenarioConfig
from .energy import EnergyLedger, record_forward
from .snn import Adam, DenseNetwork, LifParams, SpikingNetwork, backward, forward
from .world import V2XEnv

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOG_2PI = math.log(2.0 * math.pi)


# -- Gaussian policy -------------------------------------------------------------

@dataclass
class GaussianPolicyHead:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("policy mean must be finite")
        self.log_std = np.clip(np.asarray(self.log_std, dtype=float), LOG_STD_MIN, LOG_STD_MAX)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def log_prob(head: GaussianPolicyHead, actions) -> np.ndarray | float:
    """Exact diagonal-Gaussian log density; batched over leading axes."""
    a = np.asarray(actions, dtype=float)
    z = (a - head.mean) / head.std
    d = a.shape[-1]
    lp = -0.5 * np.sum(z * z, axis=-1) - np.sum(head.log_std) - 0.5 * d * LOG_2PI
    return float(lp) if np.ndim(lp) == 0 else lp


def sample_action(head: GaussianPolicyHead, rng):
    """Returns (raw_action, log_prob)."""
    eps = rng.standard_normal(head.mean.shape)
    a = head.mean + head.std * eps
    return a, log_prob(head, a)


# -- returns, advantages, losses --------------------------------------------------

def returns_to_go(rewards, discount: float, dones=None) -> np.ndarray:
    """R_n = sum_{l>=n} G^(l-n) r_l inside each episode.

    ``dones[n]`` marks the last transition of an episode; without it the whole
    sequence is one episode.
    """
    r = np.asarray(rewards, dtype=float)
    done = np.zeros(r.shape, bool) if dones is None else np.asarray(dones, bool)
    out = np.empty_like(r)
    acc = 0.0
    for n in range(r.size - 1, -1, -1):
        if done[n]:
            acc = 0.0
        acc = r[n] + discount * acc
        out[n] = acc
    return out


def compute_advantages(returns, values, normalize: bool = True) -> np.ndarray:
    adv = np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def clipped_objective(logp_new, logp_old, adv, eps: float = 0.2):
    """Mean of min(rho*A, clip-branch) with clip-branch (1+eps)A for A >= 0, else (1-eps)A.

    Returns (objective, d objective / d logp_new per sample, n_excluded). Samples
    with a non-finite ratio are dropped from the mean and counted.
    """
    logp_new = np.asarray(logp_new, dtype=float)
    adv = np.asarray(adv, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        rho = np.exp(logp_new - np.asarray(logp_old, dtype=float))
    ok = np.isfinite(rho)
    n_ok = int(ok.sum())
    grad = np.zeros_like(adv)
    if n_ok == 0:
        return 0.0, grad, int(adv.size)
    rho_v, adv_v = rho[ok], adv[ok]
    unclipped = rho_v * adv_v
    clip_branch = np.where(adv_v >= 0, (1.0 + eps) * adv_v, (1.0 - eps) * adv_v)
    use_ratio = unclipped <= clip_branch
    value = np.where(use_ratio, unclipped, clip_branch)
    # d(rho*A)/d logp = rho*A; the clip branch is constant in the policy
    grad[ok] = np.where(use_ratio, unclipped, 0.0) / n_ok
    return float(value.mean()), grad, int(adv.size - n_ok)


def mse_loss(values, targets):
    """Returns (mean squared error, gradient w.r.t. values)."""
    v = np.asarray(values, dtype=float)
    diff = v - np.asarray(targets, dtype=float)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- agent ------------------------------------------------------------------------

AGENT_KINDS = ("spiking", "dense", "random")


def _make_net(kind, sizes, rng, output_gain, lif):
    if kind == "spiking":
        return SpikingNetwork.create(sizes, lif=lif, rng=rng, output_gain=output_gain)
    return DenseNetwork.create(sizes, rng=rng, output_gain=output_gain)


def lif_from_config(cfg: ScenarioConfig) -> LifParams:
    return LifParams(leak=cfg.leak, threshold=cfg.u_th, reset=cfg.u_r, steps=cfg.steps,
                     surrogate_eta=cfg.eta)


class Agent:
    """Actor (policy mean network + log-std) and critic of the same network kind.

    ``kind='random'`` has no networks and samples N(0, I) raw actions.
    """

    def __init__(self, kind: str, obs_dim: int, act_dim: int, cfg: ScenarioConfig, rng=None):
        if kind not in AGENT_KINDS:
            raise ValueError(f"agent kind must be one of {AGENT_KINDS}, got {kind!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.kind = kind
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.value_scale = cfg.value_scale
        self.log_std = np.full(act_dim, float(cfg.init_log_std))
        if kind == "random":
            self.actor = self.critic = None
            self.actor_opt = self.critic_opt = self.std_opt = None
            self.log_std[:] = 0.0
            return
        lif = lif_from_config(cfg)
        h = cfg.hidden
        self.actor = _make_net(kind, [obs_dim, h, h, act_dim], rng, 0.01, lif)
        self.critic = _make_net(kind, [obs_dim, h, h, 1], rng, 1.0, lif)
        self.actor_opt = Adam(self.actor.params, cfg.lr_actor, max_grad_norm=cfg.max_grad_norm)
        self.std_opt = Adam([self.log_std], cfg.lr_log_std, max_grad_norm=cfg.max_grad_norm)
        self.critic_opt = Adam(self.critic.params, cfg.lr_critic, max_grad_norm=cfg.max_grad_norm)

    @property
    def actor_params(self) -> list[np.ndarray]:
        return [] if self.actor is None else self.actor.params + [self.log_std]

    @property
    def trainable(self) -> bool:
        return self.actor is not None

    def policy(self, obs):
        """Returns (GaussianPolicyHead, cache) for a batch of observations."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if self.actor is None:
            return GaussianPolicyHead(np.zeros((obs.shape[0], self.act_dim)), self.log_std), None
        mean, cache = forward(self.actor, obs)
        return GaussianPolicyHead(mean, self.log_std), cache

    def values(self, obs):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        if self.critic is None:
            return np.zeros(obs.shape[0]), None
        out, cache = forward(self.critic, obs)
        return self.value_scale * out[:, 0], cache

    def act(self, obs, rng, deterministic=False):
        head, cache = self.policy(obs)
        if deterministic and self.kind != "random":
            return head.mean, log_prob(head, head.mean), cache
        a, lp = sample_action(head, rng)
        return a, lp, cache

    def update_actor(self, obs, actions, logp_old, adv, eps):
        head, cache = self.policy(obs)
        lp = log_prob(head, actions)
        obj, g_lp, excluded = clipped_objective(lp, logp_old, adv, eps)
        z = (actions - head.mean) / head.std
        g_mean = g_lp[:, None] * z / head.std
        g_log_std = np.sum(g_lp[:, None] * (z * z - 1.0), axis=0)
        self.actor_opt.lr = self.cfg.lr_actor
        self.actor_opt.step(self.actor.params, backward(self.actor, cache, g_mean), ascent=True)
        self.std_opt.lr = self.cfg.lr_log_std
        self.std_opt.step([self.log_std], [g_log_std], ascent=True)
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)
        return obj, excluded, cache

    def update_critic(self, obs, returns):
        v, cache = self.values(obs)
        loss, g_v = mse_loss(v, returns)
        grads = backward(self.critic, cache, (self.value_scale * g_v)[:, None])
        self.critic_opt.lr = self.cfg.lr_critic
        self.critic_opt.step(self.critic.params, grads)
        return loss, cache


# -- trajectories -------------------------------------------------------------------

@dataclass
class TrajectoryBatch:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    returns: np.ndarray = None
    advantages: np.ndarray = None
    sum_rates: np.ndarray = None

    def __post_init__(self):
        n = len(self.rewards)
        for name in ("observations", "actions", "log_probs", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self):
        return len(self.rewards)

    @property
    def episode_starts(self) -> np.ndarray:
        return np.flatnonzero(np.concatenate([[True], self.dones[:-1]]))


def advantage(batch: TrajectoryBatch, agent: Agent, normalize: bool = True) -> np.ndarray:
    v, _ = agent.values(batch.observations)
    return compute_advantages(batch.returns, v, normalize)


def actor_objective(batch: TrajectoryBatch, agent: Agent, eps: float = 0.2):
    head, _ = agent.policy(batch.observations)
    return clipped_objective(log_prob(head, batch.actions), batch.log_probs, batch.advantages, eps)


def critic_loss(batch: TrajectoryBatch, agent: Agent):
    v, _ = agent.values(batch.observations)
    return mse_loss(v, batch.returns)


def collect(agent: Agent, envs: list, n_transitions: int, rng, ledger: EnergyLedger | None = None,
            seeds=None):
    """Run whole episodes, ``len(envs)`` at a time in lockstep, until at least
    ``n_transitions`` are gathered. Returns (batch, mean actor firing rates)."""
    obs_l, act_l, lp_l, rew_l, done_l, rate_l = [], [], [], [], [], []
    rates, rate_n = None, 0
    total = 0
    while total < n_transitions:
        obs = [env.reset(seed=int(rng.integers(2**63))) for env in envs]
        traj = [[] for _ in envs]
        live = list(range(len(envs)))
        while live:
            o = np.stack([obs[i] for i in live])
            a, lp, cache = agent.act(o, rng)
            if ledger is not None and agent.actor is not None:
                record_forward(ledger, agent.actor, cache, len(live), backward=False,
                               backward_factor=agent.cfg.backward_factor)
            if agent.kind == "spiking":
                r = np.array(cache.firing_rates)
                rates = r * len(live) if rates is None else rates + r * len(live)
                rate_n += len(live)
            nxt = []
            for j, i in enumerate(live):
                out = envs[i].step(a[j])
                traj[i].append((obs[i], a[j], lp[j], out.reward, out.done,
                                out.info.get("sum_rate", np.nan)))
                obs[i] = out.observation
                if not out.done:
                    nxt.append(i)
            live = nxt
        for t in traj:
            for o_, a_, lp_, r_, d_, sr in t:
                obs_l.append(o_)
                act_l.append(a_)
                lp_l.append(lp_)
                rew_l.append(r_)
                done_l.append(d_)
                rate_l.append(sr)
            total += len(t)
    batch = TrajectoryBatch(np.array(obs_l), np.array(act_l), np.array(lp_l), np.array(rew_l),
                            np.array(done_l, bool), sum_rates=np.array(rate_l))
    mean_rates = [] if rates is None else (rates / rate_n).tolist()
    return batch, mean_rates


# -- training -----------------------------------------------------------------------

@dataclass
class IterationReport:
    iteration: int
    mean_reward: float
    objective: float
    critic_loss: float
    firing_rates: list
    energy_train_j: float
    wall_s: float
    mean_sum_rate: float = float("nan")
    transitions: int = 0
    episodes: int = 0
    log_std_mean: float = 0.0
    excluded: int = 0
    skipped_updates: int = 0
    flops_ac: float = 0.0
    flops_mac: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class Trainer:
    """Owns the agent, optimizers, rng and environments of one training run."""

    def __init__(self, cfg: ScenarioConfig, kind: str = "spiking", seed: int | None = None,
                 env_factory=None, record_wall_clock: bool = True):
        self.cfg = cfg
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        init_ss, run_ss = ss.spawn(2)
        self.env_factory = env_factory or (lambda: V2XEnv(cfg))
        probe = self.env_factory()
        self.agent = Agent(kind, probe.obs_dim, probe.act_dim, cfg, np.random.default_rng(init_ss))
        n_env = max(1, math.ceil(cfg.batch_size / probe.horizon))
        self.envs = [probe] + [self.env_factory() for _ in range(n_env - 1)]
        self.rng = np.random.default_rng(run_ss)
        self.iteration = 0
        self.record_wall_clock = record_wall_clock
        self.history: list[IterationReport] = []

    def train_iteration(self) -> IterationReport:
        cfg, agent = self.cfg, self.agent
        t0 = time.perf_counter()
        ledger = EnergyLedger(e_ac_pj=cfg.e_ac_pj, e_mac_pj=cfg.e_mac_pj, context="train")
        batch, rates = collect(agent, self.envs, cfg.batch_size, self.rng, ledger)
        batch.returns = returns_to_go(batch.rewards, cfg.discount, batch.dones)
        objs, losses, excluded = [], [], 0
        if agent.trainable:
            v, vcache = agent.values(batch.observations)
            record_forward(ledger, agent.critic, vcache, len(batch), backward=False,
                           backward_factor=cfg.backward_factor)
            batch.advantages = compute_advantages(batch.returns, v, cfg.normalize_advantages)
            n = len(batch)
            for _ in range(cfg.epochs):
                perm = self.rng.permutation(n)
                for start in range(0, n, cfg.minibatch):
                    idx = perm[start:start + cfg.minibatch]
                    obj, exc, acache = agent.update_actor(
                        batch.observations[idx], batch.actions[idx], batch.log_probs[idx],
                        batch.advantages[idx], cfg.clip_eps)
                    loss, ccache = agent.update_critic(batch.observations[idx], batch.returns[idx])
                    record_forward(ledger, agent.actor, acache, len(idx),
                                   backward_factor=cfg.backward_factor)
                    record_forward(ledger, agent.critic, ccache, len(idx),
                                   backward_factor=cfg.backward_factor)
                    objs.append(obj)
                    losses.append(loss)
                    excluded += exc
        self.iteration += 1
        skipped = 0 if not agent.trainable else (agent.actor_opt.skipped + agent.critic_opt.skipped
                                                      + agent.std_opt.skipped)
        report = IterationReport(
            iteration=self.iteration,
            mean_reward=float(batch.rewards.mean()),
            objective=float(np.mean(objs)) if objs else 0.0,
            critic_loss=float(np.mean(losses)) if losses else 0.0,
            firing_rates=rates,
            energy_train_j=ledger.energy_j,
            wall_s=time.perf_counter() - t0 if self.record_wall_clock else 0.0,
            mean_sum_rate=float(np.nanmean(batch.sum_rates)),
            transitions=len(batch),
            episodes=int(batch.dones.sum()),
            log_std_mean=float(agent.log_std.mean()),
            excluded=excluded,
            skipped_updates=skipped,
            flops_ac=ledger.ac_ops,
            flops_mac=ledger.mac_ops,
        )
        self.history.append(report)
        log.debug("iter %d reward %.3f obj %.4f vloss %.3g", report.iteration,
                  report.mean_reward, report.objective, report.critic_loss)
        return report

    def plateaued(self, window: int | None = None, tol: float | None = None) -> bool:
        """True when the last ``window`` iterations improved the smoothed reward by
        less than ``tol`` (relative) over the window before."""
        window = window or self.cfg.plateau_window
        tol = self.cfg.plateau_tol if tol is None else tol
        if len(self.history) < 2 * window:
            return False
        r = np.array([h.mean_reward for h in self.history[-2 * window:]])
        prev, cur = r[:window].mean(), r[window:].mean()
        return cur - prev < tol * abs(prev)


def train_iteration(trainer: Trainer) -> IterationReport:
    return trainer.train_iteration()


# -- evaluation ---------------------------------------------------------------------

@dataclass
class EvalReport:
    episodes: int
    steps: int
    mean_reward: float
    mean_sum_rate: float
    oracle_sum_rate: float
    per_vehicle_rates: list
    fairness: float
    rmse_theta: float
    rmse_d: float
    mean_crlb_theta: float
    mean_crlb_d: float
    constraint_rate: float
    energy_per_step_j: float
    firing_rates: list
    flops_ac: float = 0.0
    flops_mac: float = 0.0
    sum_rate_trajectory: list = field(default_factory=list)
    rows: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d


def evaluate(agent: Agent, cfg: ScenarioConfig, episodes: int, rng=None, seed: int | None = None,
             deterministic: bool = True) -> EvalReport:
    """Roll out the mean action (random agents keep sampling) and summarise.

    Reward, rates and CRLBs are undiscounted per-step means. RMSEs compare the
    post-sensing estimates with the true states of the same slot.
    """
    if episodes <= 0:
        raise ValueError("evaluation needs at least one episode")
    rng = rng if rng is not None else np.random.default_rng(seed)
    env = V2XEnv(cfg)
    ledger = EnergyLedger(e_ac_pj=cfg.e_ac_pj, e_mac_pj=cfg.e_mac_pj, context="inference")
    rows = []
    rates_acc = None
    rate_n = 0
    # episode seeds first, so every policy sees the same episodes for a given rng
    ep_seeds = rng.integers(2**63, size=episodes)
    for ep in range(episodes):
        obs = env.reset(seed=int(ep_seeds[ep]))
        while not env.done:
            a, _, cache = agent.act(obs[None, :], rng, deterministic)
            if agent.actor is not None:
                record_forward(ledger, agent.actor, cache, 1)
            if agent.kind == "spiking":
                r = np.array(cache.firing_rates)
                rates_acc = r if rates_acc is None else rates_acc + r
                rate_n += 1
            out = env.step(a[0])
            info = out.info
            rows.append({
                "episode": ep,
                "step": info["step"],
                "reward": out.reward,
                "sum_rate": info["sum_rate"],
                "oracle_sum_rate": info["oracle_sum_rate"],
                "fairness": info["fairness"],
                "crlb_theta_mean": float(np.mean(info["est_crlb_theta"])),
                "crlb_d_mean": float(np.mean(info["est_crlb_d"])),
                "sq_err_theta": float(np.mean(info["est_theta_err"] ** 2)),
                "sq_err_d": float(np.mean(info["est_d_err"] ** 2)),
                "constraint_ok": bool(info["constraint_ok"]),
                **{f"rate_{k}": float(v) for k, v in enumerate(info["rates"])},
            })
            obs = out.observation
    col = lambda k: np.array([r[k] for r in rows], dtype=float)  # noqa: E731
    steps = np.array([r["step"] for r in rows])
    traj = [float(col("sum_rate")[steps == s].mean()) for s in np.unique(steps)]
    k = cfg.n_vehicles
    return EvalReport(
        episodes=episodes,
        steps=len(rows),
        mean_reward=float(col("reward").mean()),
        mean_sum_rate=float(col("sum_rate").mean()),
        oracle_sum_rate=float(col("oracle_sum_rate").mean()),
        per_vehicle_rates=[float(col(f"rate_{i}").mean()) for i in range(k)],
        fairness=float(col("fairness").mean()),
        rmse_theta=float(np.sqrt(col("sq_err_theta").mean())),
        rmse_d=float(np.sqrt(col("sq_err_d").mean())),
        mean_crlb_theta=float(col("crlb_theta_mean").mean()),
        mean_crlb_d=float(col("crlb_d_mean").mean()),
        constraint_rate=float(col("constraint_ok").mean()),
        energy_per_step_j=ledger.energy_j / len(rows),
        firing_rates=[] if rates_acc is None else (rates_acc / rate_n).tolist(),
        flops_ac=ledger.ac_ops,
        flops_mac=ledger.mac_ops,
        sum_rate_trajectory=traj,
        rows=rows,
    )


def baseline_random(cfg: ScenarioConfig, episodes: int, rng=None, seed: int | None = None) -> EvalReport:
    agent = Agent("random", cfg.obs_dim, cfg.act_dim, cfg)
    return evaluate(agent, cfg, episodes, rng=rng, seed=seed, deterministic=False)


__all__ = [
    "GaussianPolicyHead", "log_prob", "sample_action", "returns_to_go", "compute_advantages",
    "clipped_objective", "mse_loss", "Agent", "TrajectoryBatch", "advantage", "actor_objective",
    "critic_loss", "collect", "IterationReport", "Trainer", "train_iteration", "EvalReport",
    "evaluate", "baseline_random",
]
