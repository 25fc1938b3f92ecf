"""Vehicle kinematics and the beamforming MDP environment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array import steering_matrix
from .channel import (BeamPlan, LinkConstants, comm_sinr_all, gain_matrix, jain_index,
                      matched_plan, rates_from_sinr)
from .config import ScenarioConfig
from .estimation import (ANGLE_MARGIN, D_FLOOR, EstimatedVehicleState, crlb_theta_all,
                         measure_and_estimate_all, noise_variances_all)

V_FLOOR = 0.1
OBS_CLIP = 5.0
# keeps every power strictly positive when one logit dominates
POWER_FLOOR = 1e-12


@dataclass(frozen=True)
class VehicleState:
    theta: float
    d: float
    v: float


@dataclass(frozen=True)
class KinematicsNoise:
    sigma_theta: float = 0.0
    sigma_d: float = 0.0
    sigma_v: float = 0.0

    def __post_init__(self):
        if min(self.sigma_theta, self.sigma_d, self.sigma_v) < 0:
            raise ValueError("kinematic noise std must be >= 0")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "KinematicsNoise":
        return cls(cfg.sigma_theta_rad, cfg.sigma_d_m, cfg.sigma_v_mps)


@dataclass(frozen=True)
class BeamAction:
    steer_angles: np.ndarray
    power_logits: np.ndarray


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def evolve_arrays(thetas, dists, vels, dt, noise: KinematicsNoise, rng):
    """One slot of the constant-velocity road model for all vehicles.

    Returns (thetas, dists, vels, clamped) with ``clamped`` marking vehicles whose
    range hit the floor.
    """
    w = rng.standard_normal((len(thetas), 3))
    new_t = thetas + vels * dt * np.sin(thetas) / dists + noise.sigma_theta * w[:, 0]
    new_d = dists - vels * dt * np.cos(thetas) + noise.sigma_d * w[:, 1]
    new_v = vels + noise.sigma_v * w[:, 2]
    clamped = new_d <= D_FLOOR
    new_t = np.clip(new_t, ANGLE_MARGIN, np.pi - ANGLE_MARGIN)
    new_d = np.maximum(new_d, D_FLOOR)
    new_v = np.maximum(new_v, V_FLOOR)
    return new_t, new_d, new_v, clamped


def evolve(s: VehicleState, dt: float, noise: KinematicsNoise, rng) -> VehicleState:
    t, d, v, _ = evolve_arrays(np.array([s.theta]), np.array([s.d]), np.array([s.v]), dt, noise, rng)
    return VehicleState(float(t[0]), float(d[0]), float(v[0]))


def init_episode(cfg: ScenarioConfig, rng) -> list[VehicleState]:
    """Vehicles at the configured road positions, RSU at the origin.

    The angle convention is cos(theta) = -x / d so that a vehicle approaching
    from x < 0 has cos(theta) > 0 and a shrinking range.
    """
    out = []
    for x, y in cfg.positions:
        d = float(np.hypot(x, y))
        theta = float(np.arctan2(y, -x))
        v = float(rng.uniform(cfg.v_min, cfg.v_max))
        out.append(VehicleState(theta, d, v))
    return out


def _softmax(x):
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def decode_action(raw, cfg: ScenarioConfig, centers) -> tuple[BeamPlan, BeamAction]:
    """Map 2K unbounded reals to beams around ``centers`` and a power split."""
    raw = np.nan_to_num(np.asarray(raw, dtype=float), nan=0.0, posinf=1e6, neginf=-1e6)
    k = cfg.n_vehicles
    if raw.shape != (2 * k,):
        raise ValueError(f"raw action must have length {2 * k}, got {raw.shape}")
    angles = np.clip(np.asarray(centers, dtype=float) + cfg.angle_span * np.tanh(raw[:k]),
                     ANGLE_MARGIN, np.pi - ANGLE_MARGIN)
    w = _softmax(raw[k:])
    w = (w + POWER_FLOOR) / (1.0 + k * POWER_FLOOR)
    plan = BeamPlan(steering_matrix(angles, cfg.n_ta), cfg.pmax_w * w)
    return plan, BeamAction(angles, raw[k:].copy())


def reward(plan: BeamPlan, thetas, dists, cfg: ScenarioConfig, link: LinkConstants | None = None,
           gains=None):
    """Indicator-gated R*J - mean CRLB_theta - mean CRLB_d at the true states."""
    link = link or LinkConstants.from_config(cfg)
    g = gain_matrix(plan, thetas) if gains is None else gains
    sinr = comm_sinr_all(plan, thetas, dists, link, g)
    rates = rates_from_sinr(sinr)
    total = float(rates.sum())
    fair = jain_index(rates, cfg.fairness_standard) if total > 0 else 0.0
    var_delay, _, capped = noise_variances_all(plan, thetas, dists, link, cfg.alpha_tau,
                                               cfg.alpha_mu, cfg.cap_d, g)
    c_theta = crlb_theta_all(plan, thetas, dists, link, cfg.cap_theta)
    c_d = np.minimum(var_delay * 299_792_458.0**2 / 4.0, cfg.cap_d)
    m_theta = float(c_theta.mean())
    m_d = float(c_d.mean())
    ok = m_theta <= cfg.eps_theta and m_d <= cfg.eps_d
    r = (total * fair - m_theta - m_d) if ok else 0.0
    info = {
        "sum_rate": total,
        "rates": rates,
        "comm_sinr": sinr,
        "fairness": fair,
        "crlb_theta": c_theta,
        "crlb_d": c_d,
        "crlb_theta_mean": m_theta,
        "crlb_d_mean": m_d,
        "constraint_ok": ok,
        "sensing_lost": capped,
    }
    return float(r), info


class V2XEnv:
    """Single-RSU, K-vehicle episode. One instance is not thread-safe."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        self.cfg = cfg
        self.link = LinkConstants.from_config(cfg)
        self.knoise = KinematicsNoise.from_config(cfg)
        self._seeds = np.random.SeedSequence(seed)
        self.n = 0
        self.done = True

    @property
    def obs_dim(self) -> int:
        return self.cfg.obs_dim

    @property
    def act_dim(self) -> int:
        return self.cfg.act_dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    # -- helpers --------------------------------------------------------------
    @property
    def states(self) -> list[VehicleState]:
        return [VehicleState(float(t), float(d), float(v))
                for t, d, v in zip(self.thetas, self.dists, self.vels)]

    def _sense(self, plan: BeamPlan):
        """Measure all vehicles with ``plan`` and refresh the estimates."""
        cfg = self.cfg
        g = gain_matrix(plan, self.thetas)
        vd, vm, capped = noise_variances_all(plan, self.thetas, self.dists, self.link,
                                             cfg.alpha_tau, cfg.alpha_mu, cfg.cap_d, g)
        c_theta = crlb_theta_all(plan, self.thetas, self.dists, self.link, cfg.cap_theta)
        th, dh, vh, ok, _ = measure_and_estimate_all(self.thetas, self.dists, self.vels, plan,
                                                     self.link, vd, vm, c_theta, self.v_hat,
                                                     self.meas_rng)
        self.estimates = [EstimatedVehicleState(float(a), float(b), float(v), float(s), bool(r))
                          for a, b, v, s, r in zip(th, dh, vh, self.prev_sinr, ok)]
        self.sensing_capped = capped
        self.theta_hat, self.d_hat, self.v_hat = th, dh, vh
        return c_theta, np.minimum(vd * 299_792_458.0**2 / 4.0, cfg.cap_d)

    def observation(self) -> np.ndarray:
        cfg = self.cfg
        feats = np.stack([
            self.theta_hat / np.pi,
            self.d_hat / cfg.norm_dist_m,
            self.v_hat / cfg.norm_vel_mps,
            np.log10(1.0 + self.prev_sinr) / cfg.norm_sinr,
        ], axis=1)
        return np.clip(feats.reshape(-1), -OBS_CLIP, OBS_CLIP)

    # -- episode API -----------------------------------------------------------
    def reset(self, seed: int | None = None) -> np.ndarray:
        ss = np.random.SeedSequence(seed) if seed is not None else self._seeds.spawn(1)[0]
        kin_ss, meas_ss = ss.spawn(2)
        self.kin_rng = np.random.default_rng(kin_ss)
        self.meas_rng = np.random.default_rng(meas_ss)
        cfg = self.cfg
        init = init_episode(cfg, self.kin_rng)
        self.thetas = np.array([s.theta for s in init])
        self.dists = np.array([s.d for s in init])
        self.vels = np.array([s.v for s in init])
        self.v_hat = np.full(cfg.n_vehicles, 0.5 * (cfg.v_min + cfg.v_max))
        # acquisition slot: beams on the entering vehicles with an equal split
        plan0 = matched_plan(self.thetas, cfg.n_ta, cfg.pmax_w)
        self.prev_sinr = comm_sinr_all(plan0, self.thetas, self.dists, self.link)
        self._sense(plan0)
        self.n = 0
        self.done = False
        return self.observation()

    def step(self, raw_action) -> StepOutcome:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        cfg = self.cfg
        plan, action = decode_action(raw_action, cfg, self.theta_hat)
        g = gain_matrix(plan, self.thetas)
        r, info = reward(plan, self.thetas, self.dists, cfg, self.link, g)
        info["theta_err"] = self.theta_hat - self.thetas
        info["d_err"] = self.d_hat - self.dists
        info["v_err"] = self.v_hat - self.vels
        info["oracle_sum_rate"] = _oracle_sum_rate(self.thetas, self.dists, cfg, self.link)
        info["steer_angles"] = action.steer_angles
        info["powers"] = plan.powers
        self.prev_sinr = info["comm_sinr"]

        self.thetas, self.dists, self.vels, clamped = evolve_arrays(
            self.thetas, self.dists, self.vels, cfg.slot_s, self.knoise, self.kin_rng)
        info["range_clamped"] = clamped
        c_theta, c_d = self._sense(plan)
        info["est_theta_err"] = self.theta_hat - self.thetas
        info["est_d_err"] = self.d_hat - self.dists
        info["est_crlb_theta"] = c_theta
        info["est_crlb_d"] = c_d

        self.n += 1
        self.done = self.n >= cfg.horizon or bool(np.all(self.dists > cfg.d_max))
        info["step"] = self.n
        return StepOutcome(self.observation(), r, self.done, info)


def step(env: V2XEnv, raw_action) -> StepOutcome:
    return env.step(raw_action)


def _oracle_sum_rate(thetas, dists, cfg, link) -> float:
    plan = matched_plan(thetas, cfg.n_ta, cfg.pmax_w)
    return float(rates_from_sinr(comm_sinr_all(plan, thetas, dists, link)).sum())
