"""Sensing/communication link budgets: SINRs, rates and fairness."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import steering_matrix
from .config import ScenarioConfig, db_to_linear


@dataclass(frozen=True)
class LinkConstants:
    n_ta: int
    n_ra: int
    carrier_hz: float
    noise_sense_w: float
    noise_comm_w: float
    kappa: complex
    pathloss_ref_db: float = -30.0
    pathloss_ref_dist_m: float = 1.0
    pathloss_exp: float = 2.4
    matched_gain: float = 10.0

    def __post_init__(self):
        if self.n_ta < 1 or self.n_ra < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.noise_sense_w <= 0 or self.noise_comm_w <= 0:
            raise ValueError("noise powers must be > 0")
        if self.pathloss_exp < 0:
            raise ValueError("path-loss exponent must be >= 0")
        if self.matched_gain <= 0:
            raise ValueError("matched-filter gain must be > 0")
        if self.pathloss_ref_dist_m <= 0:
            raise ValueError("reference distance must be > 0")

    @property
    def sense_gain_sq(self) -> float:
        # E^2 = N_TA * N_RA
        return float(self.n_ta * self.n_ra)

    @property
    def comm_gain_sq(self) -> float:
        return float(self.n_ta)

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "LinkConstants":
        return cls(cfg.n_ta, cfg.n_ra, cfg.carrier_hz, cfg.noise_sense_w, cfg.noise_comm_w,
                   cfg.kappa, cfg.pathloss_ref_db, cfg.pathloss_ref_dist_m, cfg.pathloss_exp,
                   cfg.matched_gain)


@dataclass
class BeamPlan:
    """Beam matrix F (columns f_k, shape n_ta x K) and per-beam powers in watts."""
    beams: np.ndarray
    powers: np.ndarray

    @property
    def n_beams(self) -> int:
        return self.beams.shape[1]

    def validate(self, p_max: float | None = None, tol: float = 1e-9):
        if self.beams.ndim != 2 or self.powers.shape != (self.beams.shape[1],):
            raise ValueError("beams must be (n_ta, K) with K powers")
        norms = np.linalg.norm(self.beams, axis=0)
        if np.any(np.abs(norms - 1.0) > tol):
            raise ValueError(f"beam norms deviate from 1: {norms}")
        if np.any(self.powers <= 0):
            raise ValueError("powers must be strictly positive")
        if p_max is not None and self.powers.sum() > p_max * (1 + tol) + tol:
            raise ValueError(f"total power {self.powers.sum()} exceeds budget {p_max}")
        return self


def reflection_coefficient(d, kappa: complex):
    """Round-trip reflection coefficient kappa / (2 d)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    out = kappa / (2.0 * d)
    return complex(out) if d.ndim == 0 else out


def path_loss_amp(d, c: LinkConstants):
    """One-way amplitude sqrt(alpha0 * (d/d0)^-rho), alpha0 given in dB."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    a0 = db_to_linear(c.pathloss_ref_db)
    out = np.sqrt(a0 * (d / c.pathloss_ref_dist_m) ** (-c.pathloss_exp))
    return float(out) if out.ndim == 0 else out


def gain_matrix(plan: BeamPlan, thetas) -> np.ndarray:
    """G[k, i] = |a^H(theta_k) f_i|^2."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.shape != (plan.n_beams,):
        raise ValueError(f"expected {plan.n_beams} angles, got shape {thetas.shape}")
    a = steering_matrix(thetas, plan.beams.shape[0])
    return np.abs(a.conj().T @ plan.beams) ** 2


def sensing_terms(plan: BeamPlan, thetas, dists, c: LinkConstants, gains=None):
    """Echo signal and interference powers seen after spatial filtering, per vehicle."""
    g = gain_matrix(plan, thetas) if gains is None else gains
    beta2 = np.abs(reflection_coefficient(np.asarray(dists, dtype=float), c.kappa)) ** 2
    contrib = c.sense_gain_sq * (plan.powers * beta2)[None, :] * g
    signal = np.diag(contrib).copy()
    interference = contrib.sum(axis=1) - signal
    return signal, interference


def comm_terms(plan: BeamPlan, thetas, dists, c: LinkConstants, gains=None):
    g = gain_matrix(plan, thetas) if gains is None else gains
    alpha2 = np.asarray(path_loss_amp(np.asarray(dists, dtype=float), c)) ** 2
    contrib = c.comm_gain_sq * alpha2[:, None] * plan.powers[None, :] * g
    signal = np.diag(contrib).copy()
    interference = contrib.sum(axis=1) - signal
    return signal, interference


def sensing_sinr_all(plan, thetas, dists, c, gains=None) -> np.ndarray:
    s, i = sensing_terms(plan, thetas, dists, c, gains)
    return s / (i + c.noise_sense_w)


def comm_sinr_all(plan, thetas, dists, c, gains=None) -> np.ndarray:
    s, i = comm_terms(plan, thetas, dists, c, gains)
    return s / (i + c.noise_comm_w)


def _check_index(k, n):
    if not 0 <= k < n:
        raise IndexError(f"vehicle index {k} out of range [0, {n})")


def sensing_sinr(k: int, plan: BeamPlan, thetas, dists, c: LinkConstants) -> float:
    _check_index(k, plan.n_beams)
    return float(sensing_sinr_all(plan, thetas, dists, c)[k])


def comm_sinr(k: int, plan: BeamPlan, thetas, dists, c: LinkConstants) -> float:
    _check_index(k, plan.n_beams)
    return float(comm_sinr_all(plan, thetas, dists, c)[k])


def rates_from_sinr(sinr) -> np.ndarray:
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def sum_rate(plan: BeamPlan, thetas, dists, c: LinkConstants, gains=None):
    """Returns (sum-rate in bits/s/Hz, per-vehicle rates)."""
    rates = rates_from_sinr(comm_sinr_all(plan, thetas, dists, c, gains))
    return float(rates.sum()), rates


def jain_index(rates, standard: bool = False) -> float:
    """Fairness index. The default keeps the leading factor of 2 (range [2/K, 2]);
    ``standard=True`` gives the usual Jain index in [1/K, 1]."""
    r = np.asarray(rates, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rates must be a non-empty vector")
    if np.any(r < 0):
        raise ValueError("rates must be nonnegative")
    top = float(r.max())
    if top == 0.0:
        raise ValueError("fairness index undefined for all-zero rates")
    # scale-free, so normalize first to keep tiny rates from underflowing
    r = r / top
    sq = float(np.dot(r, r))
    value = float(r.sum()) ** 2 / (r.size * sq)
    return value if standard else 2.0 * value


def matched_plan(thetas, n_ta: int, p_max: float) -> BeamPlan:
    """Beams steered at the given angles with the budget split equally."""
    thetas = np.asarray(thetas, dtype=float)
    k = thetas.size
    return BeamPlan(steering_matrix(thetas, n_ta), np.full(k, p_max / k))
