"""Echo measurement statistics, Fisher information and CRLBs.

The radar front end is modelled at the level of its output statistics: delay and
Doppler readings carry Gaussian noise whose variance scales as alpha^2 / SINR,
and the matched-filter echo sample is Gaussian around its noiseless value.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array import steering_derivative, steering_matrix, PHASE_STEP
from .channel import BeamPlan, LinkConstants, gain_matrix, reflection_coefficient, sensing_terms

C_LIGHT = 299_792_458.0
# beam gains below this fraction of the matched gain (=1) count as "sensing lost"
LOST_GAIN = 1e-6
ANGLE_MARGIN = 0.01
V_CARRY_COS = 0.05
D_FLOOR = 0.5


class SingularFisherError(ValueError):
    def __init__(self, entry: str, value: float):
        super().__init__(f"Fisher information entry {entry} = {value!r} is not positive")
        self.entry = entry
        self.value = value


@dataclass(frozen=True)
class MeasurementNoise:
    var_delay: float
    var_doppler: float
    var_echo: float
    alpha_tau: float
    alpha_mu: float
    capped: bool = False


@dataclass(frozen=True)
class Measurement:
    delay: float
    doppler: float
    echo_gain: complex

    def __post_init__(self):
        if not self.delay > 0:
            raise ValueError("delay must be > 0")


@dataclass(frozen=True)
class EstimatedVehicleState:
    theta_hat: float
    d_hat: float
    v_hat: float
    prev_comm_sinr: float
    v_reliable: bool = True


def echo_noise_var(c: LinkConstants) -> float:
    # per-quadrature variance of the matched-filter output noise
    return c.noise_sense_w * c.matched_gain


def delay_var_cap(cap_d: float) -> float:
    return 4.0 * cap_d / C_LIGHT**2


def doppler_var_cap(carrier_hz: float, cap_v: float = 1e6) -> float:
    return (2.0 * carrier_hz / C_LIGHT) ** 2 * cap_v


def noise_variances_all(plan: BeamPlan, thetas, dists, c: LinkConstants,
                        alpha_tau: float, alpha_mu: float, cap_d: float = 1e6, gains=None):
    """Vectorized delay/Doppler variances for every vehicle.

    Returns (var_delay, var_doppler, capped) arrays.
    """
    g = gain_matrix(plan, thetas) if gains is None else gains
    signal, interference = sensing_terms(plan, thetas, dists, c, g)
    lost = (np.diag(g) < LOST_GAIN) | (signal <= 0)
    with np.errstate(divide="ignore"):
        inv_sinr = np.where(lost, np.inf, (interference + c.noise_sense_w) / np.where(lost, 1.0, signal))
    vd_cap = delay_var_cap(cap_d)
    vm_cap = doppler_var_cap(c.carrier_hz)
    var_delay = alpha_tau**2 * inv_sinr
    var_doppler = alpha_mu**2 * inv_sinr
    capped = lost | (var_delay > vd_cap) | (var_doppler > vm_cap)
    return np.minimum(var_delay, vd_cap), np.minimum(var_doppler, vm_cap), capped


def noise_variances(k: int, plan: BeamPlan, thetas, dists, c: LinkConstants,
                    alpha_tau: float = 1e-9, alpha_mu: float = 2e3,
                    cap_d: float = 1e6) -> MeasurementNoise:
    if not 0 <= k < plan.n_beams:
        raise IndexError(f"vehicle index {k} out of range")
    vd, vm, capped = noise_variances_all(plan, thetas, dists, c, alpha_tau, alpha_mu, cap_d)
    return MeasurementNoise(float(vd[k]), float(vm[k]), echo_noise_var(c), alpha_tau, alpha_mu,
                            bool(capped[k]))


def echo_mean(theta, d, f, p, c: LinkConstants) -> complex:
    """Noiseless matched-filter echo E*sqrt(p)*beta*xi*a^H(theta) f."""
    a = steering_matrix([theta], len(f))[:, 0]
    return complex(np.sqrt(c.sense_gain_sq * p) * reflection_coefficient(d, c.kappa)
                   * c.matched_gain * np.vdot(a, f))


def echo_derivative(theta, d, f, p, c: LinkConstants) -> complex:
    """d(echo)/d(theta) with d and the beam held fixed."""
    da = steering_derivative(theta, len(f))
    return complex(np.sqrt(c.sense_gain_sq * p) * reflection_coefficient(d, c.kappa)
                   * c.matched_gain * np.vdot(da, f))


def fim(theta, d, f, p, c: LinkConstants, noise: MeasurementNoise) -> np.ndarray:
    """Diagonal Fisher information for x = [theta, d, v].

    Each measurement informs one state component (echo -> angle, delay -> range,
    Doppler -> speed), so the Jacobian of the measurement map is diagonal.
    """
    f11 = abs(echo_derivative(theta, d, f, p, c)) ** 2 / noise.var_echo
    f22 = (2.0 / C_LIGHT) ** 2 / noise.var_delay
    cos_t = np.cos(theta)
    # cos(pi/2) evaluates to ~6e-17 in floating point; broadside is Doppler-blind
    cos_t = 0.0 if abs(cos_t) < 1e-12 else cos_t
    f33 = (2.0 * c.carrier_hz * cos_t / C_LIGHT) ** 2 / noise.var_doppler
    for name, val in (("FIM11", f11), ("FIM22", f22), ("FIM33", f33)):
        if not val > 0:
            raise SingularFisherError(name, float(val))
    return np.diag([f11, f22, f33])


def crlb_theta(theta, d, f, p, c: LinkConstants, noise: MeasurementNoise,
               cap: float = 100.0) -> float:
    """Angle CRLB 1 / FIM11 in rad^2; returns ``cap`` when the beam carries no
    angle information."""
    info = abs(echo_derivative(theta, d, f, p, c)) ** 2 / noise.var_echo
    if not info > 1.0 / cap:
        return cap
    return 1.0 / info


def crlb_theta_all(plan: BeamPlan, thetas, dists, c: LinkConstants, cap: float = 100.0):
    thetas = np.asarray(thetas, dtype=float)
    n = plan.beams.shape[0]
    m = np.arange(n)[:, None]
    da = (1j * PHASE_STEP * m * np.sin(thetas)[None, :]) * steering_matrix(thetas, n)
    proj = np.einsum("nk,nk->k", da.conj(), plan.beams)
    beta = reflection_coefficient(np.asarray(dists, dtype=float), c.kappa)
    deriv2 = c.sense_gain_sq * plan.powers * np.abs(beta) ** 2 * c.matched_gain**2 * np.abs(proj) ** 2
    info = deriv2 / echo_noise_var(c)
    with np.errstate(divide="ignore"):
        out = np.where(info > 1.0 / cap, 1.0 / np.maximum(info, 1e-300), cap)
    return out


def crlb_d(noise: MeasurementNoise | float, cap: float = 1e6) -> float:
    """Range CRLB sigma_tau^2 c^2 / 4 in m^2."""
    var_delay = noise.var_delay if isinstance(noise, MeasurementNoise) else noise
    return float(np.minimum(var_delay * C_LIGHT**2 / 4.0, cap))


def simulate_measurement(states, plan: BeamPlan, k: int, c: LinkConstants, rng,
                         noise: MeasurementNoise | None = None,
                         alpha_tau: float = 1e-9, alpha_mu: float = 2e3) -> Measurement:
    """Draw one noisy (delay, Doppler, echo) reading of vehicle k.

    ``states`` is the full list of true vehicle states (others set the interference).
    """
    thetas = np.array([s.theta for s in states])
    dists = np.array([s.d for s in states])
    if noise is None:
        noise = noise_variances(k, plan, thetas, dists, c, alpha_tau, alpha_mu)
    s = states[k]
    z = rng.standard_normal(4)
    delay = 2.0 * s.d / C_LIGHT + np.sqrt(noise.var_delay) * z[0]
    doppler = 2.0 * s.v * np.cos(s.theta) * c.carrier_hz / C_LIGHT + np.sqrt(noise.var_doppler) * z[1]
    echo = (echo_mean(s.theta, s.d, plan.beams[:, k], plan.powers[k], c)
            + np.sqrt(noise.var_echo) * complex(z[2], z[3]))
    # a negative delay draw is only possible with capped noise; keep it physical
    delay = max(delay, 2.0 * D_FLOOR / C_LIGHT)
    return Measurement(float(delay), float(doppler), echo)


def estimate_state(m: Measurement, *, true_theta: float, crlb_theta: float, prev_v_hat: float,
                   carrier_hz: float, rng, comm_sinr: float = 0.0) -> EstimatedVehicleState:
    """Invert a measurement into (theta_hat, d_hat, v_hat).

    The angle estimate is modelled as an efficient estimator: Gaussian around the
    truth with the CRLB as variance.
    """
    z = rng.standard_normal()
    d_hat = max(C_LIGHT * m.delay / 2.0, D_FLOOR)
    theta_hat = float(np.clip(true_theta + np.sqrt(crlb_theta) * z,
                              ANGLE_MARGIN, np.pi - ANGLE_MARGIN))
    cos_t = np.cos(theta_hat)
    if abs(cos_t) < V_CARRY_COS:
        return EstimatedVehicleState(theta_hat, d_hat, prev_v_hat, comm_sinr, v_reliable=False)
    v_hat = m.doppler * C_LIGHT / (2.0 * carrier_hz * cos_t)
    return EstimatedVehicleState(theta_hat, d_hat, float(v_hat), comm_sinr)


def measure_and_estimate_all(thetas, dists, vels, plan: BeamPlan, c: LinkConstants,
                             var_delay, var_doppler, crlb_thetas, prev_v_hat, rng):
    """Vectorized ``simulate_measurement`` + ``estimate_state`` for every vehicle.

    Consumes the rng exactly like the per-vehicle loop (four draws for the
    measurement, one for the angle estimate, vehicle by vehicle). Returns
    (theta_hat, d_hat, v_hat, v_reliable, echoes).
    """
    thetas = np.asarray(thetas, dtype=float)
    dists = np.asarray(dists, dtype=float)
    k = thetas.size
    z = rng.standard_normal((k, 5))
    a = steering_matrix(thetas, plan.beams.shape[0])
    proj = np.einsum("nk,nk->k", a.conj(), plan.beams)
    echo = (np.sqrt(c.sense_gain_sq * plan.powers) * reflection_coefficient(dists, c.kappa)
            * c.matched_gain * proj + np.sqrt(echo_noise_var(c)) * (z[:, 2] + 1j * z[:, 3]))
    delay = np.maximum(2.0 * dists / C_LIGHT + np.sqrt(var_delay) * z[:, 0], 2.0 * D_FLOOR / C_LIGHT)
    doppler = (2.0 * np.asarray(vels) * np.cos(thetas) * c.carrier_hz / C_LIGHT
               + np.sqrt(var_doppler) * z[:, 1])
    d_hat = np.maximum(C_LIGHT * delay / 2.0, D_FLOOR)
    theta_hat = np.clip(thetas + np.sqrt(crlb_thetas) * z[:, 4], ANGLE_MARGIN, np.pi - ANGLE_MARGIN)
    cos_t = np.cos(theta_hat)
    reliable = np.abs(cos_t) >= V_CARRY_COS
    v_hat = np.where(reliable, doppler * C_LIGHT / (2.0 * c.carrier_hz * np.where(reliable, cos_t, 1.0)),
                     prev_v_hat)
    return theta_hat, d_hat, v_hat, reliable, echo
