"""Scenario and learning configuration.

Config files are INI-style text. Every key is optional; an empty file gives the
default V2X scenario (3 vehicles, 32-element arrays, 30 GHz, 40 dBm budget).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range values; message names the field."""


def _sec(name, **kw):
    return field(metadata={"section": name}, **kw)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass
class ScenarioConfig:
    # [scenario]
    n_vehicles: int = _sec("scenario", default=3)
    n_ta: int = _sec("scenario", default=32)
    n_ra: int = _sec("scenario", default=32)
    carrier_hz: float = _sec("scenario", default=30e9)
    slot_s: float = _sec("scenario", default=0.02)
    horizon: int = _sec("scenario", default=100)
    noise_sense_dbm: float = _sec("scenario", default=-80.0)
    noise_comm_dbm: float = _sec("scenario", default=-80.0)
    kappa_re: float = _sec("scenario", default=10.0)
    kappa_im: float = _sec("scenario", default=10.0)
    matched_gain: float = _sec("scenario", default=10.0)
    alpha_tau: float = _sec("scenario", default=1e-9)
    alpha_mu: float = _sec("scenario", default=2e3)
    sigma_theta_deg: float = _sec("scenario", default=0.02)
    sigma_d_m: float = _sec("scenario", default=0.2)
    sigma_v_mps: float = _sec("scenario", default=0.5)
    pmax_dbm: float = _sec("scenario", default=40.0)
    init_positions: str = _sec("scenario", default="-5,10; -15,10; -25,10")
    v_min: float = _sec("scenario", default=10.0)
    v_max: float = _sec("scenario", default=14.0)
    pathloss_ref_db: float = _sec("scenario", default=-30.0)
    pathloss_ref_dist_m: float = _sec("scenario", default=1.0)
    pathloss_exp: float = _sec("scenario", default=2.4)
    eps_theta: float = _sec("scenario", default=0.1)
    eps_d: float = _sec("scenario", default=1.0)
    d_max: float = _sec("scenario", default=80.0)
    angle_span: float = _sec("scenario", default=0.6)
    fairness_standard: bool = _sec("scenario", default=False)
    cap_theta: float = _sec("scenario", default=100.0)
    cap_d: float = _sec("scenario", default=1e6)
    norm_dist_m: float = _sec("scenario", default=50.0)
    norm_vel_mps: float = _sec("scenario", default=20.0)
    norm_sinr: float = _sec("scenario", default=10.0)

    # [learning]
    batch_size: int = _sec("learning", default=512)
    discount: float = _sec("learning", default=0.99)
    clip_eps: float = _sec("learning", default=0.2)
    lr_actor: float = _sec("learning", default=5e-5)
    lr_critic: float = _sec("learning", default=5e-4)
    lr_log_std: float = _sec("learning", default=1e-2)
    epochs: int = _sec("learning", default=4)
    minibatch: int = _sec("learning", default=128)
    max_grad_norm: float = _sec("learning", default=0.5)
    hidden: int = _sec("learning", default=128)
    init_log_std: float = _sec("learning", default=0.0)
    value_scale: float = _sec("learning", default=100.0)
    normalize_advantages: bool = _sec("learning", default=True)

    # [snn]
    steps: int = _sec("snn", default=6)
    eta: float = _sec("snn", default=3.0)
    u_th: float = _sec("snn", default=1.0)
    u_r: float = _sec("snn", default=0.0)
    leak: float = _sec("snn", default=0.5)

    # [energy]
    e_ac_pj: float = _sec("energy", default=0.1)
    e_mac_pj: float = _sec("energy", default=3.2)
    backward_factor: float = _sec("energy", default=1.0)

    # [run]
    iterations: int = _sec("run", default=2000)
    checkpoint_every: int = _sec("run", default=50)
    plateau_window: int = _sec("run", default=200)
    plateau_tol: float = _sec("run", default=0.01)

    def __post_init__(self):
        self.validate()

    # -- derived quantities -------------------------------------------------
    @property
    def kappa(self) -> complex:
        return complex(self.kappa_re, self.kappa_im)

    @property
    def pmax_w(self) -> float:
        return dbm_to_watt(self.pmax_dbm)

    @property
    def noise_sense_w(self) -> float:
        return dbm_to_watt(self.noise_sense_dbm)

    @property
    def noise_comm_w(self) -> float:
        return dbm_to_watt(self.noise_comm_dbm)

    @property
    def sigma_theta_rad(self) -> float:
        return math.radians(self.sigma_theta_deg)

    @property
    def positions(self) -> list[tuple[float, float]]:
        out = []
        for chunk in self.init_positions.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            x, y = (float(s) for s in chunk.split(","))
            out.append((x, y))
        return out

    @property
    def obs_dim(self) -> int:
        return 4 * self.n_vehicles

    @property
    def act_dim(self) -> int:
        return 2 * self.n_vehicles

    def validate(self):
        positive = ["n_vehicles", "n_ta", "n_ra", "carrier_hz", "slot_s", "horizon",
                    "matched_gain", "alpha_tau", "alpha_mu", "pathloss_ref_dist_m",
                    "eps_theta", "eps_d", "d_max", "angle_span", "cap_theta", "cap_d",
                    "norm_dist_m", "norm_vel_mps", "norm_sinr", "batch_size", "epochs",
                    "minibatch", "hidden", "steps", "eta",
                    "iterations", "checkpoint_every", "value_scale", "v_min"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be > 0 (got {getattr(self, name)!r})")
        nonneg = ["sigma_theta_deg", "sigma_d_m", "sigma_v_mps", "pathloss_exp",
                  "e_ac_pj", "e_mac_pj", "backward_factor", "max_grad_norm", "lr_actor",
                  "lr_critic", "lr_log_std"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0 (got {getattr(self, name)!r})")
        if self.v_max < self.v_min:
            raise ConfigError("v_max: must be >= v_min")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount: must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError("clip_eps: must lie in (0, 1)")
        if not 0.0 < self.leak <= 1.0:
            raise ConfigError("leak: must lie in (0, 1]")
        if not self.u_r < self.u_th:
            raise ConfigError("u_r: reset must be below threshold u_th")
        try:
            pos = self.positions
        except ValueError as exc:
            raise ConfigError(f"init_positions: cannot parse ({exc})") from None
        if len(pos) != self.n_vehicles:
            raise ConfigError(
                f"init_positions: expected {self.n_vehicles} 'x,y' pairs, got {len(pos)}")
        for x, y in pos:
            if y <= 0:
                raise ConfigError("init_positions: vehicles must have y > 0 (array half-space)")

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Stable short hash of every setting that can change a training trajectory."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            sec = f.metadata["section"]
            if not parser.has_section(sec):
                parser.add_section(sec)
            val = getattr(self, f.name)
            if isinstance(val, bool):
                text = str(val).lower()
            elif isinstance(val, float):
                text = repr(val)
            else:
                text = str(val)
            parser.set(sec, f.name, text)
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


# run-length bookkeeping only; a longer budget must still resume an older run
_UNHASHED = frozenset({"iterations", "checkpoint_every"})
_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, **overrides) -> ScenarioConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    values = {}
    for sec in parser.sections():
        for key, raw in parser.items(sec):
            if key not in _FIELDS:
                raise ConfigError(f"{sec}.{key}: unknown key")
            expected = _FIELDS[key].metadata["section"]
            if sec != expected:
                raise ConfigError(f"{sec}.{key}: belongs in section [{expected}]")
            values[key] = _coerce(key, raw)
    values.update(overrides)
    return ScenarioConfig(**values)


def load_config(path: str | Path | None = None, **overrides) -> ScenarioConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, **overrides)
