"""Operation counting and energy estimates for spiking and dense networks.

Spiking hidden layers only accumulate (AC) when a presynaptic spike arrives;
the analog readout and every dense layer use multiply-accumulate (MAC).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PJ = 1e-12
E_AC_PJ = 0.1
E_MAC_PJ = 3.2


@dataclass
class EnergyLedger:
    ac_ops: float = 0.0
    mac_ops: float = 0.0
    e_ac_pj: float = E_AC_PJ
    e_mac_pj: float = E_MAC_PJ
    context: str = "inference"
    forwards: int = 0

    def __post_init__(self):
        if self.context not in ("train", "inference"):
            raise ValueError(f"context must be 'train' or 'inference', got {self.context!r}")
        if self.e_ac_pj < 0 or self.e_mac_pj < 0:
            raise ValueError("per-op energies must be >= 0")

    @property
    def energy_j(self) -> float:
        return (self.ac_ops * self.e_ac_pj + self.mac_ops * self.e_mac_pj) * PJ

    def add(self, ac: float, mac: float, forwards: int = 1):
        if ac < 0 or mac < 0:
            raise ValueError("operation counts must be >= 0")
        self.ac_ops += ac
        self.mac_ops += mac
        self.forwards += forwards
        return self

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        if other.context != self.context:
            raise ValueError("cannot merge ledgers with different contexts")
        return self.add(other.ac_ops, other.mac_ops, other.forwards)

    def to_dict(self) -> dict:
        return {"context": self.context, "flops_ac": self.ac_ops, "flops_mac": self.mac_ops,
                "energy_j": self.energy_j, "forwards": self.forwards}


def _check_dims(layer_dims, n=3):
    dims = [tuple(int(v) for v in d) for d in layer_dims]
    if len(dims) != n:
        raise ValueError(f"expected {n} weight layers, got {len(dims)}")
    return dims


def flops_spiking(layer_dims, firing_rates) -> float:
    """Sum over the two spiking layers of N_i * M_i * rate_i (per time step)."""
    dims = _check_dims(layer_dims)
    rates = np.asarray(firing_rates, dtype=float)
    if rates.shape != (2,):
        raise ValueError("need one firing rate per spiking layer (2)")
    if np.any(rates < 0) or np.any(rates > 1) or not np.all(np.isfinite(rates)):
        raise ValueError(f"firing rates must lie in [0, 1], got {rates}")
    return float(sum(n * m * r for (n, m), r in zip(dims[:2], rates)))


def energy_spiking(flops: float, steps: int, readout_dims, e_ac_pj=E_AC_PJ,
                   e_mac_pj=E_MAC_PJ) -> float:
    """Joules for one spiking forward: E_AC*FLOPS*T + E_MAC*N3*M3."""
    if flops < 0 or steps < 1:
        raise ValueError("flops must be >= 0 and steps >= 1")
    n3, m3 = readout_dims
    return (e_ac_pj * flops * steps + e_mac_pj * n3 * m3) * PJ


def energy_dense(layer_dims, e_mac_pj=E_MAC_PJ) -> float:
    """Joules for one dense forward: E_MAC * sum N_i*M_i."""
    return e_mac_pj * float(sum(n * m for n, m in layer_dims)) * PJ


def spiking_ops(layer_dims, firing_rates, steps: int):
    """(AC, MAC) counts of one spiking forward, matching ``energy_spiking``."""
    dims = _check_dims(layer_dims)
    n3, m3 = dims[2]
    return flops_spiking(dims, firing_rates) * steps, float(n3 * m3)


def dense_ops(layer_dims):
    return 0.0, float(sum(n * m for n, m in layer_dims))


def record_forward(ledger: EnergyLedger, net, trace=None, batch: int = 1,
                   backward: bool | None = None, backward_factor: float = 1.0) -> EnergyLedger:
    """Charge ``batch`` forwards of ``net`` to the ledger.

    For spiking networks the per-layer firing rates come from ``trace`` (mean over
    the batch, which is exact because the count is linear in the rate). Passes
    followed by a backward pass (default: any pass in a training ledger) are
    charged (1 + backward_factor) times the forward cost.
    """
    if batch <= 0:
        return ledger
    if backward is None:
        backward = ledger.context == "train"
    mult = batch * (1.0 + backward_factor if backward else 1.0)
    if getattr(net, "kind", None) == "spiking":
        if trace is None:
            raise ValueError("spiking forwards need a SpikeTrace to measure firing rates")
        ac, mac = spiking_ops(net.layer_dims, trace.firing_rates, net.lif.steps)
    elif getattr(net, "kind", None) == "dense":
        ac, mac = dense_ops(net.layer_dims)
    else:
        return ledger
    return ledger.add(ac * mult, mac * mult, batch)


def ratio(dense_j: float, spiking_j: float) -> float:
    return dense_j / spiking_j if spiking_j > 0 else float("inf")
