"""Spiking (LIF) and dense multilayer networks with hand-written backprop.

Spiking networks use direct encoding: the observation is injected as input
current at every one of the ``steps`` time steps. Hidden layers emit binary
spikes; the last layer is a leaky integrator without threshold whose potential,
averaged over time, is the network output. Training uses backpropagation
through time with an arctan surrogate for the spike derivative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LifParams:
    leak: float = 0.5
    threshold: float = 1.0
    reset: float = 0.0
    steps: int = 6
    surrogate_eta: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.leak <= 1.0:
            raise ValueError("leak must lie in (0, 1]")
        if not self.reset < self.threshold:
            raise ValueError("reset potential must be below threshold")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.surrogate_eta <= 0:
            raise ValueError("surrogate eta must be > 0")


def surrogate_value(x, eta: float = 3.0):
    """Smooth spike stand-in: arctan(pi*eta*x/2)/pi + 1/2."""
    return np.arctan(0.5 * np.pi * eta * np.asarray(x)) / np.pi + 0.5


def surrogate_derivative(x, eta: float = 3.0):
    return 0.5 * eta / (1.0 + (0.5 * np.pi * eta * np.asarray(x)) ** 2)


def _init_layers(sizes, rng, output_gain):
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = output_gain if i == len(sizes) - 2 else 1.0
        a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        w = q if n_in >= n_out else q.T
        weights.append(gain * w[:n_in, :n_out].copy())
        biases.append(np.zeros(n_out))
    return weights, biases


class _Layered:
    weights: list
    biases: list

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]


@dataclass
class SpikingNetwork(_Layered):
    weights: list
    biases: list
    lif: LifParams = field(default_factory=LifParams)

    kind = "spiking"

    def __post_init__(self):
        if len(self.weights) < 1 or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def layer_kinds(self) -> list[str]:
        return ["spiking"] * (len(self.weights) - 1) + ["readout"]

    @classmethod
    def create(cls, sizes, lif: LifParams | None = None, rng=None, output_gain=1.0,
               hidden_gain=3.0):
        """Orthogonal init; spiking layers are rescaled to mean column norm
        ``hidden_gain`` so that typical inputs reach threshold."""
        rng = rng if rng is not None else np.random.default_rng()
        w, b = _init_layers(sizes, rng, output_gain)
        for m in w[:-1]:
            m *= hidden_gain / np.linalg.norm(m, axis=0).mean()
        return cls(w, b, lif or LifParams())


@dataclass
class DenseNetwork(_Layered):
    """tanh hidden layers, identity output."""
    weights: list
    biases: list

    kind = "dense"

    @classmethod
    def create(cls, sizes, rng=None, output_gain=1.0):
        rng = rng if rng is not None else np.random.default_rng()
        w, b = _init_layers(sizes, rng, output_gain)
        return cls(w, b)


@dataclass
class SpikeTrace:
    """Everything one spiking forward pass leaves behind for BPTT and energy accounting.

    Per layer, arrays are shaped (steps, batch, width). ``pre_reset`` holds the
    integrated potential before the threshold test, ``potentials`` the value
    after any reset, ``gates`` the reset mask (equal to the spikes unless a
    smoothed test pass froze them).
    """
    inputs: list
    pre_reset: list
    potentials: list
    spikes: list
    gates: list
    readout: np.ndarray
    smooth: bool = False
    squeeze: bool = False

    @property
    def firing_rates(self) -> list[float]:
        return [float(s.mean()) for s in self.spikes]

    @property
    def batch(self) -> int:
        return self.readout.shape[1]


def _lif_scan(drive, p: LifParams, smooth=False, frozen_gates=None):
    """Run LIF dynamics over a (steps, batch, width) drive (already W*I + b)."""
    steps = drive.shape[0]
    u = np.zeros(drive.shape[1:])
    pre = np.empty_like(drive)
    post = np.empty_like(drive)
    spk = np.empty_like(drive)
    gates = np.empty_like(drive)
    for t in range(steps):
        h = (1.0 - p.leak) * u + p.leak * drive[t]
        if smooth:
            s = surrogate_value(h - p.threshold, p.surrogate_eta)
        else:
            s = (h >= p.threshold).astype(float)
        g = s if frozen_gates is None else frozen_gates[t]
        u = h * (1.0 - g) + p.reset * g
        pre[t], post[t], spk[t], gates[t] = h, u, s, g
    return spk, post, pre, gates


def lif_layer_forward(W, input_currents, params: LifParams, bias=None):
    """Single LIF layer over time. ``input_currents`` is (steps, in) or (steps, batch, in).

    Returns (spikes, potentials) with potentials taken after reset.
    """
    x = np.asarray(input_currents, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input current")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    drive = x @ W + (0.0 if bias is None else bias)
    spk, post, _, _ = _lif_scan(drive, params)
    if squeeze:
        return spk[:, 0], post[:, 0]
    return spk, post


def _matmul3(x, w):
    # (T, B, n) @ (n, m) as one BLAS call
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[1],))


def _outer_sum(x, g):
    # sum over (T, B) of x^T g
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def snn_forward(net: SpikingNetwork, observation, smooth=False, frozen_gates=None):
    """Returns (output, trace). ``observation`` is (in,) or (batch, in).

    ``smooth=True`` replaces spikes by the surrogate function (test mode only);
    ``frozen_gates`` optionally pins the reset masks of each spiking layer.
    """
    x = np.asarray(observation, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"observation width {x.shape[1]} != input dim {net.weights[0].shape[0]}")
    p = net.lif
    T = p.steps
    cur = np.broadcast_to(x, (T,) + x.shape)
    inputs, pres, posts, spikes, gates = [], [], [], [], []
    for i, (w, b) in enumerate(zip(net.weights[:-1], net.biases[:-1])):
        inputs.append(cur)
        if i == 0:
            # direct encoding: the same drive every step
            drive = np.broadcast_to(x @ w + b, (T, x.shape[0], w.shape[1]))
        else:
            drive = _matmul3(cur, w) + b
        fg = None if frozen_gates is None else frozen_gates[i]
        s, u, h, g = _lif_scan(drive, p, smooth, fg)
        pres.append(h)
        posts.append(u)
        spikes.append(s)
        gates.append(g)
        cur = s
    inputs.append(cur)
    drive = _matmul3(cur, net.weights[-1]) + net.biases[-1]
    u = np.zeros(drive.shape[1:])
    readout = np.empty_like(drive)
    for t in range(T):
        u = (1.0 - p.leak) * u + p.leak * drive[t]
        readout[t] = u
    out = readout.mean(axis=0)
    trace = SpikeTrace(inputs, pres, posts, spikes, gates, readout, smooth, squeeze)
    return (out[0] if squeeze else out), trace


def snn_backward(net: SpikingNetwork, trace: SpikeTrace, output_grad) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. all parameters, given dL/d(output).

    Spikes are differentiated through the surrogate at U - U_th; the reset is
    treated as detached, so the carried potential contributes (1 - gate).
    """
    p = net.lif
    T = p.steps
    g_out = np.asarray(output_grad, dtype=float)
    if g_out.ndim == 1:
        g_out = g_out[None, :]
    if len(trace.spikes) != len(net.weights) - 1 or g_out.shape != trace.readout.shape[1:]:
        raise ValueError("trace does not match network / output gradient shape")
    grads = [None] * (2 * len(net.weights))

    # readout: u_t = (1-l) u_{t-1} + l * drive_t, out = mean_t u_t
    g_u = np.zeros_like(g_out)
    g_drive = np.empty_like(trace.readout)
    for t in range(T - 1, -1, -1):
        g_u = g_out / T + (1.0 - p.leak) * g_u
        g_drive[t] = p.leak * g_u
    L = len(net.weights) - 1
    inp = trace.inputs[L]
    grads[2 * L] = _outer_sum(inp, g_drive)
    grads[2 * L + 1] = g_drive.sum(axis=(0, 1))
    g_in = _matmul3(g_drive, net.weights[L].T)  # dL/d(spikes of layer L-1), per step

    for i in range(L - 1, -1, -1):
        h = trace.pre_reset[i]
        gate = trace.gates[i]
        sg = surrogate_derivative(h - p.threshold, p.surrogate_eta)
        g_h_next = np.zeros(h.shape[1:])
        g_drive = np.empty_like(h)
        for t in range(T - 1, -1, -1):
            g_u = (1.0 - p.leak) * g_h_next
            g_h = g_in[t] * sg[t] + g_u * (1.0 - gate[t])
            g_drive[t] = p.leak * g_h
            g_h_next = g_h
        if i == 0:
            x = trace.inputs[0][0]
            gd = g_drive.sum(axis=0)
            grads[0] = x.T @ gd
            grads[1] = gd.sum(axis=0)
        else:
            grads[2 * i] = _outer_sum(trace.inputs[i], g_drive)
            grads[2 * i + 1] = g_drive.sum(axis=(0, 1))
            g_in = _matmul3(g_drive, net.weights[i].T)
    return grads


@dataclass
class DenseCache:
    activations: list
    squeeze: bool = False


def dense_forward(net: DenseNetwork, observation):
    x = np.asarray(observation, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"observation width {x.shape[1]} != input dim {net.weights[0].shape[0]}")
    acts = [x]
    h = x
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < len(net.weights) - 1:
            h = np.tanh(h)
        acts.append(h)
    return (h[0] if squeeze else h), DenseCache(acts, squeeze)


def dense_backward(net: DenseNetwork, cache: DenseCache, output_grad) -> list[np.ndarray]:
    g = np.asarray(output_grad, dtype=float)
    if g.ndim == 1:
        g = g[None, :]
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            g = g * (1.0 - cache.activations[i + 1] ** 2)
        grads[2 * i] = cache.activations[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
    return grads


def forward(net, observation):
    if isinstance(net, SpikingNetwork):
        return snn_forward(net, observation)
    return dense_forward(net, observation)


def backward(net, cache, output_grad):
    if isinstance(net, SpikingNetwork):
        return snn_backward(net, cache, output_grad)
    return dense_backward(net, cache, output_grad)


# -- optimisation ---------------------------------------------------------------

def clip_by_global_norm(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads


class Adam:
    """Adam over a fixed list of arrays, updated in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, max_grad_norm=0.5):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.skipped = 0

    def step(self, params, grads, ascent=False):
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            log.warning("non-finite gradient, update skipped (%d so far)", self.skipped)
            return params
        grads = clip_by_global_norm(grads, self.max_grad_norm)
        self.t += 1
        sign = 1.0 if ascent else -1.0
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params

    def state_arrays(self):
        return self.m + self.v


def apply_update(params, grads, lr, optimizer: Adam | None = None, max_grad_norm=0.5,
                 ascent=False):
    """In-place parameter update. Without an optimizer this is plain SGD."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter / gradient shapes differ")
    if optimizer is not None:
        optimizer.lr = lr
        return optimizer.step(params, grads, ascent)
    if not all(np.all(np.isfinite(g)) for g in grads):
        log.warning("non-finite gradient, update skipped")
        return params
    grads = clip_by_global_norm(grads, max_grad_norm)
    sign = 1.0 if ascent else -1.0
    for p, g in zip(params, grads):
        p += sign * lr * g
    return params
