"""Dynamics networks: gated CfC over NCP wiring plus the ODE baselines.

Each CfC layer ``i`` maps its input ``x`` (and, for the ``g`` head, the
input signals ``I``) to the next layer through three heads::

    f = lin(lt(x Wf + bf))            # linear readout
    g = lt(lin(lt([x, I] Wg + bg)))
    h = lt(lin(lt(x Wh + bh)))
    y = sigmoid(-f * dt) * g + (1 - sigmoid(-f * dt)) * h

where ``lt`` is the LeCun tanh ``1.7159 tanh(2x/3)`` and ``lin`` a
neuron-wise affine map (``p * a + c``).  The first matrix of every head is
masked by the wiring adjacency, so neuron ``j`` only listens to its
synaptic sources; the per-neuron readout keeps that property.  ``dt`` is
the gap since the previous sample, not absolute time.

Layer 0 is sensory->inter (its input already is ``I``), layer 1
inter->command with the previous command state as recurrent input, and
layer 2 command->motor.  With mixed memory an LSTM cell runs on the
command-layer input every step and its hidden state is added to the
recurrent part of that input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .autodiff import LECUN_A, LECUN_B, Tensor
from .errors import ContractError, ShapeError
from .nn import MLP
from .rng import PortableRNG
from .wiring import WiringGraph, adjacency_masks

HEADS = ("f", "g", "h")
_LAB = LECUN_A * LECUN_B


def _lecun_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(shape, -limit, limit).astype(dtype)


@dataclass
class CfCLayerParams:
    """Parameters of one CfC layer.

    ``x_mask`` is the 0/1 wiring mask of the layer input (rows) onto the
    destination neurons (columns); the ``g`` head additionally sees
    ``n_signals`` input-signal rows which are dense.
    """

    name: str
    n_x: int
    n_signals: int
    n_out: int
    x_mask: np.ndarray
    tensors: dict

    def parameters(self):
        return [(t.name, t) for t in self.tensors.values()]

    def ordered(self):
        t = self.tensors
        return [t[f"{h}_{k}"] for h in HEADS for k in ("w", "b", "a", "c")]

    def masks(self):
        gm = self.x_mask
        if self.n_signals:
            gm = np.vstack([gm, np.ones((self.n_signals, self.n_out), dtype=gm.dtype)])
        return {self.tensors["f_w"].name: self.x_mask,
                self.tensors["g_w"].name: gm,
                self.tensors["h_w"].name: self.x_mask}

    @classmethod
    def init(cls, name, polarity: np.ndarray, n_signals: int, rng: PortableRNG, dtype):
        """Random init; ``polarity`` is the signed adjacency of the layer input."""
        n_x, n_out = polarity.shape
        mask = (polarity != 0).astype(dtype)
        fan_in = max(1.0, mask.sum() / max(n_out, 1))
        tensors = {}
        for head in HEADS:
            r = rng.spawn(head)
            w = polarity.astype(dtype) * np.abs(_lecun_uniform(r.spawn("w"), (n_x, n_out), fan_in, dtype))
            if head == "g" and n_signals:
                ws = _lecun_uniform(r.spawn("ws"), (n_signals, n_out), fan_in + n_signals, dtype)
                w = np.vstack([w, ws])
            tensors[f"{head}_w"] = ad.parameter(w, name=f"{name}.{head}.w")
            tensors[f"{head}_b"] = ad.parameter(np.zeros(n_out, dtype), name=f"{name}.{head}.b")
            tensors[f"{head}_a"] = ad.parameter(np.ones(n_out, dtype), name=f"{name}.{head}.a")
            tensors[f"{head}_c"] = ad.parameter(np.zeros(n_out, dtype), name=f"{name}.{head}.c")
        return cls(name, n_x, n_signals, n_out, mask, tensors)


def cfc_layer_step(y_in, signals, dt: float, params: CfCLayerParams) -> Tensor:
    """One gated closed-form layer update, recorded as a single primitive."""
    if dt < 0:
        raise ContractError(f"elapsed time must be non-negative, got {dt}")
    x = ad.as_tensor(y_in)
    if x.ndim != 2 or x.shape[1] != params.n_x:
        raise ShapeError(f"{params.name}: input shape {x.shape} does not match width {params.n_x}")
    parents = [x]
    if params.n_signals:
        u = ad.as_tensor(signals, dtype=x.dtype)
        if u.shape != (x.shape[0], params.n_signals):
            raise ShapeError(f"{params.name}: signals shape {u.shape}, expected {(x.shape[0], params.n_signals)}")
        parents.append(u)
    else:
        u = None
    P = params.ordered()
    parents.extend(P)
    fw, fb, fa, fc, gw, gb, ga, gc, hw, hb, ha, hc = (p.data for p in P)
    xd = x.data
    xg = np.concatenate([xd, u.data], axis=1) if u is not None else xd
    dt = x.dtype.type(dt)

    tf = np.tanh(LECUN_B * (xd @ fw + fb))
    pf = LECUN_A * tf
    f = pf * fa + fc
    tg = np.tanh(LECUN_B * (xg @ gw + gb))
    pg = LECUN_A * tg
    ug = np.tanh(LECUN_B * (pg * ga + gc))
    g = LECUN_A * ug
    th = np.tanh(LECUN_B * (xd @ hw + hb))
    ph = LECUN_A * th
    uh = np.tanh(LECUN_B * (ph * ha + hc))
    h = LECUN_A * uh
    gate = special.expit(-f * dt)
    # a convex combination of g and h; the clip only removes last-ulp rounding
    # that could otherwise push a saturated state past the LeCun bound
    y = np.clip(h + gate * (g - h), np.minimum(g, h), np.maximum(g, h))

    def bwd(dy):
        dgate = dy * (g - h)
        dg = dy * gate
        dh = dy - dg
        df = dgate * gate * (1.0 - gate) * (-dt)

        dzf = df * fa * _LAB * (1.0 - tf * tf)
        dx = dzf @ fw.T
        grads_f = (xd.T @ dzf, dzf.sum(0), (df * pf).sum(0), df.sum(0))

        dqg = dg * _LAB * (1.0 - ug * ug)
        dzg = dqg * ga * _LAB * (1.0 - tg * tg)
        dxg = dzg @ gw.T
        grads_g = (xg.T @ dzg, dzg.sum(0), (dqg * pg).sum(0), dqg.sum(0))

        dqh = dh * _LAB * (1.0 - uh * uh)
        dzh = dqh * ha * _LAB * (1.0 - th * th)
        dx = dx + dzh @ hw.T
        grads_h = (xd.T @ dzh, dzh.sum(0), (dqh * ph).sum(0), dqh.sum(0))

        n_x = params.n_x
        dx = dx + dxg[:, :n_x]
        lead = (dx,) if u is None else (dx, dxg[:, n_x:])
        return lead + grads_f + grads_g + grads_h

    return ad.custom_op(parents, (y,), bwd)[0]


@dataclass
class MixedMemoryParams:
    """LSTM cell attached to the command layer (gate order i, f, o, candidate)."""

    n_x: int
    n_hidden: int
    w: Tensor
    b: Tensor

    def parameters(self):
        return [(self.w.name, self.w), (self.b.name, self.b)]

    @classmethod
    def init(cls, name, n_x, n_hidden, rng, dtype):
        w = _lecun_uniform(rng, (n_x + n_hidden, 4 * n_hidden), n_x + n_hidden, dtype)
        b = np.zeros(4 * n_hidden, dtype)
        b[n_hidden:2 * n_hidden] = 1.0
        return cls(n_x, n_hidden, ad.parameter(w, name=f"{name}.w"), ad.parameter(b, name=f"{name}.b"))


def mixed_memory_step(x, h_prev, c_prev, params: MixedMemoryParams):
    """LSTM update; returns ``(h, c)`` with ``|h| < 1``."""
    x, h_prev, c_prev = ad.as_tensor(x), ad.as_tensor(h_prev), ad.as_tensor(c_prev)
    n = params.n_hidden
    xh = np.concatenate([x.data, h_prev.data], axis=1)
    w, b = params.w.data, params.b.data
    z = xh @ w + b
    i = special.expit(z[:, :n])
    f = special.expit(z[:, n:2 * n])
    o = special.expit(z[:, 2 * n:3 * n])
    cand = np.tanh(z[:, 3 * n:])
    cp = c_prev.data
    c = f * cp + i * cand
    tc = np.tanh(c)
    h = o * tc

    def bwd(grads):
        dh, dc_out = grads
        dc = np.zeros_like(c) if dc_out is None else dc_out
        if dh is not None:
            dc = dc + dh * o * (1.0 - tc * tc)
            do = dh * tc
        else:
            do = np.zeros_like(o)
        dz = np.concatenate([dc * cand * i * (1.0 - i),
                             dc * cp * f * (1.0 - f),
                             do * o * (1.0 - o),
                             dc * i * (1.0 - cand * cand)], axis=1)
        dxh = dz @ w.T
        return (dxh[:, :params.n_x], dxh[:, params.n_x:], dc * f, xh.T @ dz, dz.sum(0))

    h_t, c_t = ad.custom_op((x, h_prev, c_prev, params.w, params.b), (h, c), bwd)
    return h_t, c_t


def _gaps(times) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise ContractError("empty time grid")
    dts = np.diff(times, prepend=0.0)
    if dts[0] < 0:
        raise ContractError(f"first time {times[0]} is negative; gaps are measured from 0")
    if times.size > 1 and np.any(dts[1:] <= 0):
        raise ContractError("times must be strictly increasing")
    return dts


def _as_batch(I_series):
    arr = I_series.data if isinstance(I_series, Tensor) else np.asarray(I_series)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"input signals must be [T, N_inputs] or [B, T, N_inputs], got {arr.shape}")
    return arr, squeeze


class CfCNetwork:
    """Three gated CfC layers over an NCP wiring, optionally with mixed memory."""

    kind = "cfc"

    def __init__(self, wiring: WiringGraph, mixed_memory: bool = True, seed: int = 0, dtype=None,
                 name: str = "dyn"):
        dtype = np.dtype(dtype or ad.get_default_dtype())
        self.wiring = wiring
        self.mixed_memory = bool(mixed_memory)
        self.dtype = dtype
        self.name = name
        rng = PortableRNG(seed).spawn("cfc")
        masks = adjacency_masks(wiring)
        ns, ni, nc, nm = wiring.counts
        self.n_inputs, self.n_states = ns, nm
        cmd_in = np.vstack([masks[("inter", "command")], masks[("command", "command")]])
        self.layers = [
            CfCLayerParams.init(f"{name}.l0", masks[("sensory", "inter")], 0, rng.spawn(0), dtype),
            CfCLayerParams.init(f"{name}.l1", cmd_in, ns, rng.spawn(1), dtype),
            CfCLayerParams.init(f"{name}.l2", masks[("command", "motor")], ns, rng.spawn(2), dtype),
        ]
        self.memory = (MixedMemoryParams.init(f"{name}.mem", ni + nc, nc, rng.spawn("mem"), dtype)
                       if self.mixed_memory else None)
        self.gate_evaluations = 0

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        if self.memory is not None:
            out.extend(self.memory.parameters())
        return out

    def masks(self):
        out = {}
        for layer in self.layers:
            out.update(layer.masks())
        return out

    def __call__(self, I_series, times):
        return cfc_sequence_forward(I_series, times, self)


def cfc_sequence_forward(I_series, times, net: CfCNetwork, use_mixed_memory: bool | None = None) -> Tensor:
    """Roll the CfC network over a time grid from a zero initial state.

    Returns ``[T, N_states]`` (or ``[B, T, N_states]`` for batched input).
    """
    dts = _gaps(times)
    arr, squeeze = _as_batch(I_series)
    B, T, n_in = arr.shape
    if T != dts.size:
        raise ShapeError(f"{T} input rows but {dts.size} time points")
    if n_in != net.n_inputs:
        raise ShapeError(f"network expects {net.n_inputs} input signals, got {n_in}")
    use_mem = net.memory is not None if use_mixed_memory is None else use_mixed_memory
    if use_mem and net.memory is None:
        raise ContractError("mixed memory requested but the network has no memory cell")
    l0, l1, l2 = net.layers
    nc = l1.n_out
    dtype = net.dtype
    arr = arr.astype(dtype, copy=False)
    y_cmd = Tensor(np.zeros((B, nc), dtype))
    h_mem = Tensor(np.zeros((B, nc), dtype))
    c_mem = Tensor(np.zeros((B, nc), dtype))
    outs = []
    for k in range(T):
        Ik = Tensor(arr[:, k, :])
        dt = float(dts[k])
        y_inter = cfc_layer_step(Ik, None, dt, l0)
        rec = y_cmd
        if use_mem:
            h_mem, c_mem = mixed_memory_step(ad.concat([y_inter, y_cmd]), h_mem, c_mem, net.memory)
            rec = ad.add(y_cmd, h_mem)
        y_cmd = cfc_layer_step(ad.concat([y_inter, rec]), Ik, dt, l1)
        outs.append(cfc_layer_step(y_cmd, Ik, dt, l2))
        net.gate_evaluations += 3
    s = ad.stack(outs, axis=1)
    return ad.reshape(s, (T, s.shape[-1])) if squeeze else s


class NeuralODENetwork:
    """Plain neural-ODE dynamics ``dy/dt = N(y, I)`` advanced by forward Euler.

    This is the LDNet baseline: the state is the hidden vector itself.
    """

    kind = "node"

    def __init__(self, n_inputs: int, n_states: int, hidden_layers: int = 2, width: int = 64,
                 substeps: int = 1, seed: int = 0, dtype=None, name: str = "dyn"):
        if substeps < 1:
            raise ContractError(f"substeps must be >= 1, got {substeps}")
        self.n_inputs, self.n_states = int(n_inputs), int(n_states)
        self.substeps = int(substeps)
        self.dtype = np.dtype(dtype or ad.get_default_dtype())
        sizes = [n_states + n_inputs] + [width] * hidden_layers + [n_states]
        self.rhs = MLP(sizes, "lecun_tanh", "identity", PortableRNG(seed).spawn("node"),
                       self.dtype, prefix=f"{name}.rhs")
        self.rhs_evaluations = 0

    def parameters(self):
        return self.rhs.parameters()

    def masks(self):
        return {}

    def __call__(self, I_series, times):
        return neural_ode_forward(I_series, times, self, self.substeps)


def neural_ode_forward(I_series, times, net, substeps: int = 1, rhs=None) -> Tensor:
    """Forward-Euler rollout, ``substeps`` Euler steps per sample gap.

    ``rhs(t, y, I)`` defaults to the network's MLP on ``[y, I]``; the input
    is held at the value of the sample that closes each gap.
    """
    if substeps < 1:
        raise ContractError(f"substeps must be >= 1, got {substeps}")
    dts = _gaps(times)
    tgrid = np.asarray(times, dtype=np.float64).reshape(-1)
    arr, squeeze = _as_batch(I_series)
    B, T, _ = arr.shape
    if T != dts.size:
        raise ShapeError(f"{T} input rows but {dts.size} time points")
    dtype = getattr(net, "dtype", ad.get_default_dtype())
    arr = arr.astype(dtype, copy=False)
    if rhs is None:
        def rhs(t, y, I):
            net.rhs_evaluations += 1
            return net.rhs(ad.concat([y, I]))
    y = Tensor(np.zeros((B, net.n_states), dtype))
    outs = []
    for k in range(T):
        Ik = Tensor(arr[:, k, :])
        h = float(dts[k]) / substeps
        t0 = tgrid[k] - dts[k]
        for j in range(substeps):
            y = ad.add(y, ad.mul(rhs(t0 + j * h, y, Ik), h))
        outs.append(y)
    s = ad.stack(outs, axis=1)
    return ad.reshape(s, (T, s.shape[-1])) if squeeze else s


@dataclass
class LTCParams:
    """Liquid time-constant cell: ``w_tau = softplus(w_tau_raw) > 0``, ``A``, inner network."""

    w_tau_raw: Tensor
    A: Tensor
    inner: MLP

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def dtype(self):
        return self.A.dtype

    @property
    def w_tau(self) -> Tensor:
        return ad.softplus(self.w_tau_raw)

    def parameters(self):
        return [("ltc.w_tau_raw", self.w_tau_raw), ("ltc.A", self.A)] + self.inner.parameters()

    @classmethod
    def init(cls, n_states, n_inputs, width=16, seed=0, dtype=None, inner_activation="sigmoid"):
        dtype = np.dtype(dtype or ad.get_default_dtype())
        rng = PortableRNG(seed).spawn("ltc")
        inner = MLP([n_states + n_inputs, width, n_states], "lecun_tanh", inner_activation,
                    rng.spawn("inner"), dtype, prefix="ltc.inner")
        raw = np.full(n_states, np.log(np.expm1(1.0)), dtype)  # softplus(raw) = 1
        A = rng.spawn("A").normal((n_states,)).astype(dtype)
        return cls(ad.parameter(raw, name="ltc.w_tau_raw"), ad.parameter(A, name="ltc.A"), inner)

    @classmethod
    def from_values(cls, w_tau, A, inner):
        w_tau = np.asarray(w_tau, dtype=np.float64)
        if np.any(w_tau <= 0):
            raise ContractError("w_tau must be positive")
        raw = w_tau + np.log(-np.expm1(-w_tau))  # softplus inverse
        dtype = inner.weights[0].dtype
        return cls(ad.parameter(raw.astype(dtype), name="ltc.w_tau_raw"),
                   ad.parameter(np.asarray(A, dtype), name="ltc.A"), inner)


def _inner(params: LTCParams, y, I):
    y, I = ad.as_tensor(y), ad.as_tensor(I)
    if y.ndim == 1:
        out = params.inner(ad.concat([ad.reshape(y, (1, -1)), ad.reshape(I, (1, -1))]))
        return ad.reshape(out, (out.shape[1],))
    return params.inner(ad.concat([y, I]))


def ltc_rhs(y, I, t, params: LTCParams) -> Tensor:
    """``-w_tau * y + N(y, I) * (A - y)``; the inner network is autonomous in ``t``."""
    y = ad.as_tensor(y, dtype=params.A.dtype)
    I = ad.as_tensor(I, dtype=params.A.dtype)
    if y.shape[-1] != params.A.shape[0]:
        raise ShapeError(f"state width {y.shape[-1]} != {params.A.shape[0]}")
    n = _inner(params, y, I)
    w = params.w_tau
    A = params.A
    decay = ad.mul(y, w)
    drive = ad.mul(n, ad.add(ad.neg(y), A))
    return ad.sub(drive, decay)


def ltc_forward(I_series, times, params: LTCParams, substeps: int = 1) -> Tensor:
    """Forward-Euler rollout of the LTC ODE (reference baseline, not used in training)."""
    return neural_ode_forward(I_series, times, params, substeps,
                              rhs=lambda t, y, I: ltc_rhs(y, I, t, params))


def cfc_closed_form_reference(y0, I, t: float, params: LTCParams) -> np.ndarray:
    """Closed-form LTC approximation with the state frozen at ``y0`` (diagnostic).

    ``y(t) = (y0 - A) * exp(-(w_tau + N(y0, I)) t) * N(-y0, -I) + A`` for a
    constant input ``I``.
    """
    if t < 0:
        raise ContractError(f"t must be non-negative, got {t}")
    y0 = np.asarray(y0, dtype=params.A.dtype)
    I = np.asarray(I, dtype=params.A.dtype)
    n_pos = _inner(params, y0, I).data
    n_neg = _inner(params, -y0, -I).data
    w = params.w_tau.data
    A = params.A.data
    return (y0 - A) * np.exp(-(w + n_pos) * t) * n_neg + A
