"""Latent surrogate: dynamics network + pointwise reconstruction network.

Three variants share one code path:

``ldnet``    neural-ODE dynamics, decoder fed raw (normalized) coordinates
``lldnet``   CfC/NCP dynamics, decoder fed raw coordinates
``lfldnet``  CfC/NCP dynamics, decoder fed a trainable Fourier embedding

Everything inside the model runs in normalized space: input signals,
coordinates and output fields are mapped channel-wise onto [-1, 1] with
min/max statistics of the training split, and the time grid is divided by
the mean training time step.  Output channels that are constant over the
training split carry no information; their normalized prediction is pinned
to 0, which denormalizes to the constant.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .dynamics import CfCNetwork, NeuralODENetwork
from .errors import ConfigError, FormatError, IntegrityError, ModelStateError, ShapeError, VersionError
from .reconstruction import BoundaryMask, FourierKernel, ReconstructionNet, init_fourier_kernel
from .rng import PortableRNG
from .wiring import WiringGraph, build_wiring, split_neurons

MAGIC = b"LFLD"
CHECKPOINT_VERSION = 1
# Decoder rows are evaluated in blocks of this size, the last one zero-padded,
# so the result of a row never depends on how the nodes were partitioned.
ROW_BLOCK = 2048


# -- normalization ----------------------------------------------------------

@dataclass
class ChannelStats:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, np.float64).reshape(-1)
        self.hi = np.asarray(self.hi, np.float64).reshape(-1)
        if self.lo.shape != self.hi.shape:
            raise ShapeError(f"min/max of different lengths {self.lo.shape} {self.hi.shape}")
        if np.any(self.hi < self.lo):
            raise ConfigError("channel max below min")

    @property
    def constant(self) -> np.ndarray:
        return self.hi == self.lo

    @property
    def n_channels(self) -> int:
        return self.lo.size

    @classmethod
    def from_values(cls, values) -> "ChannelStats":
        """Stats over every axis but the last (channel) axis."""
        v = np.asarray(values, np.float64)
        v = v.reshape(-1, v.shape[-1])
        return cls(v.min(axis=0), v.max(axis=0))

    def to_json(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_json(cls, d) -> "ChannelStats":
        return cls(d["min"], d["max"])


def normalize(values, stats: ChannelStats, dtype=None) -> np.ndarray:
    """Affine map of the last axis, min -> -1 and max -> +1; constant channels -> 0."""
    v = np.asarray(values, np.float64)
    if v.shape[-1] != stats.n_channels:
        raise ShapeError(f"{v.shape[-1]} channels but stats for {stats.n_channels}")
    span = stats.hi - stats.lo
    const = stats.constant
    safe = np.where(const, 1.0, span)
    out = np.where(const, 0.0, 2.0 * (v - stats.lo) / safe - 1.0)
    return out if dtype is None else out.astype(dtype)


def denormalize(values, stats: ChannelStats, dtype=None) -> np.ndarray:
    z = np.asarray(values, np.float64)
    if z.shape[-1] != stats.n_channels:
        raise ShapeError(f"{z.shape[-1]} channels but stats for {stats.n_channels}")
    out = stats.lo + 0.5 * (z + 1.0) * (stats.hi - stats.lo)
    return out if dtype is None else out.astype(dtype)


@dataclass
class NormalizationStats:
    inputs: ChannelStats
    coords: ChannelStats
    outputs: ChannelStats
    time_scale: float = 1.0

    @classmethod
    def from_dataset(cls, dataset, indices=None) -> "NormalizationStats":
        idx = range(len(dataset)) if indices is None else [int(i) for i in indices]
        idx = list(idx)
        if not idx:
            raise ConfigError("normalization needs at least one sample")
        inputs = ChannelStats.from_values(np.concatenate([dataset.inputs[i] for i in idx]))
        outputs = ChannelStats.from_values(np.concatenate([dataset.fields[i].reshape(-1, dataset.n_outputs)
                                                           for i in idx]))
        coords = ChannelStats.from_values(dataset.coords)
        t = np.asarray(dataset.times, np.float64)
        time_scale = float(t[-1] / t.size) if t.size and t[-1] > 0 else 1.0
        return cls(inputs, coords, outputs, time_scale)

    def to_json(self) -> dict:
        return {"inputs": self.inputs.to_json(), "coords": self.coords.to_json(),
                "outputs": self.outputs.to_json(), "time_scale": self.time_scale}

    @classmethod
    def from_json(cls, d) -> "NormalizationStats":
        return cls(ChannelStats.from_json(d["inputs"]), ChannelStats.from_json(d["coords"]),
                   ChannelStats.from_json(d["outputs"]), float(d["time_scale"]))


# -- model --------------------------------------------------------------------

class LatentModel:
    """Dynamics network, Fourier kernel, decoder, stats and boundary mask."""

    def __init__(self, config: TrainConfig, n_inputs: int, n_dims: int, n_outputs: int,
                 input_channels=None, output_channels=None, mask: BoundaryMask | None = None,
                 wiring: WiringGraph | None = None):
        config = config.validate()
        self.config = config
        self.variant = config.variant
        self.n_inputs, self.n_dims, self.n_outputs = int(n_inputs), int(n_dims), int(n_outputs)
        self.input_channels = list(input_channels or [f"I{i}" for i in range(n_inputs)])
        self.output_channels = list(output_channels or [f"u{i}" for i in range(n_outputs)])
        if len(self.input_channels) != self.n_inputs or len(self.output_channels) != self.n_outputs:
            raise ShapeError("channel names do not match channel counts")
        self.mask = mask
        self.stats: NormalizationStats | None = None
        self.dtype = np.dtype(config.precision)
        root = PortableRNG(config.seed_init)
        n_s = config.n_states
        if self.variant == "ldnet":
            self.wiring = None
            self.dynamics = NeuralODENetwork(n_inputs, n_s, config.dyn_layers, config.dyn_neurons,
                                             config.ode_substeps, seed=root.spawn("dyn").key, dtype=self.dtype)
        else:
            if wiring is None:
                counts = split_neurons(config.dyn_neurons, n_inputs, n_s)
                wiring = build_wiring(counts, config.fanout_sensory, config.fanout_inter,
                                      config.recurrent_command, config.fanin_motor,
                                      seed=root.spawn("wiring").key)
            elif wiring.n_sensory != n_inputs or wiring.n_motor != n_s:
                raise ShapeError("wiring does not match input / state counts")
            self.wiring = wiring
            self.dynamics = CfCNetwork(wiring, config.mixed_memory, seed=root.spawn("dyn").key, dtype=self.dtype)
        n_f = config.effective_frequencies
        self.kernel = init_fourier_kernel(n_f, n_dims, config.fourier_scale, seed=root.spawn("kernel").key,
                                          dtype=self.dtype)
        self.decoder = ReconstructionNet(n_s, n_f, n_dims, [config.rec_width] * config.rec_layers, n_outputs,
                                         coord_passthrough=(n_f == 0), seed=root.spawn("rec").key,
                                         dtype=self.dtype)
        self._masks = self.dynamics.masks()

    @classmethod
    def for_dataset(cls, config: TrainConfig, dataset) -> "LatentModel":
        return cls(config, dataset.n_inputs, dataset.n_dims, dataset.n_outputs,
                   dataset.input_channels, dataset.output_channels, dataset.mask)

    @property
    def n_states(self) -> int:
        return self.config.n_states

    # parameters

    def parameters(self):
        """``(name, tensor)`` pairs in the fixed block order used everywhere."""
        return self.dynamics.parameters() + self.kernel.parameters() + self.decoder.parameters()

    def masks(self) -> dict:
        return self._masks

    def apply_masks(self) -> None:
        for name, p in self.parameters():
            m = self._masks.get(name)
            if m is not None:
                p.data *= m.astype(p.dtype)

    def get_state(self) -> dict:
        return {name: p.data.copy() for name, p in self.parameters()}

    def set_state(self, state: dict) -> None:
        for name, p in self.parameters():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: stored shape {arr.shape}, model has {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    # normalized-space pieces

    def _require_stats(self) -> NormalizationStats:
        if self.stats is None:
            raise ModelStateError("model has no normalization statistics; train it or load a checkpoint")
        return self.stats

    def normalized_times(self, times) -> np.ndarray:
        return np.asarray(times, np.float64).reshape(-1) / self._require_stats().time_scale

    def prepare_inputs(self, I_series) -> np.ndarray:
        I = np.asarray(I_series)
        if I.shape[-1] != self.n_inputs:
            raise ShapeError(f"model expects {self.n_inputs} input signals, got {I.shape[-1]}")
        return normalize(I, self._require_stats().inputs, self.dtype)

    def prepare_coords(self, coords) -> np.ndarray:
        x = np.asarray(coords)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.n_dims:
            raise ShapeError(f"model expects coordinates [N, {self.n_dims}], got {np.shape(coords)}")
        return normalize(x, self._require_stats().coords, self.dtype)

    def states_normalized(self, I_norm, times_norm) -> Tensor:
        """Latent trajectory ``[T, N_s]`` or ``[B, T, N_s]``; independent of coordinates."""
        return self.dynamics(I_norm, times_norm)

    def point_features(self, x_norm) -> Tensor:
        return self.decoder.point_features(x_norm, self.kernel)

    def _finish(self, out: Tensor, node_flags) -> Tensor:
        const = self._require_stats().outputs.constant
        if const.any():
            out = ad.mask_fill(out, np.broadcast_to(const, out.shape), 0.0)
        if node_flags is not None and np.any(node_flags):
            flags = np.asarray(node_flags, bool).reshape([1] * (out.ndim - 2) + [-1, 1])
            out = ad.mask_fill(out, np.broadcast_to(flags, out.shape), self.masked_value_normalized())
        return out

    def masked_value_normalized(self) -> np.ndarray:
        value = 0.0 if self.mask is None else self.mask.value
        return normalize(np.full(self.n_outputs, value), self._require_stats().outputs, self.dtype)

    def decode_normalized(self, s: Tensor, features: Tensor, node_flags=None) -> Tensor:
        """Decode every (state row, point) pair.

        ``s`` is ``[B, T, N_s]``; ``features`` the point features ``[P, F]``.
        Returns ``[B, T, P, N_u]``.
        """
        B, T, n_s = s.shape
        P = features.shape[0]
        rows = ad.outer_concat(ad.reshape(s, (B * T, n_s)), features)
        out = ad.reshape(self.decoder(rows), (B, T, P, self.n_outputs))
        return self._finish(out, node_flags)

    def forward_normalized(self, I_norm, times_norm, x_norm, node_flags=None) -> Tensor:
        """Differentiable batched forward pass ``[B, T, P, N_u]`` in normalized space."""
        I_norm = np.asarray(I_norm)
        if I_norm.ndim == 2:
            I_norm = I_norm[None]
        s = self.states_normalized(I_norm, times_norm)
        return self.decode_normalized(s, self.point_features(x_norm), node_flags)

    # inference

    def predict_normalized(self, I_series, times, coords, chunks: int = 1, states: np.ndarray | None = None):
        """Normalized fields ``[T, N, N_u]`` evaluated in node chunks, no tape."""
        if chunks < 1:
            raise ConfigError(f"chunks must be >= 1, got {chunks}")
        with ad.no_tape():
            x = self.prepare_coords(coords)
            if states is None:
                s = self.states_normalized(self.prepare_inputs(I_series), self.normalized_times(times)).data
            else:
                s = np.asarray(states, self.dtype)
            T, N = s.shape[0], x.shape[0]
            feats = self.point_features(x).data
            out = np.empty((T, N, self.n_outputs), self.dtype)
            for part in np.array_split(np.arange(N), min(chunks, max(N, 1))):
                if part.size:
                    out[:, part] = self._decode_blocks(s, feats[part])
        flags = self._node_flags(N)
        const = self.stats.outputs.constant
        out[..., const] = 0.0
        if flags is not None:
            out[:, flags] = self.masked_value_normalized()
        return out

    def _decode_blocks(self, s: np.ndarray, feats: np.ndarray) -> np.ndarray:
        T, P = s.shape[0], feats.shape[0]
        rows = np.concatenate([np.repeat(s, P, axis=0), np.tile(feats, (T, 1))], axis=1)
        out = np.empty((rows.shape[0], self.n_outputs), self.dtype)
        block = np.zeros((ROW_BLOCK, rows.shape[1]), self.dtype)
        for start in range(0, rows.shape[0], ROW_BLOCK):
            n = min(ROW_BLOCK, rows.shape[0] - start)
            block[:n] = rows[start:start + n]
            block[n:] = 0
            out[start:start + n] = self.decoder(Tensor(block)).data[:n]
        return out.reshape(T, P, self.n_outputs)

    def _node_flags(self, n_nodes):
        if self.mask is None or self.mask.empty:
            return None
        if self.mask.n_nodes != n_nodes:
            return None
        return self.mask.flags

    def predict(self, I_series, times, coords, chunks: int = 1) -> np.ndarray:
        """Physical fields ``[T, N, N_u]``; the boundary mask is applied last."""
        z = self.predict_normalized(I_series, times, coords, chunks)
        u = denormalize(z, self.stats.outputs, self.dtype)
        flags = self._node_flags(u.shape[1])
        if flags is not None:
            u[:, flags] = self.dtype.type(self.mask.value)
        return u

    def export_states(self, I_series, times) -> np.ndarray:
        with ad.no_tape():
            return self.states_normalized(self.prepare_inputs(I_series), self.normalized_times(times)).data.copy()


def model_forward(model: LatentModel, I_series, times, coords, chunks: int = 1) -> np.ndarray:
    return model.predict(I_series, times, coords, chunks)


def count_parameters(model: LatentModel) -> dict:
    """Trainable scalars per component; wiring-masked weight entries are excluded."""
    masks = model.masks()

    def n(params):
        total = 0
        for name, p in params:
            m = masks.get(name)
            total += int(np.count_nonzero(m)) if m is not None else p.size
        return total

    counts = {"dynamics": n(model.dynamics.parameters()),
              "kernel": model.kernel.count(),
              "reconstruction": n(model.decoder.parameters())}
    counts["total"] = sum(counts.values())
    return counts


def write_states_csv(path, times, states) -> None:
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"s_{i + 1}" for i in range(states.shape[1])])
        for t, row in zip(np.asarray(times).reshape(-1), states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(model: LatentModel, path) -> None:
    """``LFLD`` | u16 version | u32 header length | JSON header | float32 LE blocks."""
    if model.stats is None:
        raise ModelStateError("cannot save a model without normalization statistics")
    blocks, payload = [], []
    for name, p in model.parameters():
        blocks.append({"name": name, "shape": list(p.shape)})
        payload.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    data = b"".join(payload)
    header = {
        "variant": model.variant,
        "config": model.config.to_dict(),
        "n_inputs": model.n_inputs, "n_dims": model.n_dims, "n_outputs": model.n_outputs,
        "input_channels": model.input_channels, "output_channels": model.output_channels,
        "stats": model.stats.to_json(),
        "mask": None if model.mask is None else {"flags": model.mask.flags.astype(int).tolist(),
                                                  "value": model.mask.value},
        "wiring": None if model.wiring is None else model.wiring.to_json(),
        "dtype": "<f4",
        "blocks": blocks,
        "payload_bytes": len(data),
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(hb)) + hb + data)


def load_checkpoint(path) -> LatentModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < 10:
        raise IntegrityError(f"{path}: truncated header")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(raw) < 10 + hlen:
        raise IntegrityError(f"{path}: truncated header")
    try:
        header = json.loads(raw[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    data = raw[10 + hlen:]
    expected = sum(4 * int(np.prod(b["shape"], dtype=np.int64)) for b in header["blocks"])
    if len(data) != header["payload_bytes"] or len(data) != expected:
        raise IntegrityError(f"{path}: payload has {len(data)} bytes, header declares {expected}")
    config = TrainConfig.from_dict(header["config"])
    mask = None
    if header["mask"] is not None:
        mask = BoundaryMask(np.asarray(header["mask"]["flags"], bool), float(header["mask"]["value"]))
    wiring = WiringGraph.from_json(header["wiring"]) if header["wiring"] is not None else None
    model = LatentModel(config, header["n_inputs"], header["n_dims"], header["n_outputs"],
                        header["input_channels"], header["output_channels"], mask, wiring)
    state, off = {}, 0
    for b in header["blocks"]:
        n = int(np.prod(b["shape"], dtype=np.int64))
        state[b["name"]] = np.frombuffer(data, "<f4", n, off).reshape(b["shape"])
        off += 4 * n
    names = [name for name, _ in model.parameters()]
    if sorted(names) != sorted(state):
        raise IntegrityError(f"{path}: parameter blocks do not match the declared architecture")
    model.set_state(state)
    model.stats = NormalizationStats.from_json(header["stats"])
    return model


__all__ = [
    "ChannelStats", "NormalizationStats", "LatentModel", "normalize", "denormalize", "model_forward",
    "count_parameters", "save_checkpoint", "load_checkpoint", "write_states_csv", "FourierKernel",
    "MAGIC", "CHECKPOINT_VERSION", "ROW_BLOCK",
]
