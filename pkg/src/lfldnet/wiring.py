"""Sparse four-layer neural circuit policy (NCP) wiring.

Layers are sensory (the input signals), inter, command (with recurrent
command->command synapses) and motor (the latent state).  Synapses only
run along sensory->inter, inter->command, command->command and
command->motor.

The fan-out rule is a uniform stand-in for the original NCP wiring
algorithm: each sensory neuron picks ``fanout_sensory`` distinct inter
targets, each inter neuron ``fanout_inter`` distinct command targets,
``recurrent_command`` random command->command edges are added, and each
motor neuron picks ``fanin_motor`` distinct command sources.  Any inter or
command neuron left without an incoming synapse gets one repair edge from
a uniformly chosen source.  Polarities are uniform +/-1 and only set the
sign of the initial weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import PortableRNG

LAYERS = ("sensory", "inter", "command", "motor")
PAIRS = (("sensory", "inter"), ("inter", "command"), ("command", "command"), ("command", "motor"))

DEFAULT_FANOUT_SENSORY = 4
DEFAULT_FANOUT_INTER = 4
DEFAULT_RECURRENT_COMMAND = 6
DEFAULT_FANIN_MOTOR = 6
COMMAND_FRACTION = 0.4


@dataclass(frozen=True)
class WiringGraph:
    n_sensory: int
    n_inter: int
    n_command: int
    n_motor: int
    synapses: tuple = field(default_factory=tuple)  # (src_layer, src_idx, dst_layer, dst_idx, polarity)
    seed: int = 0

    def size(self, layer: str) -> int:
        return getattr(self, f"n_{layer}")

    @property
    def counts(self):
        return (self.n_sensory, self.n_inter, self.n_command, self.n_motor)

    def edges(self, src_layer: str, dst_layer: str):
        return [e for e in self.synapses if e[0] == src_layer and e[2] == dst_layer]

    def dense_count(self) -> int:
        return sum(self.size(a) * self.size(b) for a, b in PAIRS)

    def to_json(self) -> dict:
        return {
            "counts": list(self.counts),
            "seed": self.seed,
            "synapses": [list(e) for e in self.synapses],
        }

    @classmethod
    def from_json(cls, d: dict) -> "WiringGraph":
        ns, ni, nc, nm = d["counts"]
        syn = tuple((a, int(i), b, int(j), int(p)) for a, i, b, j, p in d["synapses"])
        g = cls(ns, ni, nc, nm, syn, int(d.get("seed", 0)))
        validate_wiring(g)
        return g


def split_neurons(total: int, n_inputs: int, n_states: int):
    """Split a total neuron budget into (sensory, inter, command, motor) counts."""
    minimum = n_inputs + n_states + 2
    if n_inputs < 1 or n_states < 1:
        raise ConfigError(f"need at least one input and one state, got {n_inputs} and {n_states}")
    if total < minimum:
        raise ConfigError(
            f"total of {total} neurons is too small for {n_inputs} inputs and "
            f"{n_states} states; the minimum is {minimum}")
    r = total - n_inputs - n_states
    n_command = max(1, int(np.floor(COMMAND_FRACTION * r + 0.5)))
    n_command = min(n_command, r - 1)
    return n_inputs, r - n_command, n_command, n_states


def build_wiring(counts, fanout_sensory=None, fanout_inter=None, recurrent_command=None,
                 fanin_motor=None, seed: int = 0) -> WiringGraph:
    """Draw a random NCP wiring.  ``None`` fan-outs take the clipped defaults."""
    ns, ni, nc, nm = (int(c) for c in counts)
    if min(ns, ni, nc, nm) < 1:
        raise ConfigError(f"every layer needs at least one neuron, got {counts}")

    def pick(value, default, limit, what):
        if value is None:
            return min(default, limit)
        value = int(value)
        if value < 1 or value > limit:
            raise ConfigError(f"{what}={value} impossible: must be in [1, {limit}]")
        return value

    fs = pick(fanout_sensory, DEFAULT_FANOUT_SENSORY, ni, "fanout_sensory")
    fi = pick(fanout_inter, DEFAULT_FANOUT_INTER, nc, "fanout_inter")
    fm = pick(fanin_motor, DEFAULT_FANIN_MOTOR, nc, "fanin_motor")
    if recurrent_command is None:
        rc = min(DEFAULT_RECURRENT_COMMAND, nc * nc)
    else:
        rc = int(recurrent_command)
        if rc < 0 or rc > nc * nc:
            raise ConfigError(f"recurrent_command={rc} impossible: must be in [0, {nc * nc}]")

    root = PortableRNG(seed)
    edges = []

    def fan(src_layer, n_src, dst_layer, n_dst, k, rng):
        for i in range(n_src):
            targets = rng.choice(n_dst, k)
            signs = rng.sign(k)
            edges.extend((src_layer, i, dst_layer, int(j), int(s)) for j, s in zip(targets, signs))

    def repair(src_layer, n_src, dst_layer, n_dst, rng):
        hit = {e[3] for e in edges if e[0] == src_layer and e[2] == dst_layer}
        for j in range(n_dst):
            if j not in hit:
                edges.append((src_layer, rng.integers(n_src), dst_layer, j, int(rng.sign())))

    rng = root.spawn("sensory-inter")
    fan("sensory", ns, "inter", ni, fs, rng)
    repair("sensory", ns, "inter", ni, rng)

    rng = root.spawn("inter-command")
    fan("inter", ni, "command", nc, fi, rng)
    repair("inter", ni, "command", nc, rng)

    rng = root.spawn("command-command")
    flat = rng.choice(nc * nc, rc)
    signs = rng.sign(rc) if rc else []
    for f, s in zip(flat, signs):
        edges.append(("command", int(f) // nc, "command", int(f) % nc, int(s)))

    rng = root.spawn("command-motor")
    for m in range(nm):
        sources = rng.choice(nc, fm)
        signs = rng.sign(fm)
        edges.extend(("command", int(c), "motor", m, int(s)) for c, s in zip(sources, signs))

    graph = WiringGraph(ns, ni, nc, nm, tuple(edges), int(seed))
    validate_wiring(graph)
    return graph


def adjacency_masks(graph: WiringGraph) -> dict:
    """One ``[n_src, n_dst]`` matrix per layer pair holding polarity or 0."""
    masks = {}
    for a, b in PAIRS:
        m = np.zeros((graph.size(a), graph.size(b)), dtype=np.int8)
        for _, i, _, j, p in graph.edges(a, b):
            m[i, j] = p
        masks[(a, b)] = m
    return masks


def motor_reachable(graph: WiringGraph) -> np.ndarray:
    """Boolean per motor neuron: reachable from some sensory neuron."""
    offset = {"sensory": 0}
    offset["inter"] = graph.n_sensory
    offset["command"] = offset["inter"] + graph.n_inter
    offset["motor"] = offset["command"] + graph.n_command
    total = offset["motor"] + graph.n_motor
    adj = [[] for _ in range(total)]
    for a, i, b, j, _ in graph.synapses:
        adj[offset[a] + i].append(offset[b] + j)
    seen = np.zeros(total, dtype=bool)
    queue = deque(range(graph.n_sensory))
    seen[: graph.n_sensory] = True
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen[offset["motor"]:]


def validate_wiring(graph: WiringGraph) -> None:
    """Raise :class:`ConfigError` if any structural invariant fails."""
    allowed = set(PAIRS)
    for e in graph.synapses:
        a, i, b, j, p = e
        if (a, b) not in allowed:
            raise ConfigError(f"synapse {e} is not along an allowed layer pair")
        if not (0 <= i < graph.size(a) and 0 <= j < graph.size(b)):
            raise ConfigError(f"synapse {e} indexes outside its layers")
        if p not in (1, -1):
            raise ConfigError(f"synapse {e} has polarity {p}")
    if len({e[:4] for e in graph.synapses}) != len(graph.synapses):
        raise ConfigError("duplicate synapses")
    masks = adjacency_masks(graph)
    if not np.all(np.abs(masks[("sensory", "inter")]).sum(axis=1) > 0):
        raise ConfigError("a sensory neuron has no outgoing synapse")
    if not np.all(np.abs(masks[("sensory", "inter")]).sum(axis=0) > 0):
        raise ConfigError("an inter neuron has no incoming synapse")
    if not np.all(np.abs(masks[("command", "motor")]).sum(axis=0) > 0):
        raise ConfigError("a motor neuron has no incoming synapse")
    if not motor_reachable(graph).all():
        raise ConfigError("some motor neuron is unreachable from the sensory layer")
