"""Desk-scale trajectory datasets from 1D reference solvers.

Two generators mirror the structure of the cardiac test cases:

``monodomain``
    1D cable with a two-variable Aliev-Panfilov excitable medium in
    physical time (ms) and space (mm), homogeneous Neumann ends.  A
    stimulus fires at the left end at t = 0 and a second one at the right
    end at the sampled time ``t_stim``.  Parameters: conductivity ``D``,
    ``t_stim``, excitability ``k`` and recovery rate ``eps``.
``advdiff``
    Periodic advection-diffusion of a Gaussian pulse with a pulsatile
    source.  Every parameter is a baseline value times an independent
    factor in [0.8, 1.2].

Scalar parameters are replicated into the input signals as constant
channels; the stimulus / source amplitudes are the time-varying ones.

Dataset directories hold ``manifest.json`` plus little-endian float32
blobs: ``coords.bin``, ``times.bin``, ``mask.bin`` and per sample
``I_<k>.bin`` ([T, N_inputs]) and ``u_<k>.bin`` ([T, N_nodes, N_u]).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IntegrityError
from .reconstruction import BoundaryMask
from .rng import PortableRNG

FORMAT_VERSION = "1"
_F32 = np.dtype("<f4")

# Aliev-Panfilov constants; time is converted with AP_TIME_MS per model unit.
AP_TIME_MS = 12.9
AP_A = 0.15
AP_MU1 = 0.2
AP_MU2 = 0.3
STIM_DURATION = 2.0
STIM_AMPLITUDE = 1.0
STIM_WIDTH = 1.5
ACTIVATION_LEVEL = 0.5

MONODOMAIN_PARAMS = ("D", "t_stim", "k", "eps")
MONODOMAIN_RANGES = {"D": (0.1, 0.4), "t_stim": (0.0, 100.0), "k": (6.0, 10.0), "eps": (0.002, 0.008)}

ADVDIFF_PARAMS = ("a", "nu", "amplitude", "width", "source")
ADVDIFF_BASELINE = {"a": 1.0, "nu": 0.004, "amplitude": 1.0, "width": 0.05, "source": 2.0}
ADVDIFF_FACTOR_RANGE = (0.8, 1.2)
SOURCE_CENTER = 0.2
SOURCE_WIDTH = 0.03
SOURCE_PERIOD = 0.5
PULSE_CENTER = 0.5


@dataclass
class TrajectoryDataset:
    coords: np.ndarray  # [N_nodes, N_d]
    times: np.ndarray  # [T]
    inputs: list  # per sample [T, N_inputs]
    fields: list  # per sample [T, N_nodes, N_u]
    parameters: np.ndarray  # [n_samples, n_params]
    mask: BoundaryMask
    input_channels: list
    output_channels: list
    parameter_names: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, _F32)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        self.times = np.asarray(self.times, _F32).reshape(-1)
        self.inputs = [np.asarray(a, _F32) for a in self.inputs]
        self.fields = [np.asarray(u, _F32) for u in self.fields]
        if self.fields and self.fields[0].ndim == 2:
            self.fields = [u[:, :, None] for u in self.fields]
        self.parameters = np.asarray(self.parameters, np.float64).reshape(len(self.inputs), -1)
        self.validate()

    def __len__(self):
        return len(self.inputs)

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_dims(self):
        return self.coords.shape[1]

    @property
    def n_steps(self):
        return self.times.size

    @property
    def n_inputs(self):
        return len(self.input_channels)

    @property
    def n_outputs(self):
        return len(self.output_channels)

    @property
    def n_val(self):
        return int(self.metadata.get("n_val", max(1, round(0.2 * len(self)))))

    def validate(self):
        T, N = self.n_steps, self.n_nodes
        if len(self.inputs) != len(self.fields):
            raise IntegrityError(f"{len(self.inputs)} input series but {len(self.fields)} fields")
        if T > 1 and np.any(np.diff(self.times) <= 0):
            raise IntegrityError("times must be strictly increasing")
        if self.mask.n_nodes != N:
            raise IntegrityError(f"mask has {self.mask.n_nodes} nodes, coords {N}")
        for k, (I, u) in enumerate(zip(self.inputs, self.fields)):
            if I.shape != (T, self.n_inputs):
                raise IntegrityError(f"sample {k}: inputs {I.shape}, expected {(T, self.n_inputs)}")
            if u.shape != (T, N, self.n_outputs):
                raise IntegrityError(f"sample {k}: field {u.shape}, expected {(T, N, self.n_outputs)}")
            if not (np.all(np.isfinite(I)) and np.all(np.isfinite(u))):
                raise IntegrityError(f"sample {k} contains non-finite values")

    def subset(self, indices) -> "TrajectoryDataset":
        idx = [int(i) for i in indices]
        meta = dict(self.metadata)
        meta.pop("n_val", None)
        return TrajectoryDataset(self.coords, self.times, [self.inputs[i] for i in idx],
                                 [self.fields[i] for i in idx], self.parameters[idx], self.mask,
                                 list(self.input_channels), list(self.output_channels),
                                 list(self.parameter_names), meta)


def latin_hypercube(n_samples: int, ranges, seed: int = 0) -> np.ndarray:
    """One point per equal stratum in every dimension, strata shuffled per column."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    ranges = [tuple(map(float, r)) for r in ranges]
    for lo, hi in ranges:
        if not lo < hi:
            raise ConfigError(f"bad range [{lo}, {hi}]: need lo < hi")
    rng = PortableRNG(seed).spawn("lhs")
    out = np.empty((n_samples, len(ranges)))
    for d, (lo, hi) in enumerate(ranges):
        r = rng.spawn(d)
        strata = r.permutation(n_samples)
        unit = (strata + r.uniform(n_samples)) / n_samples
        out[:, d] = lo + (hi - lo) * unit
    return out


# -- monodomain --------------------------------------------------------------

def monodomain_stability_bound(n_nodes: int, length: float, D: float) -> float:
    dx = length / (n_nodes - 1)
    return 0.4 * dx * dx / D


def _stim_profile(n_nodes, length, left):
    x = np.linspace(0.0, length, n_nodes)
    return (x <= STIM_WIDTH) if left else (x >= length - STIM_WIDTH)


def _window_fraction(t0, t1, start, duration):
    """Fraction of (t0, t1] covered by [start, start + duration)."""
    if start is None:
        return 0.0
    lo, hi = max(t0, start), min(t1, start + duration)
    return max(0.0, hi - lo) / (t1 - t0)


def solve_monodomain_1d(params: dict, n_nodes: int = 64, length: float = 20.0, dt_solver: float = 0.05,
                        T: float = 600.0, save_stride: int = 200, stimulate: bool = True,
                        track_activation: bool = False) -> dict:
    """Explicit finite differences for the 1D Aliev-Panfilov cable.

    ``params`` holds ``D`` (mm^2/ms), ``t_stim`` (ms, ``None`` disables the
    second stimulus), ``k`` and ``eps``.  Returns a dict with ``times``,
    ``u`` ([T_save, n_nodes]), ``inputs`` ([T_save, 6]) and, when asked,
    per-node ``activation`` times (first upward crossing of u = 0.5).
    """
    D = float(params["D"])
    k = float(params["k"])
    eps = float(params["eps"])
    t_stim = params.get("t_stim")
    bound = monodomain_stability_bound(n_nodes, length, D)
    if dt_solver > bound:
        raise ConfigError(f"dt_solver={dt_solver} exceeds the explicit stability bound {bound:.6g} "
                          f"(0.4 dx^2 / D with dx={length / (n_nodes - 1):.6g})")
    n_steps = int(round(T / dt_solver))
    if n_steps % save_stride:
        raise ConfigError(f"T/dt_solver={n_steps} steps is not a multiple of save_stride={save_stride}")
    dx = length / (n_nodes - 1)
    lam = D * dt_solver / (dx * dx)
    c = dt_solver / AP_TIME_MS
    left = _stim_profile(n_nodes, length, True).astype(np.float64)
    right = _stim_profile(n_nodes, length, False).astype(np.float64)
    if not stimulate:
        left[:] = 0.0
        right[:] = 0.0
        t_stim = None

    u = np.zeros(n_nodes)
    v = np.zeros(n_nodes)
    lap = np.empty(n_nodes)
    n_save = n_steps // save_stride
    saved = np.empty((n_save, n_nodes))
    times = np.empty(n_save)
    inputs = np.empty((n_save, 6))
    act = np.full(n_nodes, np.nan)
    for step in range(n_steps):
        t = step * dt_solver
        lap[1:-1] = u[:-2] - 2.0 * u[1:-1] + u[2:]
        lap[0] = 2.0 * (u[1] - u[0])
        lap[-1] = 2.0 * (u[-2] - u[-1])
        stim = 0.0
        if t < STIM_DURATION:
            stim = left
        if t_stim is not None and t_stim <= t < t_stim + STIM_DURATION:
            stim = stim + right
        reaction = -k * u * (u - AP_A) * (u - 1.0) - u * v
        u_new = u + lam * lap + c * reaction + dt_solver * STIM_AMPLITUDE * stim * (1.0 - u)
        v = v + c * (eps + AP_MU1 * v / (u + AP_MU2)) * (-v - k * u * (u - AP_A - 1.0))
        if track_activation:
            crossed = np.isnan(act) & (u < ACTIVATION_LEVEL) & (u_new >= ACTIVATION_LEVEL)
            if crossed.any():
                frac = (ACTIVATION_LEVEL - u[crossed]) / (u_new[crossed] - u[crossed])
                act[crossed] = t + frac * dt_solver
        u = u_new
        if (step + 1) % save_stride == 0:
            j = (step + 1) // save_stride - 1
            t1 = (step + 1) * dt_solver
            t0 = t1 - save_stride * dt_solver
            saved[j] = u
            times[j] = t1
            inputs[j] = (D, -1.0 if t_stim is None else t_stim, k, eps,
                         STIM_AMPLITUDE * _window_fraction(t0, t1, 0.0 if stimulate else None, STIM_DURATION),
                         STIM_AMPLITUDE * _window_fraction(t0, t1, t_stim, STIM_DURATION))
    out = {"times": times, "u": saved, "inputs": inputs, "coords": np.linspace(0.0, length, n_nodes)}
    if track_activation:
        out["activation"] = act
    return out


def conduction_speed(D: float, n_nodes: int = 128, length: float = 20.0, dt_solver: float = 0.02,
                     T: float = 200.0, k: float = 8.0, eps: float = 0.002, probes=(6.0, 10.0, 14.0)) -> float:
    """Front speed (mm/ms) from activation times at probe positions, left stimulus only."""
    out = solve_monodomain_1d({"D": D, "t_stim": None, "k": k, "eps": eps}, n_nodes, length, dt_solver,
                              T, save_stride=int(round(T / dt_solver)), track_activation=True)
    x = out["coords"]
    arrivals = np.interp(probes, x, out["activation"])
    if np.any(np.isnan(arrivals)):
        raise ConfigError("front did not reach every probe; increase T")
    slope = np.polyfit(arrivals, np.asarray(probes, float), 1)[0]
    return float(slope)


MONODOMAIN_INPUTS = ["D", "t_stim", "k", "eps", "stim_left", "stim_right"]


def generate_monodomain_dataset(n_samples: int = 50, n_val: int = 10, n_nodes: int = 64, length: float = 20.0,
                                T: float = 600.0, dt_solver: float = 0.05, save_stride: int = 200,
                                ranges: dict | None = None, seed: int = 0) -> TrajectoryDataset:
    ranges = {**MONODOMAIN_RANGES, **(ranges or {})}
    box = [ranges[p] for p in MONODOMAIN_PARAMS]
    P = latin_hypercube(n_samples, box, seed)
    inputs, fields = [], []
    coords = None
    for row in P:
        out = solve_monodomain_1d(dict(zip(MONODOMAIN_PARAMS, row)), n_nodes, length, dt_solver, T, save_stride)
        inputs.append(out["inputs"])
        fields.append(out["u"][:, :, None])
        coords, times = out["coords"], out["times"]
    meta = {
        "generator": "monodomain", "seed": int(seed), "n_val": int(n_val),
        "parameter_ranges": {p: list(ranges[p]) for p in MONODOMAIN_PARAMS},
        "solver": {"n_nodes": n_nodes, "length": length, "T": T, "dt_solver": dt_solver,
                   "save_stride": save_stride},
    }
    return TrajectoryDataset(coords[:, None], times, inputs, fields, P, BoundaryMask.none(n_nodes),
                             list(MONODOMAIN_INPUTS), ["u"], list(MONODOMAIN_PARAMS), meta)


# -- advection-diffusion ------------------------------------------------------

def _periodic_gaussian(x, center, width, images=3):
    out = np.zeros_like(x)
    for m in range(-images, images + 1):
        out += np.exp(-0.5 * ((x - center + m) / width) ** 2)
    return out


def source_waveform(t):
    s = np.sin(2.0 * np.pi * np.asarray(t, dtype=np.float64) / SOURCE_PERIOD)
    return np.maximum(s, 0.0) ** 2


def solve_advdiff_1d(params: dict, n_nodes: int = 128, dt_solver: float = 0.0005, T: float = 1.0,
                     save_stride: int = 25) -> dict:
    """Explicit upwind advection + central diffusion on the periodic unit interval.

    ``params``: ``a`` (velocity), ``nu`` (diffusivity), ``amplitude`` and
    ``width`` of the initial Gaussian pulse, ``source`` amplitude of the
    pulsatile source (optional, default 0).
    """
    a = float(params["a"])
    nu = float(params["nu"])
    amp = float(params["amplitude"])
    width = float(params["width"])
    q = float(params.get("source", 0.0))
    dx = 1.0 / n_nodes
    cfl = abs(a) * dt_solver / dx
    dif = nu * dt_solver / (dx * dx)
    if cfl > 0.9:
        raise ConfigError(f"CFL number {cfl:.4g} exceeds 0.9 (a={a}, dt={dt_solver}, dx={dx})")
    if dif > 0.4:
        raise ConfigError(f"diffusion number {dif:.4g} exceeds 0.4 (nu={nu}, dt={dt_solver}, dx={dx})")
    n_steps = int(round(T / dt_solver))
    if n_steps % save_stride:
        raise ConfigError(f"T/dt_solver={n_steps} steps is not a multiple of save_stride={save_stride}")
    x = np.arange(n_nodes) * dx
    u = amp * _periodic_gaussian(x, PULSE_CENTER, width)
    S = _periodic_gaussian(x, SOURCE_CENTER, SOURCE_WIDTH)
    n_save = n_steps // save_stride
    saved = np.empty((n_save, n_nodes))
    times = np.empty(n_save)
    inputs = np.empty((n_save, 5))
    for step in range(n_steps):
        t = step * dt_solver
        if a >= 0:
            adv = u - np.roll(u, 1)
        else:
            adv = np.roll(u, -1) - u
        lap = np.roll(u, 1) - 2.0 * u + np.roll(u, -1)
        u = u - cfl * np.sign(a) * adv + dif * lap
        if q:
            u = u + dt_solver * q * source_waveform(t) * S
        if (step + 1) % save_stride == 0:
            j = (step + 1) // save_stride - 1
            t1 = (step + 1) * dt_solver
            saved[j] = u
            times[j] = t1
            inputs[j] = (a, nu, amp, width, q * source_waveform(t1))
    return {"times": times, "u": saved, "inputs": inputs, "coords": x}


def heat_kernel_solution(x, T, nu, amplitude, width, center=PULSE_CENTER, images=3):
    """Exact periodic solution for a Gaussian pulse under pure diffusion."""
    sig = np.sqrt(width ** 2 + 2.0 * nu * T)
    return amplitude * (width / sig) * _periodic_gaussian(np.asarray(x, float), center, sig, images)


ADVDIFF_INPUTS = ["a", "nu", "amplitude", "width", "source_signal"]


def generate_advdiff_dataset(n_samples: int = 32, n_val: int = 7, n_nodes: int = 128, T: float = 1.0,
                             dt_solver: float = 0.0005, save_stride: int = 25, baseline: dict | None = None,
                             seed: int = 0) -> TrajectoryDataset:
    base = {**ADVDIFF_BASELINE, **(baseline or {})}
    factors = latin_hypercube(n_samples, [ADVDIFF_FACTOR_RANGE] * len(ADVDIFF_PARAMS), seed)
    P = factors * np.array([base[p] for p in ADVDIFF_PARAMS])
    inputs, fields = [], []
    for row in P:
        out = solve_advdiff_1d(dict(zip(ADVDIFF_PARAMS, row)), n_nodes, dt_solver, T, save_stride)
        inputs.append(out["inputs"])
        fields.append(out["u"][:, :, None])
        coords, times = out["coords"], out["times"]
    meta = {
        "generator": "advdiff", "seed": int(seed), "n_val": int(n_val),
        "parameter_ranges": {p: [base[p] * ADVDIFF_FACTOR_RANGE[0], base[p] * ADVDIFF_FACTOR_RANGE[1]]
                             for p in ADVDIFF_PARAMS},
        "solver": {"n_nodes": n_nodes, "T": T, "dt_solver": dt_solver, "save_stride": save_stride},
    }
    return TrajectoryDataset(coords[:, None], times, inputs, fields, P, BoundaryMask.none(n_nodes),
                             list(ADVDIFF_INPUTS), ["u"], list(ADVDIFF_PARAMS), meta)


def generate_zero_dataset(n_samples: int = 6, n_val: int = 2, n_nodes: int = 16, n_steps: int = 10,
                          n_inputs: int = 2, seed: int = 0) -> TrajectoryDataset:
    """Smoke-test dataset: random constant inputs, identically zero field."""
    P = latin_hypercube(n_samples, [(0.0, 1.0)] * n_inputs, seed)
    times = np.arange(1, n_steps + 1, dtype=np.float64)
    inputs = [np.tile(row, (n_steps, 1)) for row in P]
    fields = [np.zeros((n_steps, n_nodes, 1)) for _ in P]
    coords = np.linspace(0.0, 1.0, n_nodes)[:, None]
    names = [f"p{i}" for i in range(n_inputs)]
    meta = {"generator": "zero", "seed": int(seed), "n_val": int(n_val)}
    return TrajectoryDataset(coords, times, inputs, fields, P, BoundaryMask.none(n_nodes),
                             names, ["u"], names, meta)


GENERATORS = {
    "monodomain": generate_monodomain_dataset,
    "advdiff": generate_advdiff_dataset,
    "zero": generate_zero_dataset,
}


def generate(generator: str, **kwargs) -> TrajectoryDataset:
    try:
        fn = GENERATORS[generator]
    except KeyError:
        raise ConfigError(f"unknown generator {generator!r}; choose from {sorted(GENERATORS)}") from None
    return fn(**kwargs)


# -- on-disk format -----------------------------------------------------------

def _write_blob(path: Path, arr: np.ndarray):
    path.write_bytes(np.ascontiguousarray(arr, dtype=_F32).tobytes())


def write_dataset(dataset: TrajectoryDataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T, N, Nd = dataset.n_steps, dataset.n_nodes, dataset.n_dims
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator": dataset.metadata.get("generator", "custom"),
        "seed": dataset.metadata.get("seed"),
        "n_samples": len(dataset),
        "n_val": dataset.n_val,
        "n_nodes": N,
        "n_dims": Nd,
        "n_steps": T,
        "input_channels": list(dataset.input_channels),
        "output_channels": list(dataset.output_channels),
        "parameter_names": list(dataset.parameter_names),
        "parameter_ranges": dataset.metadata.get("parameter_ranges", {}),
        "parameters": dataset.parameters.tolist(),
        "mask_value": float(dataset.mask.value),
        "solver": dataset.metadata.get("solver", {}),
    }
    _write_blob(d / "coords.bin", dataset.coords)
    _write_blob(d / "times.bin", dataset.times)
    _write_blob(d / "mask.bin", dataset.mask.flags.astype(_F32))
    for k, (I, u) in enumerate(zip(dataset.inputs, dataset.fields)):
        _write_blob(d / f"I_{k}.bin", I)
        _write_blob(d / f"u_{k}.bin", u)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def _read_blob(path: Path, shape) -> np.ndarray:
    if not path.exists():
        raise IntegrityError(f"missing blob {path.name}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * _F32.itemsize
    if len(raw) != expected:
        raise IntegrityError(f"{path.name} has {len(raw)} bytes, manifest implies {expected} for shape {tuple(shape)}")
    return np.frombuffer(raw, dtype=_F32).reshape(shape).copy()


REQUIRED_KEYS = ("format_version", "n_samples", "n_nodes", "n_dims", "n_steps",
                 "input_channels", "output_channels")


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FormatError(f"{directory} has no manifest.json")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest.json is not valid JSON: {e}") from None
    missing = [k for k in REQUIRED_KEYS if k not in m]
    if missing:
        raise FormatError(f"manifest.json lacks keys {missing}")
    if str(m["format_version"]) != FORMAT_VERSION:
        raise FormatError(f"dataset format version {m['format_version']!r}, expected {FORMAT_VERSION!r}")
    return m


def read_dataset(directory) -> TrajectoryDataset:
    """Inverse of :func:`write_dataset`; validates every blob against the manifest."""
    d = Path(directory)
    m = read_manifest(d)
    S, N, Nd, T = m["n_samples"], m["n_nodes"], m["n_dims"], m["n_steps"]
    n_in, n_out = len(m["input_channels"]), len(m["output_channels"])
    coords = _read_blob(d / "coords.bin", (N, Nd))
    times = _read_blob(d / "times.bin", (T,))
    flags = _read_blob(d / "mask.bin", (N,)) != 0
    inputs = [_read_blob(d / f"I_{k}.bin", (T, n_in)) for k in range(S)]
    fields = [_read_blob(d / f"u_{k}.bin", (T, N, n_out)) for k in range(S)]
    params = np.asarray(m.get("parameters") or np.zeros((S, 0)), dtype=np.float64).reshape(S, -1)
    meta = {k: m[k] for k in ("generator", "seed", "n_val", "parameter_ranges", "solver") if k in m}
    return TrajectoryDataset(coords, times, inputs, fields, params, BoundaryMask(flags, m.get("mask_value", 0.0)),
                             m["input_channels"], m["output_channels"], m.get("parameter_names", []), meta)


def write_field_blob(path, array) -> None:
    """Write one [T, N_nodes, N_u] array in the dataset blob encoding."""
    _write_blob(Path(path), array)


def directory_digest(directory) -> dict:
    """File name -> bytes for every regular file, for bitwise comparisons."""
    d = Path(directory)
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}

