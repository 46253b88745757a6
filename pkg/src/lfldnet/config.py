"""Training configuration and named architecture presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError

VARIANTS = ("ldnet", "lldnet", "lfldnet")


@dataclass
class TrainConfig:
    """Every knob of one training run.

    ``dyn_neurons`` is the total NCP neuron budget for the liquid variants
    and the hidden width of the neural-ODE right-hand side for LDNet
    (``dyn_layers`` hidden layers).  ``points_per_epoch`` larger than the
    mesh is clipped to all nodes.
    """

    variant: str = "lfldnet"
    dyn_neurons: int = 64
    n_states: int = 8
    rec_layers: int = 4
    rec_width: int = 64
    n_frequencies: int = 16
    fourier_scale: float = 1.0
    mixed_memory: bool = True
    dyn_layers: int = 2
    ode_substeps: int = 1
    fanout_sensory: int | None = None
    fanout_inter: int | None = None
    recurrent_command: int | None = None
    fanin_motor: int | None = None
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 5
    points_per_epoch: int = 1000
    max_epochs: int = 100
    target_val_loss: float | None = None
    n_val: int | None = None
    seed_init: int = 0
    seed_sampling: int = 1
    seed_split: int = 2
    precision: str = "float32"

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("dyn_neurons", "n_states", "rec_layers", "rec_width", "dyn_layers", "ode_substeps",
                     "batch_size", "points_per_epoch", "max_epochs"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.n_frequencies, int) or self.n_frequencies < 0:
            raise ConfigError(f"n_frequencies must be a non-negative integer, got {self.n_frequencies!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("Adam constants need 0 <= beta < 1 and eps > 0")
        if self.fourier_scale < 0:
            raise ConfigError(f"fourier_scale must be non-negative, got {self.fourier_scale}")
        if self.n_val is not None and self.n_val < 1:
            raise ConfigError(f"n_val must be >= 1, got {self.n_val}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d or {})
        preset = d.pop("preset", None)
        base = preset_config(preset).to_dict() if preset else {}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training keys {unknown}")
        base.update(d)
        return cls(**base).validate()

    def replace(self, **changes) -> "TrainConfig":
        unknown = sorted(set(changes) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"unknown training keys {unknown}")
        return dataclasses.replace(self, **changes).validate()

    @property
    def effective_frequencies(self) -> int:
        return self.n_frequencies if self.variant == "lfldnet" else 0


# Published tuned architectures and the desk-scale one used in tests.
PRESETS = {
    # electrophysiology optimum: 200 neurons, 10 x 200 decoder, N_f = 50, N_s = 50
    "ep": dict(variant="lfldnet", dyn_neurons=200, rec_layers=10, rec_width=200, n_frequencies=50, n_states=50),
    # CFD optimum: 300 neurons, 5 x 300 decoder, N_f = 100, N_s = 100
    "cfd": dict(variant="lfldnet", dyn_neurons=300, rec_layers=5, rec_width=300, n_frequencies=100, n_states=100),
    "ep_lldnet": dict(variant="lldnet", dyn_neurons=300, rec_layers=10, rec_width=300, n_frequencies=0, n_states=50),
    "ep_ldnet": dict(variant="ldnet", dyn_neurons=450, dyn_layers=10, rec_layers=10, rec_width=450,
                     n_frequencies=0, n_states=150),
    "small": dict(variant="lfldnet", dyn_neurons=64, rec_layers=4, rec_width=64, n_frequencies=16, n_states=8,
                  lr=3e-4, batch_size=5, points_per_epoch=200),
}

# Search grid of the original tuning runs.
TUNING_SEARCH_SPACE = {
    "dyn_neurons": [200, 250, 300, 350, 400],
    "rec_layers": [5, 10, 15],
    "n_frequencies": [25, 50, 75, 100, 125, 150, 175, 200],
    "n_states": [50, 100, 150],
}


def preset_config(name: str, **overrides) -> TrainConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return TrainConfig(**base).validate()


__all__ = ["TrainConfig", "PRESETS", "TUNING_SEARCH_SPACE", "VARIANTS", "preset_config"]
