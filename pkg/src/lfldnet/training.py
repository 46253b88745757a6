"""Loss, Adam, the epoch loop, evaluation and seeded random search.

Each epoch draws a fresh subset of mesh nodes, iterates minibatches of
whole trajectories, and fits all time steps at the drawn nodes.  The
validation loss is measured on every node of the held-out samples and the
parameters with the lowest validation loss are kept.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .errors import ConfigError, ShapeError, TrainingDivergence
from .model import LatentModel, NormalizationStats, denormalize, normalize
from .rng import PortableRNG

log = logging.getLogger(__name__)


def mse_loss(pred, obs):
    """Mean squared difference; a tape-tracked scalar when ``pred`` is a Tensor."""
    if isinstance(pred, Tensor) or isinstance(obs, Tensor):
        return ad.mean_squared_error(pred, obs)
    pred, obs = np.asarray(pred, np.float64), np.asarray(obs, np.float64)
    if pred.shape != obs.shape:
        raise ShapeError(f"prediction {pred.shape} and observation {obs.shape} differ")
    return float(np.mean((pred - obs) ** 2))


# -- Adam -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state: AdamState, lr: float, masks=None) -> AdamState:
    """Bias-corrected Adam update in place, then re-apply wiring masks.

    ``params`` is a list of ``(name, Tensor)``; ``grads`` maps names to
    arrays (missing or ``None`` means zero).
    """
    for name, _ in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, p.dtype)
        if g.shape != p.shape:
            raise ShapeError(f"gradient of {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype)
        if masks and name in masks:
            p.data *= masks[name].astype(p.dtype)
    return state


def sample_spatial_points(n_nodes: int, points_per_epoch: int, rng: PortableRNG) -> np.ndarray:
    """Sorted node indices drawn uniformly without replacement."""
    if points_per_epoch >= n_nodes:
        if points_per_epoch > n_nodes:
            warnings.warn(f"points_per_epoch={points_per_epoch} exceeds the {n_nodes} mesh nodes; "
                          "using every node", stacklevel=2)
        return np.arange(n_nodes)
    return np.sort(rng.choice(n_nodes, points_per_epoch))


# -- history ----------------------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = 0
    train_indices: list = field(default_factory=list)
    val_indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    @property
    def best_val(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else float("inf")

    def rows(self):
        return [(i + 1, tr, va, s) for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss,
                                                                          self.seconds))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for e, tr, va, s in self.rows():
                w.writerow([e, repr(tr), repr(va), f"{s:.3f}"])


# -- training ---------------------------------------------------------------------

def split_indices(n_samples: int, n_val: int, seed: int):
    if n_samples < 2:
        raise ConfigError(f"training needs at least 2 samples, got {n_samples}")
    n_val = min(max(1, int(n_val)), n_samples - 1)
    perm = PortableRNG(seed).spawn("split").permutation(n_samples)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _normalized_split(model: LatentModel, dataset, idx):
    I = np.stack([model.prepare_inputs(dataset.inputs[i]) for i in idx])
    U = np.stack([normalize(dataset.fields[i], model.stats.outputs, model.dtype) for i in idx])
    return I, U


def _val_loss(model, I, U, t_norm, x_norm, flags, batch_size):
    total = 0.0
    with ad.no_tape():
        feats = model.point_features(x_norm)
        for start in range(0, I.shape[0], batch_size):
            sl = slice(start, start + batch_size)
            s = model.states_normalized(I[sl], t_norm)
            pred = model.decode_normalized(s, feats, flags).data
            total += float(np.sum((pred.astype(np.float64) - U[sl]) ** 2))
    return total / U.size


def train(dataset, config: TrainConfig, callback=None, log_every: int = 0):
    """Fit a fresh model; returns ``(model, history)`` with the best-validation parameters.

    ``callback(epoch, history, model)`` runs after every epoch; returning
    True stops training.
    """
    config = config.validate()
    n_val = config.n_val if config.n_val is not None else dataset.n_val
    train_idx, val_idx = split_indices(len(dataset), n_val, config.seed_split)
    model = LatentModel.for_dataset(config, dataset)
    if config.variant == "lfldnet" and config.n_frequencies == 0:
        warnings.warn("lfldnet with n_frequencies=0 is the same network as lldnet", stacklevel=2)
    model.stats = NormalizationStats.from_dataset(dataset, train_idx)
    I_tr, U_tr = _normalized_split(model, dataset, train_idx)
    I_va, U_va = _normalized_split(model, dataset, val_idx)
    t_norm = model.normalized_times(dataset.times)
    x_norm = model.prepare_coords(dataset.coords)
    flags = None if dataset.mask.empty else dataset.mask.flags
    params = model.parameters()
    masks = model.masks()
    state = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    sampler = PortableRNG(config.seed_sampling).spawn("epochs")
    history = TrainHistory(train_indices=train_idx.tolist(), val_indices=val_idx.tolist())
    best_state = None
    n_train, N = len(train_idx), dataset.n_nodes
    n_points = config.points_per_epoch
    if n_points > N:
        warnings.warn(f"points_per_epoch={n_points} exceeds the {N} mesh nodes; using every node", stacklevel=2)
        n_points = N
    t_start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        erng = sampler.spawn(epoch)
        pts = sample_spatial_points(N, n_points, erng.spawn("points"))
        order = erng.spawn("order").permutation(n_train)
        x_pts = x_norm[pts]
        f_pts = None if flags is None else flags[pts]
        total = 0.0
        for start in range(0, n_train, config.batch_size):
            b = order[start:start + config.batch_size]
            ad.zero_grads([p for _, p in params])
            with ad.Tape() as tape:
                pred = model.forward_normalized(I_tr[b], t_norm, x_pts, f_pts)
                loss = mse_loss(pred, U_tr[b][:, :, pts])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise _diverged(f"non-finite training loss at epoch {epoch}", epoch, model, best_state,
                                    history)
                tape.backward(loss)
            named = {name: p.grad for name, p in params}
            try:
                adam_step(params, named, state, config.lr, masks)
            except TrainingDivergence as exc:
                raise _diverged(f"{exc} at epoch {epoch}", epoch, model, best_state, history) from None
            total += value * len(b)
        val = _val_loss(model, I_va, U_va, t_norm, x_norm, flags, config.batch_size)
        history.train_loss.append(total / n_train)
        history.val_loss.append(val)
        history.seconds.append(time.perf_counter() - t_start)
        if not np.isfinite(val):
            raise _diverged(f"non-finite validation loss at epoch {epoch}", epoch, model, best_state, history)
        if best_state is None or val < history.best_val:
            history.best_epoch = epoch
            best_state = model.get_state()
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.3e val %.3e", epoch, history.train_loss[-1], val)
        if callback is not None and callback(epoch, history, model):
            break
        if config.target_val_loss is not None and val < config.target_val_loss:
            break
    model.set_state(best_state)
    return model, history


def _diverged(msg, epoch, model, best_state, history):
    good = None
    if best_state is not None:
        model.set_state(best_state)
        good = model
    return TrainingDivergence(msg, epoch=epoch, model=good, history=history)


# -- evaluation -------------------------------------------------------------------

def evaluate(model: LatentModel, dataset, indices=None, error_fields: bool = False, chunks: int = 1) -> dict:
    """Per-sample normalized MSE and optional physical ``|u_pred - u_obs|`` fields ``[T, N, N_u]``."""
    idx = range(len(dataset)) if indices is None else indices
    per_sample, errors = [], []
    for i in idx:
        i = int(i)
        z = model.predict_normalized(dataset.inputs[i], dataset.times, dataset.coords, chunks)
        obs = normalize(dataset.fields[i], model.stats.outputs)
        per_sample.append(float(np.mean((z.astype(np.float64) - obs) ** 2)))
        if error_fields:
            u = denormalize(z, model.stats.outputs, model.dtype)
            if not dataset.mask.empty:
                u[:, dataset.mask.flags] = model.dtype.type(dataset.mask.value)
            errors.append(np.abs(u - dataset.fields[i]).astype(np.float32))
    out = {"per_sample": per_sample, "aggregate": float(np.mean(per_sample)) if per_sample else float("nan"),
           "indices": [int(i) for i in idx]}
    if error_fields:
        out["error_fields"] = errors
    return out


# -- random search ----------------------------------------------------------------

@dataclass
class SearchResult:
    rows: list
    histories: dict

    def table(self) -> list:
        return self.rows

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.rows, fh, indent=2)


def sample_trials(space: dict, trials: int, seed: int) -> list:
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("search space must name at least one hyperparameter with candidate values")
    rng = PortableRNG(seed).spawn("search")
    keys = sorted(space)
    out = []
    for _ in range(int(trials)):
        out.append({k: space[k][int(rng.integers(len(space[k])))] for k in keys})
    return out


def random_search(dataset, space: dict, trials: int = 20, epochs_per_trial: int = 500, seed: int = 0,
                  base_config: TrainConfig | None = None) -> SearchResult:
    """Seeded uniform search over a finite grid, ranked by final validation loss."""
    base = base_config or TrainConfig()
    rows, histories = [], {}
    for k, overrides in enumerate(sample_trials(space, trials, seed)):
        row = {"trial": k, "config": overrides}
        try:
            cfg = base.replace(max_epochs=int(epochs_per_trial), **overrides)
            _, hist = train(dataset, cfg)
        except ConfigError as exc:
            row.update(status="rejected", reason=str(exc))
        except TrainingDivergence as exc:
            row.update(status="diverged", reason=str(exc))
        else:
            histories[k] = hist
            row.update(status="ok", train_loss=hist.train_loss[-1], val_loss=hist.val_loss[-1],
                       best_val_loss=hist.best_val)
        rows.append(row)
    ok = sorted((r for r in rows if r["status"] == "ok"), key=lambda r: (r["val_loss"], r["trial"]))
    for rank, r in enumerate(ok, 1):
        r["rank"] = rank
    rest = [r for r in rows if r["status"] != "ok"]
    return SearchResult(ok + rest, histories)


__all__ = ["mse_loss", "AdamState", "adam_step", "sample_spatial_points", "TrainHistory", "split_indices",
           "train", "evaluate", "SearchResult", "sample_trials", "random_search"]
