"""One test per acceptance criterion.

Each test records a pass/fail line (printed again in the terminal summary)
and then asserts it.  The training criteria are the slow part of the suite:
criterion 5 trains the small preset to its validation bound and criteria 6
and 7 share twelve 500-epoch runs.
"""

import csv
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from lfldnet import autodiff as ad
from lfldnet.config import TrainConfig, preset_config
from lfldnet.datagen import (ADVDIFF_BASELINE, conduction_speed, directory_digest, generate_monodomain_dataset,
                             heat_kernel_solution, read_dataset, solve_advdiff_1d, solve_monodomain_1d, write_dataset)
from lfldnet.dynamics import CfCNetwork, LTCParams, cfc_closed_form_reference, cfc_sequence_forward
from lfldnet.model import load_checkpoint, save_checkpoint
from lfldnet.nn import MLP
from lfldnet.reconstruction import ReconstructionNet, fourier_embed, init_fourier_kernel, reconstruct
from lfldnet.rng import PortableRNG
from lfldnet.training import evaluate, train
from lfldnet.wiring import PAIRS, build_wiring, motor_reachable, split_neurons
from lfldnet.cli import main

from acceptance_report import report
from fdcheck import max_rel_error
from spectral import fit_sine

LECUN_BOUND = 1.7159
ACTIVATIONS = ["lecun_tanh", "gelu", "sigmoid", "tanh", "exp", "neg", "sin", "cos", "softplus", "identity",
               "square"]


# -- 1 -----------------------------------------------------------------------------

def _primitive_errors(r):
    """Every primitive on fresh random shapes; returns the worst relative error."""
    worst = 0.0
    n, m = int(r.integers(2, 5)), int(r.integers(2, 5))
    x = ad.parameter(r.normal(size=(n, m)))
    w = r.normal(size=(n, m))
    for kind in ACTIVATIONS:
        worst = max(worst, max_rel_error(lambda: ad.sum(ad.mul(ad.activation(kind, x), w)), [x]))
    a = ad.parameter(r.normal(size=(n, m)))
    b = ad.parameter(r.normal(size=(m, 3)))
    bias = ad.parameter(r.normal(size=3))
    c = ad.parameter(r.normal(size=(2, m)))
    mask = r.random((2 * n, 2 * m)) < 0.3
    wo = r.normal(size=(2 * n, 2 * m))

    def structural():
        lin = ad.linear(a, b, bias)
        cat = ad.concat([lin, ad.sub(lin, ad.matmul(a, b))], axis=1)
        st = ad.stack([a, ad.mul(a, x)], axis=0)
        oc = ad.outer_concat(a, c)  # [2n, 2m]
        filled = ad.mask_fill(oc, mask, 0.3)
        return (ad.mean(ad.square(cat)) + ad.sum(ad.reshape(st, (2 * n * m,)))
                + ad.sum(ad.mul(filled, wo)) + ad.mean_squared_error(a, x))

    worst = max(worst, max_rel_error(structural, [a, b, bias, c, x]))
    return worst


def _network_errors(seed, r):
    """CfC network, Fourier embedding and reconstruction MLP on one random draw."""
    n_in, n_s = int(r.integers(1, 4)), int(r.integers(1, 3))
    wiring = build_wiring(split_neurons(int(r.integers(8, 13)), n_in, n_s), seed=seed)
    net = CfCNetwork(wiring, mixed_memory=bool(seed % 2), seed=seed)
    I = r.normal(size=(2, 3, n_in))
    times = np.cumsum(r.uniform(0.1, 2.0, size=3))
    tgt = r.normal(size=(2, 3, n_s))
    cfc = max_rel_error(lambda: ad.mean_squared_error(net(I, times), tgt), [p for _, p in net.parameters()])

    nf, nd = int(r.integers(1, 4)), int(r.integers(1, 3))
    kernel = init_fourier_kernel(nf, nd, seed=seed)
    dec = ReconstructionNet(n_s, nf, nd, hidden=(int(r.integers(3, 7)),) * 2, n_outputs=2, seed=seed,
                            dtype=np.float64)
    s = ad.parameter(r.normal(size=(5, n_s)))
    x = r.uniform(-1, 1, size=(5, nd))
    y = r.normal(size=(5, 2))
    w = r.normal(size=(5, 2 * nf))
    emb = max_rel_error(lambda: ad.sum(ad.mul(fourier_embed(x, kernel), w)), [kernel.B])
    rec = max_rel_error(lambda: ad.mean_squared_error(reconstruct(s, x, None, None, dec, kernel), y),
                        [s, kernel.B] + [p for _, p in dec.parameters()])
    return cfc, emb, rec


def test_criterion_01_gradient_suite():
    start = time.perf_counter()
    prim, nets = [], []
    with ad.precision("float64"):
        for seed in range(24):
            r = np.random.default_rng(1000 + seed)
            prim.append(_primitive_errors(r))
            nets.append(max(_network_errors(seed, r)))
    elapsed = time.perf_counter() - start
    ok = max(prim) < 1e-5 and max(nets) < 1e-4 and elapsed < 60
    report(1, ok, f"24 random draws: primitives max rel err {max(prim):.2e} (< 1e-5), "
                  f"CfC/Fourier/decoder {max(nets):.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


# -- 2 -----------------------------------------------------------------------------

def test_criterion_02_closed_form_limits():
    zero_err, inf_err = 0.0, 0.0
    with ad.precision("float64"):
        for seed in range(50):
            r = np.random.default_rng(seed)
            n, k = int(r.integers(1, 6)), int(r.integers(1, 4))
            inner = MLP([n + k, int(r.integers(2, 8)), n], "lecun_tanh", "sigmoid", PortableRNG(seed), np.float64)
            p = LTCParams.from_values(r.uniform(0.05, 3.0, size=n), r.normal(size=n), inner)
            y0, I = r.normal(size=n), r.normal(size=k)
            n_neg = inner(np.concatenate([-y0, -I])[None]).data[0]
            want0 = (y0 - p.A.data) * n_neg + p.A.data
            zero_err = max(zero_err, np.abs(cfc_closed_form_reference(y0, I, 0.0, p) - want0).max())
            inf_err = max(inf_err, np.abs(cfc_closed_form_reference(y0, I, 1e4, p) - p.A.data).max())
    ok = zero_err <= 1e-6 and inf_err <= 1e-6
    report(2, ok, f"50 random LTC cells: t=0 identity err {zero_err:.1e}, t->inf distance to A {inf_err:.1e} "
                  "(both <= 1e-6)")
    assert ok


# -- 3 -----------------------------------------------------------------------------

def test_criterion_03_cfc_boundedness():
    probes, worst = 0, 0.0
    draws, batch = 500, 20
    for d in range(draws):
        r = np.random.default_rng(d)
        n_in, n_s = int(r.integers(1, 5)), int(r.integers(1, 4))
        net = CfCNetwork(build_wiring(split_neurons(n_in + n_s + int(r.integers(2, 12)), n_in, n_s), seed=d),
                         mixed_memory=bool(d % 2), seed=d)
        scale = 10 ** r.uniform(-1, 1.5)
        for _, p in net.parameters():
            p.data[:] = (scale * r.normal(size=p.shape)).astype(p.dtype)
        for layer in net.layers:
            for name, m in layer.masks().items():
                layer.tensors[name.split(".")[-2] + "_w"].data *= m
        steps = int(r.integers(1, 6))
        times = np.cumsum(10 ** r.uniform(-3, 3, size=steps))
        I = 10 ** r.uniform(-1, 2) * r.normal(size=(batch, steps, n_in))
        s = cfc_sequence_forward(I, times, net).data
        worst = max(worst, float(np.abs(s).max()))
        probes += batch
    ok = probes >= 10_000 and worst <= LECUN_BOUND
    report(3, ok, f"{probes} probes over {draws} random parameter draws: max |s| = {worst:.5f} (<= 1.7159)")
    assert ok


# -- 4 -----------------------------------------------------------------------------

def test_criterion_04_wiring_suite(tmp_path):
    determ, pairs_ok, reach_ok = True, True, True
    for seed in range(20):
        r = np.random.default_rng(seed)
        n_in, n_s = int(r.integers(1, 8)), int(r.integers(1, 10))
        counts = split_neurons(n_in + n_s + int(r.integers(2, 60)), n_in, n_s)
        g = build_wiring(counts, seed=seed)
        determ &= g == build_wiring(counts, seed=seed)
        pairs_ok &= all((a, b) in PAIRS for a, _, b, _, _ in g.synapses)
        reach_ok &= bool(motor_reachable(g).all())

    ds = generate_monodomain_dataset(n_samples=6, n_val=1, n_nodes=12, T=90.0, save_stride=100, seed=2)
    cfg = TrainConfig(dyn_neurons=24, n_states=3, rec_layers=2, rec_width=12, n_frequencies=4,
                      points_per_epoch=8, batch_size=1, max_epochs=20)
    model, _ = train(ds, cfg)  # 5 training samples x 20 epochs = 100 Adam steps
    params = dict(model.parameters())
    masked = sum(int((m == 0).sum()) for m in model.masks().values())
    zeros_ok = all(np.all(params[n].data[m == 0] == 0.0) for n, m in model.masks().items())
    ok = determ and pairs_ok and reach_ok and zeros_ok and masked > 0
    report(4, ok, f"20 random graphs: deterministic={determ}, layer-pair edges only={pairs_ok}, "
                  f"all motors reachable={reach_ok}; {masked} masked weights exactly 0 after 100 Adam "
                  f"steps={zeros_ok}")
    assert ok


# -- 5 and 8 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def regression_run(monodomain_dir):
    ds = read_dataset(monodomain_dir)
    cfg = preset_config("small", max_epochs=2000, target_val_loss=2e-2)
    start = time.perf_counter()
    model, hist = train(ds, cfg)
    return ds, model, hist, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_05_training_regression(regression_run):
    ds, model, hist, seconds = regression_run
    ok = hist.best_val < 2e-2 and len(hist) <= 2000
    report(5, ok, f"small preset on monodomain ({len(hist.train_indices)}/{len(hist.val_indices)} split, "
                  f"{ds.n_nodes} nodes x {ds.n_steps} steps): best val normalized MSE {hist.best_val:.3e} "
                  f"(< 2e-2) at epoch {hist.best_epoch}, {seconds / 60:.1f} min on one core")
    assert ok


@pytest.mark.slow
def test_criterion_08_state_export(regression_run, monodomain_dir, tmp_path):
    _, model, hist, _ = regression_run
    ckpt = tmp_path / "model.lfld"
    save_checkpoint(model, ckpt)
    k = hist.val_indices[0]
    texts = []
    for run in ("a", "b"):
        code = main(["infer", "--checkpoint", str(ckpt), "--data", str(monodomain_dir), "--sample", str(k),
                     "--out", str(tmp_path / run)])
        assert code == 0
        texts.append((tmp_path / run / f"states_{k}.csv").read_text())
    rows = list(csv.reader(texts[0].splitlines()))
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    finite = bool(np.all(np.isfinite(values)))
    bound = float(np.abs(values).max())
    same = texts[0] == texts[1]
    ok = finite and bound <= LECUN_BOUND and same and values.shape == (60, model.n_states)
    report(8, ok, f"validation sample {k}: states CSV {values.shape}, finite={finite}, max |s| {bound:.4f} "
                  f"(<= 1.7159), identical across two inference runs={same}")
    assert ok


# -- 6 and 7 ---------------------------------------------------------------------------

SWEEP_BASE = dict(rec_layers=3, rec_width=32, points_per_epoch=32, max_epochs=500)
SWEEP_SEEDS = (0, 1, 2)
SWEEP_ARMS = {
    "ldnet": dict(variant="ldnet"),
    "nf0": dict(variant="lldnet", n_frequencies=0),
    "nf8": dict(variant="lfldnet", n_frequencies=8),
    "nf32": dict(variant="lfldnet", n_frequencies=32),
}


@pytest.fixture(scope="module")
def sweep_runs(monodomain_dir):
    """Epoch-500 training losses per arm and seed, shared by criteria 6 and 7.

    ``full`` is the epoch-500 model's normalized MSE over every node of the
    training trajectories; ``recorded`` is the history value, which averages
    over that epoch's 32 sampled nodes only and is correspondingly noisier.
    """
    ds = read_dataset(monodomain_dir)
    full, recorded = {}, {}
    start = time.perf_counter()
    for arm, overrides in SWEEP_ARMS.items():
        full[arm], recorded[arm] = [], []
        for s in SWEEP_SEEDS:
            cfg = preset_config("small", **SWEEP_BASE, **overrides, seed_init=s, seed_sampling=100 + s)
            at_end = {}

            def snapshot(epoch, hist, model):
                if epoch == SWEEP_BASE["max_epochs"]:
                    at_end["loss"] = evaluate(model, ds, hist.train_indices)["aggregate"]

            _, hist = train(ds, cfg, callback=snapshot)
            full[arm].append(at_end["loss"])
            recorded[arm].append(hist.train_loss[SWEEP_BASE["max_epochs"] - 1])
    return full, recorded, time.perf_counter() - start


def _medians(losses):
    return {arm: float(np.median(v)) for arm, v in losses.items()}


@pytest.mark.slow
def test_criterion_06_architecture_ordering(sweep_runs):
    full, recorded, seconds = sweep_runs
    med, rec = _medians(full), _medians(recorded)
    ok = med["nf32"] < med["ldnet"]
    report(6, ok, f"median epoch-500 train loss over 3 seeds: LFLDNet {med['nf32']:.3e} < LDNet "
                  f"{med['ldnet']:.3e}; LLDNet {med['nf0']:.3e} (reported). Recorded sampled-node history: "
                  f"{rec['nf32']:.3e} / {rec['ldnet']:.3e} / {rec['nf0']:.3e}. All runs {seconds / 60:.0f} min")
    assert ok


@pytest.mark.slow
def test_criterion_07_fourier_sweep(sweep_runs):
    full, recorded, _ = sweep_runs
    med = [_medians(full)[a] for a in ("nf0", "nf8", "nf32")]
    rec = [_medians(recorded)[a] for a in ("nf0", "nf8", "nf32")]
    plain = [fit_sine(0, s) for s in range(3)]
    fourier = [fit_sine(32, s) for s in range(3)]
    spectral = float(np.median(fourier)) <= 0.5 * float(np.median(plain))
    ok = med[0] >= med[1] >= med[2] and spectral
    report(7, ok, f"median epoch-500 train loss N_f=0/8/32: {med[0]:.3e} / {med[1]:.3e} / {med[2]:.3e} "
                  f"(non-increasing; recorded history {rec[0]:.3e} / {rec[1]:.3e} / {rec[2]:.3e}); "
                  f"sin(2 pi 8 x) fit median MSE N_f=32 {np.median(fourier):.2e} vs N_f=0 "
                  f"{np.median(plain):.2e} (<= half: {spectral})")
    assert ok


# -- 9 -----------------------------------------------------------------------------

def test_criterion_09_solver_oracles():
    start = time.perf_counter()
    n, nu, T = 256, 0.004, 0.5
    dt = 0.2 * (1.0 / n) ** 2 / nu
    steps = int(np.ceil(T / dt))
    out = solve_advdiff_1d({"a": 0.0, "nu": nu, "amplitude": 1.0, "width": 0.05}, n, T / steps, T, steps)
    l2 = float(np.sqrt(np.mean((out["u"][-1] - heat_kernel_solution(out["coords"], T, nu, 1.0, 0.05)) ** 2)))

    Ds = (0.1, 0.2, 0.3, 0.4)
    speeds = [conduction_speed(D) for D in Ds]
    monotone = all(b > a for a, b in zip(speeds, speeds[1:]))

    p = {"D": 0.25, "t_stim": 50.0, "k": 8.0, "eps": 0.005}
    a = solve_monodomain_1d(p, dt_solver=0.05, save_stride=200)["u"]
    b = solve_monodomain_1d(p, dt_solver=0.025, save_stride=400)["u"]
    mono_rel = float(np.linalg.norm(a - b) / np.linalg.norm(a))
    a = solve_advdiff_1d(dict(ADVDIFF_BASELINE))["u"]
    b = solve_advdiff_1d(dict(ADVDIFF_BASELINE), dt_solver=0.00025, save_stride=50)["u"]
    adv_rel = float(np.linalg.norm(a - b) / np.linalg.norm(a))
    elapsed = time.perf_counter() - start
    ok = l2 < 1e-3 and monotone and mono_rel < 0.01 and adv_rel < 0.01 and elapsed < 300
    report(9, ok, f"heat-kernel L2 {l2:.2e} (< 1e-3); conduction speed at D={Ds}: "
                  f"{', '.join(f'{v:.4f}' for v in speeds)} mm/ms (monotone={monotone}); dt-halving change "
                  f"monodomain {mono_rel:.2%}, advdiff {adv_rel:.2%} (< 1%); {elapsed:.0f}s (< 300s)")
    assert ok


# -- 10 and 11 -------------------------------------------------------------------------

PIPELINE_CONFIG = {
    "datagen": {"generator": "monodomain", "n_samples": 8, "n_val": 2, "n_nodes": 16, "T": 120.0,
                "save_stride": 100, "seed": 5},
    "train": {"dyn_neurons": 24, "n_states": 4, "rec_layers": 2, "rec_width": 16, "n_frequencies": 8,
              "points_per_epoch": 12, "max_epochs": 50},
}
SINGLE_THREAD = {"OMP_NUM_THREADS": "1", "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}


def _cli(workdir, *args):
    env = {**os.environ, **SINGLE_THREAD}
    res = subprocess.run([sys.executable, "-m", "lfldnet", *args], cwd=workdir, env=env, capture_output=True,
                         text=True)
    return res.returncode


def _pipeline(workdir):
    """datagen -> train -> infer (1 and 4 chunks) -> eval in a fresh directory."""
    workdir.mkdir()
    (workdir / "run.json").write_text(json.dumps(PIPELINE_CONFIG))
    codes = [_cli(workdir, "datagen", "--config", "run.json", "--out", "data"),
             _cli(workdir, "train", "--config", "run.json", "--data", "data", "--out", "train")]
    for chunks in (1, 4):
        codes.append(_cli(workdir, "infer", "--checkpoint", "train/checkpoint.lfld", "--data", "data",
                          "--sample", "1", "--chunks", str(chunks), "--out", f"infer{chunks}"))
    codes.append(_cli(workdir, "eval", "--checkpoint", "train/checkpoint.lfld", "--data", "data",
                      "--error-fields", "--out", "eval"))
    return codes


def _history_losses(path):
    rows = list(csv.reader(path.read_text().splitlines()))[1:]
    return [(r[0], r[1], r[2]) for r in rows]  # the wall-time column is excluded


@pytest.fixture(scope="module")
def pipelines(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    return [(root / name, _pipeline(root / name)) for name in ("first", "second")]


def test_criterion_10_end_to_end_cli(pipelines, tmp_path):
    work, codes = pipelines[0]
    exit_ok = codes == [0] * 5
    chunk_same = (work / "infer1" / "pred_1.bin").read_bytes() == (work / "infer4" / "pred_1.bin").read_bytes()
    epochs = len(_history_losses(work / "train" / "history.csv"))

    ckpt = work / "train" / "checkpoint.lfld"
    save_checkpoint(load_checkpoint(ckpt), tmp_path / "again.lfld")
    ckpt_same = (tmp_path / "again.lfld").read_bytes() == ckpt.read_bytes()
    write_dataset(read_dataset(work / "data"), tmp_path / "data")
    digest_a = {k: v for k, v in directory_digest(work / "data").items() if k != "resolved_config.json"}
    data_same = digest_a == directory_digest(tmp_path / "data")
    metrics = json.loads((work / "eval" / "metrics.json").read_text())
    ok = exit_ok and chunk_same and epochs == 50 and ckpt_same and data_same
    report(10, ok, f"exit codes {codes}; {epochs} epochs; 1 vs 4 chunk predictions bitwise equal={chunk_same}; "
                   f"checkpoint round trip bitwise={ckpt_same}; dataset round trip bitwise={data_same}; "
                   f"eval aggregate {metrics['aggregate_normalized_mse']:.3e}")
    assert ok


def test_criterion_11_determinism(pipelines):
    (a, codes_a), (b, codes_b) = pipelines
    same_data = directory_digest(a / "data") == directory_digest(b / "data")
    same_hist = _history_losses(a / "train" / "history.csv") == _history_losses(b / "train" / "history.csv")
    same_ckpt = (a / "train" / "checkpoint.lfld").read_bytes() == (b / "train" / "checkpoint.lfld").read_bytes()
    same_pred = all((a / d / "pred_1.bin").read_bytes() == (b / d / "pred_1.bin").read_bytes()
                    for d in ("infer1", "infer4"))
    same_err = directory_digest(a / "eval") == directory_digest(b / "eval")
    ok = codes_a == codes_b == [0] * 5 and same_data and same_hist and same_ckpt and same_pred and same_err
    report(11, ok, f"two single-threaded pipeline runs: dataset {same_data}, loss history {same_hist}, "
                   f"checkpoint {same_ckpt}, predictions {same_pred}, eval outputs {same_err} (all bitwise)")
    assert ok
