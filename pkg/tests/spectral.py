"""High-frequency fitting probe shared by the reconstruction and acceptance tests."""

import numpy as np

from lfldnet import autodiff as ad
from lfldnet.reconstruction import ReconstructionNet, init_fourier_kernel
from lfldnet.training import AdamState, adam_step

# lr above the training default: 2000 full-batch steps at 3e-4 leave both
# models far from converged and the comparison mostly measures init noise.
LR = 1e-3


def fit_sine(n_frequencies, seed, steps=2000, n_points=256, freq=8, hidden=(64, 64, 64)):
    """Final MSE of a decoder fitted to sin(2 pi freq x) on [0, 1]."""
    x = np.linspace(0.0, 1.0, n_points, dtype=np.float32)[:, None]
    y = np.sin(2 * np.pi * freq * x).astype(np.float32)
    kernel = init_fourier_kernel(n_frequencies, 1, 1.0, seed=seed)
    net = ReconstructionNet(0, n_frequencies, 1, hidden, coord_passthrough=(n_frequencies == 0), seed=seed)
    params = kernel.parameters() + net.parameters()
    state = AdamState()
    for _ in range(steps):
        ad.zero_grads([p for _, p in params])
        with ad.Tape() as tape:
            loss = ad.mean_squared_error(net(net.point_features(x, kernel)), y)
        tape.backward(loss)
        adam_step(params, {n: p.grad for n, p in params}, state, LR)
    with ad.no_tape():
        return float(ad.mean_squared_error(net(net.point_features(x, kernel)), y).data)
