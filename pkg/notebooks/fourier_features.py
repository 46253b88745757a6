# %% [markdown]
# # Random Fourier features and spectral bias
#
# A plain coordinate MLP fits low frequencies first.  Mapping x through
# [cos(2 pi x B), sin(2 pi x B)] with Gaussian B lets the same decoder fit a
# sin(16 pi x) target far faster.

# %%
import numpy as np

from lfldnet import autodiff as ad
from lfldnet.reconstruction import ReconstructionNet, fourier_embed, init_fourier_kernel
from lfldnet.training import AdamState, adam_step

x = np.linspace(0, 1, 256, dtype=np.float32)[:, None]
y = np.sin(2 * np.pi * 8 * x).astype(np.float32)

# %%
kern = init_fourier_kernel(16, 1, scale=1.0, seed=0)
emb = fourier_embed(x, kern).data
print("embedding", emb.shape)
# every frequency pair lies on the unit circle
print("cos^2 + sin^2 = 1:", np.allclose(emb[:, :16] ** 2 + emb[:, 16:] ** 2, 1, atol=1e-6))


# %%
def fit(n_freq, steps=1500, seed=0, lr=1e-3):
    kern = init_fourier_kernel(n_freq, 1, 1.0, seed=seed)
    # N_f = 0 feeds raw coordinates to the MLP
    net = ReconstructionNet(0, n_freq, 1, (64, 64, 64), coord_passthrough=(n_freq == 0), seed=seed)
    params = kern.parameters() + net.parameters()
    state = AdamState()
    for _ in range(steps):
        ad.zero_grads([p for _, p in params])
        with ad.Tape() as tape:
            loss = ad.mean_squared_error(net(net.point_features(x, kern)), y)
        tape.backward(loss)
        adam_step(params, {n: p.grad for n, p in params}, state, lr)
    with ad.no_tape():
        return float(ad.mean_squared_error(net(net.point_features(x, kern)), y).data)


for nf in (0, 8, 32):
    print("N_f = %2d   final mse %.3e" % (nf, fit(nf)))
