# %% [markdown]
# # Quickstart: surrogate of a 1D excitable cable
#
# Generate a small Aliev-Panfilov dataset, train a liquid latent model with
# Fourier spatial features, then look at its predictions and latent states.
# Runs in a few minutes on one core.

# %%
import numpy as np

from lfldnet.config import preset_config
from lfldnet.datagen import generate_monodomain_dataset
from lfldnet.model import count_parameters
from lfldnet.training import evaluate, train

ds = generate_monodomain_dataset(n_samples=40, n_val=8, n_nodes=32, seed=0)
print(len(ds), "samples  inputs", ds.inputs[0].shape, "outputs", ds.fields[0].shape, "coords", ds.coords.shape)

# %% [markdown]
# The "small" preset is the desk-scale architecture; shrink it further here.

# %%
cfg = preset_config("small", dyn_neurons=32, n_states=6, rec_layers=3, rec_width=32,
                    n_frequencies=8, points_per_epoch=32, max_epochs=300, lr=1e-3)
model, hist = train(ds, cfg, log_every=25)
print(count_parameters(model))
print("best val loss %.3e at epoch %d" % (hist.best_val, hist.best_epoch))

# %%
res = evaluate(model, ds, hist.val_indices)
for i, v in zip(res["indices"], res["per_sample"]):
    print("sample %d  normalized mse %.3e" % (i, v))

# %% [markdown]
# Prediction for one validation sample, chunked over nodes (the result does
# not depend on the chunk count).

# %%
k = int(hist.val_indices[0])
u1 = model.predict(ds.inputs[k], ds.times, ds.coords, chunks=1)
u4 = model.predict(ds.inputs[k], ds.times, ds.coords, chunks=4)
print("chunked bitwise equal:", np.array_equal(u1, u4))
err = np.abs(u1 - ds.fields[k])
print("max abs error %.3f  mean abs error %.3f" % (err.max(), err.mean()))

# %%
s = model.export_states(ds.inputs[k], ds.times)
print("latent states", s.shape, "range [%.3f, %.3f]" % (s.min(), s.max()))

# %%
try:
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(1, 3, figsize=(12, 3.5))
    ax[0].imshow(ds.fields[k][..., 0].T, aspect="auto", origin="lower")
    ax[0].set_title("solver")
    ax[1].imshow(u1[..., 0].T, aspect="auto", origin="lower")
    ax[1].set_title("surrogate")
    ax[2].plot(ds.times, s)
    ax[2].set_title("latent states")
    plt.tight_layout()
    plt.show()
except ImportError:
    pass
