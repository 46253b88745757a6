"""Pointwise reconstruction network with a trainable Fourier embedding.

The decoder input is the concatenation, in this fixed order::

    [ s(t), cos(2 pi B x), sin(2 pi B x), x (only when N_f == 0), G(x), D(x, t) ]

With no Fourier frequencies the raw (normalized) coordinates are passed
through instead, which gives the LDNet / LLDNet decoders their spatial
input.  Hidden layers use the exact GELU; the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .nn import MLP
from .rng import PortableRNG

TWO_PI = 2.0 * np.pi


@dataclass
class FourierKernel:
    """Trainable frequency matrix ``B`` of shape ``[N_f, N_d]``."""

    B: Tensor

    @property
    def n_frequencies(self) -> int:
        return self.B.shape[0]

    @property
    def n_dims(self) -> int:
        return self.B.shape[1]

    @property
    def embedding_size(self) -> int:
        return 2 * self.n_frequencies

    def parameters(self):
        return [("kernel.B", self.B)] if self.B.size else []

    def count(self) -> int:
        return int(self.B.size)


def init_fourier_kernel(n_frequencies: int, n_dims: int, scale: float = 1.0, seed: int = 0,
                        dtype=None) -> FourierKernel:
    """Entries i.i.d. ``N(0, scale^2)``.  ``n_frequencies=0`` disables the embedding."""
    if scale < 0:
        raise ConfigError(f"Fourier scale must be non-negative, got {scale}")
    if n_frequencies < 0 or n_dims < 1:
        raise ConfigError(f"bad kernel size {n_frequencies} x {n_dims}")
    dtype = np.dtype(dtype or ad.get_default_dtype())
    B = PortableRNG(seed).spawn("fourier").normal((n_frequencies, n_dims), 0.0, scale).astype(dtype)
    return FourierKernel(ad.parameter(B, name="kernel.B"))


def fourier_embed(x, kernel: FourierKernel) -> Tensor:
    """``[cos(2 pi B x), sin(2 pi B x)]`` for one point ``[N_d]`` or rows ``[N, N_d]``."""
    B = kernel.B
    x = ad.as_tensor(x, dtype=B.dtype)
    single = x.ndim == 1
    xd = x.data.reshape(1, -1) if single else x.data
    if xd.ndim != 2 or xd.shape[1] != kernel.n_dims:
        raise ShapeError(f"coordinates of shape {x.shape} do not match kernel dimension {kernel.n_dims}")
    z = TWO_PI * (xd @ B.data.T)
    cz, sz = np.cos(z), np.sin(z)
    out = np.concatenate([cz, sz], axis=1)
    nf = kernel.n_frequencies

    def bwd(g):
        g2 = g.reshape(-1, 2 * nf)
        dz = TWO_PI * (g2[:, nf:] * cz - g2[:, :nf] * sz)
        dB = dz.T @ xd
        dx = dz @ B.data if x.requires_grad else None
        if dx is not None and single:
            dx = dx.reshape(-1)
        return dx, dB

    if single:
        out = out.reshape(-1)
    return ad.custom_op((x, B), (out,), bwd)[0]


class ReconstructionNet:
    """GELU MLP decoder ``N_rec``.

    ``coord_passthrough`` feeds the raw coordinates when the Fourier
    kernel is empty.
    """

    def __init__(self, n_states: int, n_frequencies: int, n_dims: int, hidden=(64, 64, 64, 64),
                 n_outputs: int = 1, dim_g: int = 0, dim_d: int = 0, coord_passthrough: bool = False,
                 seed: int = 0, dtype=None):
        hidden = [int(h) for h in hidden]
        if any(h < 1 for h in hidden):
            raise ConfigError(f"hidden widths must be positive, got {hidden}")
        self.n_states = int(n_states)
        self.n_frequencies = int(n_frequencies)
        self.n_dims = int(n_dims)
        self.dim_g = int(dim_g)
        self.dim_d = int(dim_d)
        self.coord_passthrough = bool(coord_passthrough)
        self.n_outputs = int(n_outputs)
        self.hidden = hidden
        n_in = self.n_states + 2 * self.n_frequencies + self.dim_g + self.dim_d
        if self.coord_passthrough:
            n_in += self.n_dims
        self.n_in = n_in
        self.mlp = MLP([n_in] + hidden + [n_outputs], "gelu", "identity",
                       PortableRNG(seed).spawn("rec"), dtype, prefix="rec")

    def parameters(self):
        return self.mlp.parameters()

    def count(self) -> int:
        return self.mlp.count()

    def point_features(self, x, kernel: FourierKernel | None) -> Tensor:
        """Space-only part of the input, ``[N, 2 N_f (+ N_d)]``."""
        x = ad.as_tensor(x, dtype=self.mlp.weights[0].dtype)
        pieces = []
        if self.n_frequencies:
            pieces.append(fourier_embed(x, kernel))
        if self.coord_passthrough:
            pieces.append(x)
        if not pieces:
            return Tensor(np.zeros((x.shape[0], 0), x.dtype))
        return pieces[0] if len(pieces) == 1 else ad.concat(pieces)

    def __call__(self, rows) -> Tensor:
        return self.mlp(rows)


def reconstruct(s, x, G, D, params: ReconstructionNet, kernel: FourierKernel | None) -> Tensor:
    """Decode field values at matched rows of states and coordinates.

    ``s`` is ``[N_s]`` or ``[R, N_s]``; ``x``, ``G`` and ``D`` have the same
    leading layout.  Returns ``[N_u]`` or ``[R, N_u]``.
    """
    s = ad.as_tensor(s, dtype=params.mlp.weights[0].dtype)
    single = s.ndim == 1
    dtype = s.dtype

    def rows(v, width, what):
        if v is None:
            v = np.zeros((0,) if single else (s.shape[0], 0), dtype)
        v = ad.as_tensor(v, dtype=dtype)
        v = ad.reshape(v, (1, -1)) if single else v
        if v.ndim != 2 or v.shape[1] != width:
            raise ShapeError(f"{what} has shape {v.shape}, expected width {width}")
        return v

    s2 = rows(s, params.n_states, "state")
    x2 = rows(x, params.n_dims, "coordinates")
    if x2.shape[0] != s2.shape[0]:
        raise ShapeError(f"{s2.shape[0]} state rows but {x2.shape[0]} coordinate rows")
    pieces = [s2]
    if params.n_frequencies:
        if kernel is None or kernel.n_frequencies != params.n_frequencies:
            raise ShapeError("reconstruction expects a Fourier kernel with "
                             f"{params.n_frequencies} frequencies")
        pieces.append(fourier_embed(x2, kernel))
    if params.coord_passthrough:
        pieces.append(x2)
    if params.dim_g:
        pieces.append(rows(G, params.dim_g, "G"))
    if params.dim_d:
        pieces.append(rows(D, params.dim_d, "D"))
    inp = pieces[0] if len(pieces) == 1 else ad.concat(pieces)
    out = params(inp)
    return ad.reshape(out, (params.n_outputs,)) if single else out


@dataclass
class BoundaryMask:
    """Nodes whose value is imposed (strong homogeneous Dirichlet by default)."""

    flags: np.ndarray
    value: float = 0.0

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool).reshape(-1)

    @property
    def n_nodes(self) -> int:
        return self.flags.size

    @property
    def empty(self) -> bool:
        return not self.flags.any()

    @classmethod
    def none(cls, n_nodes: int) -> "BoundaryMask":
        return cls(np.zeros(n_nodes, dtype=bool))


def apply_boundary_mask(predictions, mask: BoundaryMask, node_axis: int | None = None, value=None):
    """Force masked nodes to the prescribed value.

    The node axis defaults to 0 for 1-D input and to -2 otherwise
    (``[..., N_nodes, N_u]``).  Tensors keep tracking gradients, which do
    not flow through masked entries.
    """
    is_tensor = isinstance(predictions, Tensor)
    arr = predictions.data if is_tensor else np.asarray(predictions)
    axis = (0 if arr.ndim == 1 else -2) if node_axis is None else node_axis
    if arr.shape[axis] != mask.n_nodes:
        raise ShapeError(f"mask covers {mask.n_nodes} nodes, predictions have {arr.shape[axis]}")
    shape = [1] * arr.ndim
    shape[axis] = mask.n_nodes
    flags = mask.flags.reshape(shape)
    fill = mask.value if value is None else value
    if is_tensor:
        return ad.mask_fill(predictions, flags, fill)
    return np.where(flags, np.asarray(fill, arr.dtype), arr)
