"""Networks that operate on grid features.

The centerpiece is a dense D-dimensional cross-correlation whose kernel can
either be an explicit weight tensor or a *neural field*: a positional network
evaluated on the K^D lattice of integer offsets scaled to the grid spacing.
Because the grid is regular, that evaluation happens once per forward pass and
the rendered kernel is reused at every cell.  ``conv_point_native`` is the
irregular counterpart — the same positional network evaluated once per edge —
kept as a baseline so the two cost profiles can be compared directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .connectivity import Direction, EdgeSet
from .errors import ConfigError, InvariantError, ShapeError
from .nn import PositionalNet, init_positional_net, positional_forward
from .pccore import Grid, GridSpec

__all__ = [
    "AffineHead",
    "BlockSpec",
    "ConvBlock",
    "ConvSpec",
    "KernelCache",
    "KernelEvalCounter",
    "block_forward",
    "classify_head",
    "conv_from_weights",
    "conv_grid",
    "conv_grid_features",
    "conv_point_native",
    "dense_head",
    "init_affine_head",
    "init_conv",
    "init_conv_block",
    "neighbor_map",
    "offset_lattice",
]


# --------------------------------------------------------------------------
# bookkeeping


@dataclass
class KernelEvalCounter:
    """Monotone cost counters for kernel work.

    pos_evals counts rows pushed through a positional network, materializations
    counts kernel tensors rendered from one, and applications counts
    convolutions applied.  Counts only increase; ``bump`` guards against
    accidental negative increments.
    """

    pos_evals: int = 0
    materializations: int = 0
    applications: int = 0

    def bump(self, pos_evals: int = 0, materializations: int = 0, applications: int = 0) -> None:
        if min(pos_evals, materializations, applications) < 0:
            raise InvariantError("kernel counters are monotone; negative increments are not allowed")
        self.pos_evals += pos_evals
        self.materializations += materializations
        self.applications += applications

    def snapshot(self) -> tuple[int, int, int]:
        return (self.pos_evals, self.materializations, self.applications)


class KernelCache:
    """Holds kernels rendered during one forward pass.

    Keyed by (convolution identity, grid spacing): repeated applications of the
    same convolution at the same spacing reuse a single rendered tensor, so
    gradients from every application accumulate into one set of kernel-network
    parameters.  Create a fresh cache per forward pass; a stale cache would
    reuse graph nodes across backward calls.
    """

    def __init__(self):
        self._kernels: dict[tuple[int, float], Tensor] = {}

    def get(self, key: tuple[int, float]) -> Tensor | None:
        return self._kernels.get(key)

    def put(self, key: tuple[int, float], kernel: Tensor) -> None:
        self._kernels[key] = kernel

    def __len__(self) -> int:
        return len(self._kernels)


# --------------------------------------------------------------------------
# offset lattice and neighbor tables

_NEIGHBOR_MAPS: dict[tuple[int, int, int], np.ndarray] = {}


def offset_lattice(kernel_size: int, dim: int) -> np.ndarray:
    """Integer offsets covering the kernel window, shape (K**dim, dim).

    Rows run in row-major order with the last axis fastest, from
    -(K-1)/2 to +(K-1)/2 along each axis; this ordering defines how flat
    kernel rows map onto spatial taps everywhere in this module.
    """
    half = (kernel_size - 1) // 2
    axes = [np.arange(-half, half + 1)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, dim).astype(np.int64)


def neighbor_map(resolution: int, dim: int, kernel_size: int) -> np.ndarray:
    """Flat neighbor indices per cell, shape (r**dim, K**dim); -1 marks out-of-range.

    Row p lists, for each kernel tap t, the flat index of the cell at
    multi-index(p) + offset(t), so a gather over the table followed by a
    matmul against the flattened kernel is the whole convolution.  Tables are
    memoized per (resolution, dim, kernel_size) and returned read-only.
    """
    key = (resolution, dim, kernel_size)
    cached = _NEIGHBOR_MAPS.get(key)
    if cached is not None:
        return cached
    offsets = offset_lattice(kernel_size, dim)
    axes = [np.arange(resolution)] * dim
    cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    nb = cells[:, None, :] + offsets[None, :, :]  # (r^D, K^D, D)
    valid = np.all((nb >= 0) & (nb < resolution), axis=-1)
    radix = resolution ** np.arange(dim - 1, -1, -1, dtype=np.int64)
    flat = nb @ radix
    flat[~valid] = -1
    flat.flags.writeable = False
    _NEIGHBOR_MAPS[key] = flat
    return flat


# --------------------------------------------------------------------------
# convolution specs


@dataclass
class ConvSpec:
    """A resolution-preserving convolution: K odd per axis, zero padding (K-1)/2.

    Exactly one kernel source is set: ``weights`` holds an explicit
    (K**dim, c_in, c_out) tensor, ``kernel_net`` a positional network with
    output width c_in * c_out that is rendered on the scaled offset lattice.
    """

    kernel_size: int
    dim: int
    in_channels: int
    out_channels: int
    weights: Tensor | None = None
    kernel_net: PositionalNet | None = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd and positive, got {self.kernel_size}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if min(self.in_channels, self.out_channels) < 1:
            raise ConfigError("channel counts must be >= 1")
        if (self.weights is None) == (self.kernel_net is None):
            raise ConfigError("exactly one kernel source required: explicit weights or a kernel net")
        expected = (self.n_taps, self.in_channels, self.out_channels)
        if self.weights is not None and self.weights.shape != expected:
            raise ShapeError(f"explicit kernel shape {self.weights.shape} != {expected}")
        if self.kernel_net is not None:
            if self.kernel_net.rff.freq.shape[1] != self.dim:
                raise ConfigError(
                    f"kernel net takes {self.kernel_net.rff.freq.shape[1]}-d offsets, conv is {self.dim}-d"
                )
            if self.kernel_net.out_width != self.in_channels * self.out_channels:
                raise ConfigError(
                    f"kernel net emits {self.kernel_net.out_width} values per offset, "
                    f"need c_in*c_out = {self.in_channels * self.out_channels}"
                )

    @property
    def n_taps(self) -> int:
        return self.kernel_size**self.dim

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        if self.weights is not None:
            return {f"{prefix}kernel": self.weights}
        return self.kernel_net.named_parameters(f"{prefix}pos.")


def conv_from_weights(weights: np.ndarray | Tensor, kernel_size: int, dim: int) -> ConvSpec:
    """Wrap an explicit (K**dim, c_in, c_out) weight tensor as a ConvSpec."""
    weights = ad.as_tensor(weights)
    if weights.ndim != 3:
        raise ShapeError(f"explicit kernel must be (taps, c_in, c_out), got {weights.shape}")
    return ConvSpec(kernel_size, dim, weights.shape[1], weights.shape[2], weights=weights)


def init_conv(
    kernel_size: int,
    dim: int,
    in_channels: int,
    out_channels: int,
    rng: np.random.Generator,
    omega: float = 1.0,
    n_frequencies: int = 8,
    hidden: list[int] | None = None,
    trainable_freq: bool = True,
) -> ConvSpec:
    """Neural-field convolution: kernel values come from a positional network."""
    net = init_positional_net(
        omega,
        n_frequencies,
        dim,
        [32] if hidden is None else hidden,
        in_channels * out_channels,
        rng,
        trainable_freq=trainable_freq,
    )
    return ConvSpec(kernel_size, dim, in_channels, out_channels, kernel_net=net)


def _render_kernel(
    conv: ConvSpec,
    spacing: float,
    counter: KernelEvalCounter | None,
    cache: KernelCache | None,
) -> Tensor:
    """Kernel tensor (taps, c_in, c_out) for one grid spacing, rendered at most once.

    Tap t is evaluated at the relative position of the target as seen from the
    source cell, c_target - c_source = -offset(t) * spacing, matching the
    convention used on irregular edges.
    """
    if conv.weights is not None:
        return conv.weights
    key = (id(conv), float(spacing))
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    rel = -offset_lattice(conv.kernel_size, conv.dim).astype(np.float64) * spacing
    flat = positional_forward(conv.kernel_net, Tensor(rel))
    kernel = ad.reshape(flat, (conv.n_taps, conv.in_channels, conv.out_channels))
    if counter is not None:
        counter.bump(pos_evals=conv.n_taps, materializations=1)
    if cache is not None:
        cache.put(key, kernel)
    return kernel


def conv_grid_features(
    feats: Tensor,
    spec: GridSpec,
    conv: ConvSpec,
    counter: KernelEvalCounter | None = None,
    cache: KernelCache | None = None,
) -> Tensor:
    """Dense cross-correlation over grid features, (r**D, c_in) -> (r**D, c_out).

    Gathers each cell's K**D window (zero rows outside the lattice), flattens
    taps into the channel axis, and applies the kernel as a single matmul, so
    the positional network never sees per-cell queries.
    """
    feats = ad.as_tensor(feats)
    if spec.dim != conv.dim:
        raise ShapeError(f"grid is {spec.dim}-d but convolution is {conv.dim}-d")
    if feats.shape != (spec.n_points, conv.in_channels):
        raise ShapeError(
            f"conv expects features ({spec.n_points}, {conv.in_channels}), got {feats.shape}"
        )
    kernel = _render_kernel(conv, spec.spacing, counter, cache)
    table = neighbor_map(spec.resolution, spec.dim, conv.kernel_size)
    gathered = ad.gather_rows(feats, table.ravel())
    windows = ad.reshape(gathered, (spec.n_points, conv.n_taps * conv.in_channels))
    flat_kernel = ad.reshape(kernel, (conv.n_taps * conv.in_channels, conv.out_channels))
    out = ad.matmul(windows, flat_kernel)
    if counter is not None:
        counter.bump(applications=1)
    return out


def conv_grid(
    grid: Grid,
    conv: ConvSpec,
    counter: KernelEvalCounter | None = None,
    cache: KernelCache | None = None,
) -> Grid:
    """Convenience wrapper: convolve a Grid and rewrap the result (detached)."""
    out = conv_grid_features(Tensor(np.asarray(grid.feats)), grid.spec, conv, counter, cache)
    return Grid(grid.spec, out.data)


def conv_point_native(
    coords: np.ndarray,
    feats: Tensor,
    edges: EdgeSet,
    kernel_net: PositionalNet,
    counter: KernelEvalCounter | None = None,
) -> Tensor:
    """Continuous convolution on an irregular point set, kernel re-rendered per edge.

    Each edge evaluates the positional network at c_dst - c_src, reshapes the
    resulting row into a (c_in, c_out) mixing matrix, applies it to the source
    features, and sums contributions per destination.  Costs |E| positional
    evaluations per call — the quantity the grid path amortizes away.
    """
    feats = ad.as_tensor(feats)
    coords = np.asarray(coords, dtype=np.float64)
    if edges.direction is not Direction.CLOUD_TO_CLOUD:
        raise ConfigError(f"native convolution needs cloud self-edges, got {edges.direction.name}")
    if coords.shape[0] != feats.shape[0]:
        raise ShapeError(f"{coords.shape[0]} coordinates vs {feats.shape[0]} feature rows")
    c_in = feats.shape[1]
    if kernel_net.out_width % c_in != 0:
        raise ShapeError(
            f"kernel net emits {kernel_net.out_width} values per edge, not a multiple of c_in={c_in}"
        )
    c_out = kernel_net.out_width // c_in
    rel = coords[edges.dst] - coords[edges.src]
    rows = positional_forward(kernel_net, Tensor(rel))
    per_edge = ad.reshape(rows, (edges.src.size, c_in, c_out))
    msgs = ad.pairwise_apply(per_edge, ad.gather_rows(feats, edges.src))
    out = ad.scatter_sum(msgs, edges.dst, coords.shape[0])
    if counter is not None:
        counter.bump(pos_evals=edges.src.size, applications=1)
    return out


# --------------------------------------------------------------------------
# blocks and heads


@dataclass(frozen=True)
class BlockSpec:
    """Wiring of one residual unit: norm -> conv -> nonlinearity -> dropout (+skip)."""

    in_channels: int
    out_channels: int
    kernel_size: int
    normalization: str = "channel"
    nonlinearity: str = "gelu"
    residual: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.residual and self.in_channels != self.out_channels:
            raise ConfigError(
                f"residual block needs equal channels, got {self.in_channels} -> {self.out_channels}"
            )
        if self.normalization not in ("channel", "none"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout}")


@dataclass
class ConvBlock:
    spec: BlockSpec
    conv: ConvSpec
    gamma: Tensor
    beta: Tensor

    def __post_init__(self):
        c = self.spec.in_channels
        if (self.conv.in_channels, self.conv.out_channels) != (c, self.spec.out_channels):
            raise ConfigError("block and convolution channel counts disagree")
        if self.gamma.shape != (c,) or self.beta.shape != (c,):
            raise ShapeError(f"norm parameters must have shape ({c},)")

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {f"{prefix}gamma": self.gamma, f"{prefix}beta": self.beta}
        out.update(self.conv.named_parameters(f"{prefix}conv."))
        return out


def init_conv_block(
    spec: BlockSpec,
    dim: int,
    rng: np.random.Generator,
    omega: float = 1.0,
    n_frequencies: int = 8,
    hidden: list[int] | None = None,
) -> ConvBlock:
    conv = init_conv(
        spec.kernel_size, dim, spec.in_channels, spec.out_channels, rng, omega, n_frequencies, hidden
    )
    return ConvBlock(
        spec, conv, Tensor(np.ones(spec.in_channels)), Tensor(np.zeros(spec.in_channels))
    )


def block_forward(
    feats: Tensor,
    spec: GridSpec,
    block: ConvBlock,
    counter: KernelEvalCounter | None = None,
    cache: KernelCache | None = None,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """norm -> conv -> nonlinearity -> dropout, plus the input when residual.

    With a zero kernel the conv emits zeros, the nonlinearity maps 0 to 0, and
    a residual block therefore returns its input bit-for-bit.
    """
    h = feats
    if block.spec.normalization == "channel":
        h = ad.channel_norm(h, block.gamma, block.beta)
    h = conv_grid_features(h, spec, block.conv, counter, cache)
    h = ad.nonlinearity(h, block.spec.nonlinearity)
    if training and block.spec.dropout > 0.0:
        if rng is None:
            raise ConfigError("dropout during training needs an rng")
        h = ad.dropout(h, block.spec.dropout, rng)
    if block.spec.residual:
        h = ad.add(feats, h)
    return h


@dataclass
class AffineHead:
    """Single affine map shared by the classification and dense heads."""

    w: Tensor
    b: Tensor

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[1],):
            raise ShapeError(f"affine head shapes incompatible: w {self.w.shape}, b {self.b.shape}")

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}w": self.w, f"{prefix}b": self.b}


def init_affine_head(in_width: int, out_width: int, rng: np.random.Generator) -> AffineHead:
    bound = 1.0 / np.sqrt(in_width)
    return AffineHead(
        Tensor(rng.uniform(-bound, bound, size=(in_width, out_width))),
        Tensor(np.zeros(out_width)),
    )


def classify_head(grid_feats: Tensor, head: AffineHead) -> Tensor:
    """Global mean pool over all cells, then affine; returns (1, n_classes) logits."""
    grid_feats = ad.as_tensor(grid_feats)
    pooled = ad.reshape(ad.reduce_mean(grid_feats, axis=0), (1, grid_feats.shape[1]))
    return ad.affine(pooled, head.w, head.b)


def dense_head(grid_feats: Tensor, head: AffineHead) -> Tensor:
    """Per-cell affine map (a 1x1 convolution): (r**D, c) -> (r**D, n_out)."""
    return ad.affine(ad.as_tensor(grid_feats), head.w, head.b)
