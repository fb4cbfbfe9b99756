"""Learned mapping between point clouds and grids via bipartite message passing.

Each destination node i aggregates messages from its edge neighborhood:

    out_i = phi_upd( agg_{j -> i} phi_msg( [phi_node(x_j) ; phi_pos(c_i - c_j)] ) )

Gridification runs this cloud->grid; de-gridification runs the mirror image
grid->cloud over the inverted edge set.  Message aggregation follows a
canonical order keyed on source coordinates and features (not indices), so
re-ordering the input points reproduces the output bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .connectivity import Direction, EdgeSet
from .errors import ConfigError, InvariantError, ShapeError
from .nn import MlpParams, PositionalNet, init_mlp, init_positional_net, mlp_forward, positional_forward
from .pccore import Grid, GridSpec, PointCloud, make_grid_coords

AGGREGATIONS = ("mean", "max")


@dataclass
class GridifierParams:
    """The four learnable networks plus the aggregation mode and hidden width.

    phi_node embeds source features (F_in -> H), phi_pos embeds relative
    positions (D -> H), phi_msg mixes their concatenation (2H -> H), and
    phi_upd produces destination features (H -> F_out).
    """

    phi_node: MlpParams
    phi_pos: PositionalNet | MlpParams
    phi_msg: MlpParams
    phi_upd: MlpParams
    aggregation: str
    hidden: int

    def __post_init__(self):
        h = self.hidden
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.phi_node.out_width != h:
            raise ConfigError(f"phi_node must output width {h}, got {self.phi_node.out_width}")
        if self.phi_pos.out_width != h:
            raise ConfigError(f"phi_pos must output width {h}, got {self.phi_pos.out_width}")
        if self.phi_msg.in_width != 2 * h:
            raise ConfigError(
                f"phi_msg consumes [node ; positional] so its input width must be "
                f"{2 * h}, got {self.phi_msg.in_width}"
            )
        if self.phi_msg.out_width != h:
            raise ConfigError(f"phi_msg must output width {h}, got {self.phi_msg.out_width}")
        if self.phi_upd.in_width != h:
            raise ConfigError(f"phi_upd must take width {h}, got {self.phi_upd.in_width}")

    @property
    def f_in(self) -> int:
        return self.phi_node.in_width

    @property
    def f_out(self) -> int:
        return self.phi_upd.out_width

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = self.phi_node.named_parameters(f"{prefix}phi_node.")
        out.update(self.phi_pos.named_parameters(f"{prefix}phi_pos."))
        out.update(self.phi_msg.named_parameters(f"{prefix}phi_msg."))
        out.update(self.phi_upd.named_parameters(f"{prefix}phi_upd."))
        return out


def init_gridifier(
    f_in: int,
    f_out: int,
    hidden: int,
    dim: int,
    rng: np.random.Generator,
    omega: float = 0.1,
    n_frequencies: int | None = None,
    aggregation: str = "mean",
    trainable_freq: bool = True,
    nonlinearity: str = "gelu",
) -> GridifierParams:
    """Default architecture: every phi is a two-layer MLP with hidden width H."""
    if n_frequencies is None:
        n_frequencies = max(4, hidden // 2)
    return GridifierParams(
        phi_node=init_mlp([f_in, hidden, hidden], rng, nonlinearity),
        phi_pos=init_positional_net(
            omega, n_frequencies, dim, [hidden], hidden, rng, trainable_freq, nonlinearity
        ),
        phi_msg=init_mlp([2 * hidden, hidden, hidden], rng, nonlinearity),
        phi_upd=init_mlp([hidden, hidden, f_out], rng, nonlinearity),
        aggregation=aggregation,
        hidden=hidden,
    )


def _pos_forward(net: PositionalNet | MlpParams, rel: Tensor) -> Tensor:
    if isinstance(net, PositionalNet):
        return positional_forward(net, rel)
    return mlp_forward(net, rel)


def _canonical_edge_order(
    src_idx: np.ndarray, dst_idx: np.ndarray, src_coords: np.ndarray, src_feats: np.ndarray
) -> np.ndarray:
    """Aggregation order keyed on (dst, source coords, source features).

    Keying on source values instead of source indices makes the float
    accumulation sequence — and therefore the output bits — independent of how
    the input points happen to be numbered.  Edges whose keys fully collide
    carry bitwise-identical messages, so their mutual order cannot matter.
    """
    coord_keys = [src_coords[src_idx][:, c] for c in reversed(range(src_coords.shape[1]))]
    feat_keys = [src_feats[src_idx][:, c] for c in reversed(range(src_feats.shape[1]))]
    return np.lexsort((*feat_keys, *coord_keys, dst_idx))


def _message_passing(
    src_coords: np.ndarray,
    src_feats: Tensor,
    dst_coords: np.ndarray,
    edges: EdgeSet,
    params: GridifierParams,
    n_dst: int,
) -> Tensor:
    in_deg = np.bincount(edges.dst, minlength=n_dst)
    if (in_deg == 0).any():
        lonely = int(np.argmin(in_deg))
        raise InvariantError(
            f"destination point {lonely} has no incoming edges; such edge sets "
            f"cannot arise from bilateral connectivity"
        )
    if edges.direction is Direction.GRID_TO_CLOUD:
        # lattice sources have intrinsic indices (a fixed bijection with their
        # coordinates), so the stored (dst, src) order is already value-keyed
        src, dst = edges.src, edges.dst
    else:
        order = _canonical_edge_order(edges.src, edges.dst, src_coords, src_feats.data)
        src = edges.src[order]
        dst = edges.dst[order]

    node = mlp_forward(params.phi_node, src_feats)
    rel = dst_coords[dst] - src_coords[src]
    pos = _pos_forward(params.phi_pos, Tensor(rel))
    msg = mlp_forward(params.phi_msg, ad.concat_last_axis([ad.gather_rows(node, src), pos]))
    agg = ad.scatter_aggregate(msg, dst, n_dst, params.aggregation)
    return mlp_forward(params.phi_upd, agg)


def _check_widths(edges: EdgeSet, expect_dir: Direction, n_src: int, n_dst: int, params, f_in: int):
    if edges.direction is not expect_dir:
        raise ConfigError(f"edge set direction {edges.direction} unusable here, need {expect_dir}")
    if (edges.n_src, edges.n_dst) != (n_src, n_dst):
        raise ShapeError(
            f"edge set bounds ({edges.n_src}, {edges.n_dst}) do not match "
            f"instance sizes ({n_src}, {n_dst})"
        )
    if params.f_in != f_in:
        raise ShapeError(f"phi_node expects width {params.f_in}, features have {f_in}")


def gridify_features(
    cloud_feats: Tensor,
    cloud_coords: np.ndarray,
    grid_coords: np.ndarray,
    edges: EdgeSet,
    params: GridifierParams,
) -> Tensor:
    """Differentiable cloud->grid pass; returns grid features (N_G, F_out)."""
    cloud_feats = ad.as_tensor(cloud_feats)
    _check_widths(
        edges, Direction.CLOUD_TO_GRID, cloud_coords.shape[0], grid_coords.shape[0],
        params, cloud_feats.shape[1],
    )
    return _message_passing(cloud_coords, cloud_feats, grid_coords, edges, params, grid_coords.shape[0])


def degridify_features(
    grid_feats: Tensor,
    grid_coords: np.ndarray,
    cloud_coords: np.ndarray,
    edges: EdgeSet,
    params: GridifierParams,
) -> Tensor:
    """Differentiable grid->cloud pass; returns cloud features (N_P, F_out)."""
    grid_feats = ad.as_tensor(grid_feats)
    _check_widths(
        edges, Direction.GRID_TO_CLOUD, grid_coords.shape[0], cloud_coords.shape[0],
        params, grid_feats.shape[1],
    )
    return _message_passing(grid_coords, grid_feats, cloud_coords, edges, params, cloud_coords.shape[0])


def gridify(cloud: PointCloud, spec: GridSpec, edges: EdgeSet, params: GridifierParams) -> Grid:
    """Map a point cloud onto the regular lattice defined by ``spec``."""
    if spec.dim != cloud.dim:
        raise ShapeError(f"grid dim {spec.dim} != cloud dim {cloud.dim}")
    grid_coords = make_grid_coords(spec)
    feats = gridify_features(Tensor(cloud.feats), cloud.coords, grid_coords, edges, params)
    return Grid(spec, feats.data)


def degridify(
    grid: Grid, cloud_coords: np.ndarray, edges: EdgeSet, params: GridifierParams
) -> np.ndarray:
    """Map grid features back onto cloud coordinates; returns (N_P, F_out)."""
    out = degridify_features(Tensor(grid.feats), grid.coords, np.asarray(cloud_coords, float), edges, params)
    return out.data


# ---------------------------------------------------------------------------
# configuration requirement checker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    """One unmet construction requirement, named for reporting/filtering."""

    requirement: str
    message: str

    def __str__(self):
        return f"{self.requirement}: {self.message}"


def _hidden_bottleneck(mlp: MlpParams) -> int | None:
    """Narrowest hidden layer, or None for a single affine layer (no bottleneck)."""
    hidden = mlp.widths[1:-1]
    return min(hidden) if hidden else None


def check_requirements(
    n_points: int,
    n_feats: int,
    spec: GridSpec,
    params: GridifierParams | None = None,
    k: int = 1,
    edges: EdgeSet | None = None,
) -> list[Violation]:
    """Report which information-preservation requirements a configuration violates.

    Checks, in order: the grid must hold at least as many points as the cloud;
    no phi network may bottleneck below its input information content
    (phi_node under F_P, phi_pos under D, phi_msg/phi_upd under F_P + D); no
    point on either side may be disconnected (verified on ``edges`` when
    given); and the positional network must be able to express high-frequency
    functions of position (a sinusoidal featurization must be present).
    Networks without hidden layers are not flagged for width.
    """
    out: list[Violation] = []
    n_grid = spec.n_points
    d = spec.dim
    if n_grid < n_points:
        out.append(
            Violation(
                "grid-capacity",
                f"grid holds {n_grid} points but the cloud has {n_points}; "
                f"a lossless map needs at least as many grid points",
            )
        )
    if params is not None:
        for tag, net, bound, what in (
            ("node-width", params.phi_node, n_feats, f"feature width {n_feats}"),
            ("positional-width", params.phi_pos, d, f"spatial dimension {d}"),
            ("message-width", params.phi_msg, n_feats + d, f"combined width {n_feats + d}"),
            ("update-width", params.phi_upd, n_feats + d, f"combined width {n_feats + d}"),
        ):
            mlp = net.head if isinstance(net, PositionalNet) else net
            narrow = _hidden_bottleneck(mlp)
            if narrow is not None and narrow < bound:
                out.append(
                    Violation(tag, f"hidden width {narrow} is below the {what} it must carry")
                )
        if not isinstance(params.phi_pos, PositionalNet) or params.phi_pos.rff.n_frequencies < 1:
            out.append(
                Violation(
                    "high-frequency",
                    "positional network has no sinusoidal featurization, so it "
                    "cannot express high-frequency functions of position",
                )
            )
    if k < 1:
        out.append(Violation("cloud-connected", f"k={k} leaves points unmatched; need k >= 1"))
    if edges is not None:
        if (edges.out_degrees() == 0).any():
            idx = int(np.argmin(edges.out_degrees() > 0))
            out.append(Violation("cloud-connected", f"cloud point {idx} has no edges"))
        if (edges.in_degrees() == 0).any():
            idx = int(np.argmin(edges.in_degrees() > 0))
            out.append(Violation("grid-connected", f"grid point {idx} has no edges"))
    return out
