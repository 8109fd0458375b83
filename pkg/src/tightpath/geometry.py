"""Constraint fields, tightened-set geometry, and perturbation certificates.

A constraint field is a finite family of scalar functions h_j(t, x); the
feasible set at tightening eps and time t collects the states with
max_j h_j(t, x) + eps <= 0, so raising eps shrinks the set. Distance
queries cover both the set itself and its boundary; fields without a
closed-form hook fall back to a KD-tree over lattice boundary crossings.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CertificationError,
    ConfigError,
    DomainError,
    ExpressionError,
    InfeasibleTighteningError,
    ShapeError,
)
from .signals import ModulusTable, TimeGrid, Trajectory

_ALLOWED_CALLS = {
    "abs": np.abs,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "arctan": np.arctan,
    "pow": np.power,
}

_MAX_TREE_CACHE = 64

# Marker for "the whole sampling box is feasible": boundary out of reach.
_NO_BOUNDARY = "no-boundary"


def compile_expression(expr: str, dim: int, names: tuple = ()):
    """Compile a constraint expression over ``t, x1..x<dim>`` to a callable.

    The grammar is arithmetic (+, -, *, /, **) plus abs, sqrt, sin, cos,
    arctan, and pow; anything else is rejected before evaluation. The
    returned callable maps (t, x) with x of shape (dim,) or (n, dim) to a
    scalar or an (n,) array. ``names`` relabels the coordinates (one name
    per component) so callers can expose mixed variable sets.
    """
    if names and len(names) != dim:
        raise ExpressionError(f"{expr!r}: need one name per coordinate, got {names}")
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expr!r}: {exc.msg}") from None
    labels = tuple(names) or tuple(f"x{i + 1}" for i in range(dim))
    variables = {"t"} | set(labels)
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(
            node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
        ):
            continue
        if isinstance(node, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            continue
        if isinstance(node, (ast.USub, ast.UAdd)):
            continue
        if isinstance(node, ast.Call):
            if (
                not isinstance(node.func, ast.Name)
                or node.func.id not in _ALLOWED_CALLS
                or node.keywords
            ):
                raise ExpressionError(f"{expr!r}: only calls to {sorted(_ALLOWED_CALLS)} allowed")
            continue
        if isinstance(node, ast.Name):
            if node.id in _ALLOWED_CALLS or node.id in variables:
                continue
            raise ExpressionError(f"{expr!r}: unknown name {node.id!r}")
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
                continue
            raise ExpressionError(f"{expr!r}: only numeric constants allowed")
        raise ExpressionError(f"{expr!r}: disallowed syntax {type(node).__name__}")
    code = compile(tree, "<constraint>", "eval")

    def component(t, x):
        x = np.asarray(x, dtype=float)
        namespace = dict(_ALLOWED_CALLS)
        namespace["t"] = t
        for i, label in enumerate(labels):
            namespace[label] = x[..., i]
        out = eval(code, {"__builtins__": {}}, namespace)  # noqa: S307
        return np.asarray(out, dtype=float) + np.zeros(x.shape[:-1])

    component.dim = dim
    component.source = expr
    return component


@dataclass
class ConstraintField:
    """Time-indexed feasible sets cut out by scalar inequality components.

    Parameters
    ----------
    components : tuple of callables
        Each maps (t, x) to h_j(t, x), broadcasting over a leading batch
        axis of x.
    sampling_box : ndarray, shape (dim, 2)
        Coordinate bounds used by lattice fallbacks and certificates.
    time_varying : bool
        Whether any component depends on t. Static fields get a zero
        boundary-drift modulus and share distance caches across times.
    analytic_distance : callable, optional
        (eps, t, x) -> (distance to the tightened set, distance to its
        boundary), broadcasting like the components. When absent, both
        distances come from a KD-tree over lattice boundary crossings.
    resolution : float
        Lattice spacing of the fallback; defaults to the longest box edge
        over 2048 (dim 1), 1024 (dim 2), or 128.
    """

    components: tuple
    sampling_box: np.ndarray
    time_varying: bool = False
    analytic_distance: object = None
    name: str = ""
    resolution: float = 0.0
    _tree_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        box = np.asarray(self.sampling_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
            raise ShapeError("sampling_box must be (dim, 2) rows of lo < hi")
        self.sampling_box = box
        self.components = tuple(self.components)
        if not self.components:
            raise ShapeError("a constraint field needs at least one component")
        if not self.resolution:
            edge = float((box[:, 1] - box[:, 0]).max())
            divisor = {1: 2048, 2: 1024}.get(box.shape[0], 128)
            self.resolution = edge / divisor

    @property
    def dim(self) -> int:
        return int(self.sampling_box.shape[0])

    def value(self, t: float, x):
        """max_j h_j(t, x); scalar for a single state, (n,) for a batch."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.components[0](t, x), dtype=float)
        for comp in self.components[1:]:
            out = np.maximum(out, np.asarray(comp(t, x), dtype=float))
        return float(out) if x.ndim == 1 else out

    def margin(self, t: float, x, eps: float):
        """-(value + eps): nonnegative exactly on the tightened set."""
        x = np.asarray(x, dtype=float)
        out = -(self.value(t, x) + eps)
        return float(out) if x.ndim == 1 else out

    def contains(self, t: float, x, eps: float = 0.0):
        out = self.margin(t, x, eps) >= 0
        return bool(out) if np.ndim(out) == 0 else out

    def _tree(self, t: float, eps: float):
        key = (round(t, 9) if self.time_varying else 0.0, round(eps, 12), self.resolution)
        tree = self._tree_cache.get(key)
        if tree is None:
            try:
                tree = cKDTree(boundary_points(self, t, eps))
            except DomainError:
                # No crossings: either the box is entirely feasible (the
                # boundary is out of reach) or entirely infeasible.
                probe = self.sampling_box.mean(axis=1)
                if self.margin(t, probe, eps) >= 0:
                    tree = _NO_BOUNDARY
                else:
                    raise InfeasibleTighteningError(
                        f"tightened set at eps={eps}, t={t} misses the sampling box",
                        eps=eps,
                        t=t,
                    ) from None
            if len(self._tree_cache) >= _MAX_TREE_CACHE:
                self._tree_cache.pop(next(iter(self._tree_cache)))
            self._tree_cache[key] = tree
        return tree

    def _distances(self, eps: float, t: float, points: np.ndarray):
        """(d_set, d_boundary) arrays for a (n, dim) batch."""
        if self.analytic_distance is not None:
            d_set, d_bdry = self.analytic_distance(eps, t, points)
            return np.asarray(d_set, dtype=float), np.asarray(d_bdry, dtype=float)
        tree = self._tree(t, eps)
        if tree is _NO_BOUNDARY:
            n = points.shape[0]
            return np.zeros(n), np.full(n, np.inf)
        d_bdry = np.asarray(tree.query(points)[0], dtype=float)
        inside = self.margin(t, points, eps) >= 0
        return np.where(inside, 0.0, d_bdry), d_bdry


def dist_to_set(field: ConstraintField, eps: float, t: float, x) -> float:
    """Euclidean distance from x to the tightened set; 0 inside it."""
    x = np.asarray(x, dtype=float)
    return float(field._distances(eps, t, x.reshape(1, -1))[0][0])


def dist_to_boundary(field: ConstraintField, eps: float, t: float, x) -> float:
    """Euclidean distance from x to the tightened set's boundary."""
    x = np.asarray(x, dtype=float)
    return float(field._distances(eps, t, x.reshape(1, -1))[1][0])


def violation_sup(
    field: ConstraintField,
    eps: float,
    traj: Trajectory,
    window: tuple[float, float] | None = None,
) -> float:
    """Largest node distance to the tightened set over a time window.

    This is the maximal constraint violation of the trajectory; a feasible
    trajectory scores 0.
    """
    nodes = traj.grid.nodes
    if window is None:
        lo, hi = nodes[0], nodes[-1]
    else:
        lo, hi = window
        if lo < nodes[0] - 1e-12 or hi > nodes[-1] + 1e-12:
            raise DomainError("window exceeds the trajectory domain")
    mask = (nodes >= lo - 1e-12) & (nodes <= hi + 1e-12)
    if not mask.any():
        raise DomainError("window contains no grid node")
    states = traj.states[mask]
    times = nodes[mask]
    if not field.time_varying:
        return float(field._distances(eps, float(times[0]), states)[0].max())
    worst = 0.0
    for t, x in zip(times, states):
        worst = max(worst, float(field._distances(eps, float(t), x.reshape(1, -1))[0][0]))
    return worst


def unit_ball_complement(dim: int = 1, box_radius: float = 2.0) -> ConstraintField:
    """Feasible set {|x| >= 1 + eps}: the complement of an open ball.

    Distances are exact: the tightened boundary is the sphere of radius
    1 + eps.
    """
    if dim < 1:
        raise DomainError("dimension must be positive")

    def component(t, x):
        x = np.asarray(x, dtype=float)
        return 1.0 - np.linalg.norm(x, axis=-1)

    def distance(eps, t, x):
        radii = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        gap = radii - (1.0 + eps)
        return np.maximum(-gap, 0.0), np.abs(gap)

    box = np.tile([-box_radius, box_radius], (dim, 1))
    return ConstraintField(
        components=(component,),
        sampling_box=box,
        time_varying=False,
        analytic_distance=distance,
        name="unit_ball_complement",
    )


def _lattice_axes(box: np.ndarray, resolution: float) -> list[np.ndarray]:
    axes = []
    for lo, hi in box:
        n = max(int(np.ceil((hi - lo) / resolution)) + 1, 2)
        axes.append(np.linspace(lo, hi, n))
    return axes


def boundary_points(
    field: ConstraintField, t: float, eps: float, resolution: float | None = None
) -> np.ndarray:
    """Point cloud on the tightened boundary inside the sampling box.

    Scans every lattice edge for a sign change of value + eps and places a
    linearly interpolated crossing point on it.
    """
    resolution = resolution or field.resolution
    axes = _lattice_axes(field.sampling_box, resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=-1)
    values = field.value(t, flat).reshape(mesh[0].shape) + eps
    dim = len(axes)
    crossings = []
    for a in range(dim):
        lo_slice = [slice(None)] * dim
        hi_slice = [slice(None)] * dim
        lo_slice[a] = slice(0, -1)
        hi_slice[a] = slice(1, None)
        f_lo = values[tuple(lo_slice)]
        f_hi = values[tuple(hi_slice)]
        mask = ((f_lo <= 0) & (f_hi > 0)) | ((f_lo > 0) & (f_hi <= 0))
        if not mask.any():
            continue
        frac = f_lo[mask] / (f_lo[mask] - f_hi[mask])
        pts = np.stack([m[tuple(lo_slice)][mask] for m in mesh], axis=-1)
        pts[:, a] += frac * (axes[a][1] - axes[a][0])
        crossings.append(pts)
    if not crossings:
        raise DomainError(
            f"no boundary of the eps={eps} set inside the sampling box at t={t}"
        )
    return np.concatenate(crossings, axis=0)


def _feasible_samples(
    field: ConstraintField, t: float, n_samples: int, rng, box_radius: float | None = None
) -> np.ndarray:
    box = field.sampling_box
    collected = []
    total = 0
    for _ in range(64):
        draw = rng.uniform(box[:, 0], box[:, 1], size=(4 * n_samples, field.dim))
        keep = field.value(t, draw) <= 0.0
        if box_radius is not None:
            keep &= np.linalg.norm(draw, axis=1) <= box_radius
        kept = draw[keep]
        if kept.size:
            collected.append(kept)
            total += kept.shape[0]
        if total >= n_samples:
            break
    if not collected:
        raise DomainError(f"feasible set at t={t} misses the sampling region entirely")
    return np.concatenate(collected, axis=0)[:n_samples]


def _certificate_times(field: ConstraintField, t_nodes, limit: int = 21) -> np.ndarray:
    t_nodes = np.asarray(t_nodes, dtype=float)
    if not field.time_varying:
        return t_nodes[:1]
    if t_nodes.size <= limit:
        return t_nodes
    idx = np.unique(np.linspace(0, t_nodes.size - 1, limit).round().astype(int))
    return t_nodes[idx]


@dataclass(frozen=True)
class TighteningReport:
    """Outcome of a sampled perturbation check at one tightening level."""

    ok: bool
    eps: float
    deviation_cap: float
    worst_deviation: float
    witness_t: float
    witness_x: np.ndarray
    n_points: int


def check_tightening(
    field: ConstraintField,
    t_nodes,
    eps: float,
    deviation_cap: float,
    n_samples: int = 4000,
    seed: int = 0,
    box_radius: float | None = None,
) -> TighteningReport:
    """Check that tightening by eps displaces feasible states by <= cap.

    Samples the untightened feasible set inside the box at representative
    times and measures each sample's distance to the tightened set.
    """
    rng = np.random.default_rng(seed)
    worst = -np.inf
    witness_t, witness_x = float(np.asarray(t_nodes)[0]), np.zeros(field.dim)
    total = 0
    for t in _certificate_times(field, t_nodes):
        samples = _feasible_samples(field, t, n_samples, rng, box_radius)
        total += samples.shape[0]
        deviations = field._distances(eps, float(t), samples)[0]
        i = int(np.argmax(deviations))
        if deviations[i] > worst:
            worst = float(deviations[i])
            witness_t, witness_x = float(t), samples[i].copy()
    return TighteningReport(
        ok=worst <= deviation_cap,
        eps=eps,
        deviation_cap=deviation_cap,
        worst_deviation=worst,
        witness_t=witness_t,
        witness_x=witness_x,
        n_points=total,
    )


def certify_regular_perturbation(
    field: ConstraintField,
    t_nodes,
    deviation_cap: float,
    eps_cap: float,
    n_samples: int = 4000,
    seed: int = 0,
    box_radius: float | None = None,
) -> float:
    """Largest eps <= eps_cap whose sampled displacement stays under cap.

    The displacement of a fixed sample is nondecreasing in eps, so with a
    frozen sample set the predicate is monotone and bisection down from
    eps_cap applies. Raises when no positive tightening certifies.
    """
    if eps_cap <= 0 or deviation_cap <= 0:
        raise DomainError("eps_cap and deviation_cap must be positive")
    rng = np.random.default_rng(seed)
    times = _certificate_times(field, t_nodes)
    samples = {float(t): _feasible_samples(field, t, n_samples, rng, box_radius) for t in times}

    def worst(eps: float) -> tuple[float, float, np.ndarray]:
        out, w_t, w_x = 0.0, times[0], samples[float(times[0])][0]
        for t, pts in samples.items():
            deviations = field._distances(eps, t, pts)[0]
            i = int(np.argmax(deviations))
            if deviations[i] > out:
                out, w_t, w_x = float(deviations[i]), t, pts[i]
        return out, w_t, w_x

    if worst(eps_cap)[0] <= deviation_cap:
        return eps_cap
    lo, hi = 0.0, eps_cap
    while hi - lo > 1e-4 * eps_cap:
        mid = 0.5 * (lo + hi)
        if worst(mid)[0] <= deviation_cap:
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        deviation, w_t, w_x = worst(hi)
        raise CertificationError(
            f"no positive tightening keeps sampled displacement under {deviation_cap} "
            f"(eps={hi:.3g} already displaces {deviation:.3g})",
            witness=(w_t, w_x),
        )
    return lo


@dataclass(frozen=True)
class PerturbationProfile:
    """Perturbation data: tightening caps, boundary drift, and the
    tolerance-to-tightening table."""

    eps0: float
    delta0: float
    omega_A: ModulusTable
    lambda_to_eps: tuple

    def __post_init__(self):
        pairs = tuple((float(lam), float(eps)) for lam, eps in self.lambda_to_eps)
        for lam, eps in pairs:
            if lam <= 0 or eps <= 0 or eps > self.eps0:
                raise DomainError("tabled (tolerance, eps) pairs must be positive with eps <= eps0")
        object.__setattr__(self, "lambda_to_eps", pairs)

    def eps_for(self, lam: float) -> float:
        """Largest tabled eps whose tolerance does not exceed lam."""
        best = None
        for lam_i, eps_i in self.lambda_to_eps:
            if lam_i <= lam and (best is None or eps_i > best):
                best = eps_i
        if best is None:
            raise DomainError(f"no tabled tightening for tolerance {lam}")
        return best


def build_boundary_modulus(
    field: ConstraintField,
    grid: TimeGrid,
    eps_list,
    delta0: float | None = None,
    box_radius: float | None = None,
    n_probes: int = 128,
    seed: int = 0,
) -> ModulusTable:
    """Tabulated bound on the time drift of the boundary-distance field.

    For fixed feasible probes x the table records, per window width, the
    largest observed |d_boundary(eps, t + delta, x) - d_boundary(eps, t, x)|
    across tightening levels. Static fields return the zero table.
    """
    if not field.time_varying:
        return ModulusTable.zero(grid.span)
    gaps = np.diff(grid.nodes)
    step = float(gaps.max())
    if gaps.min() < step * (1 - 1e-6):
        raise DomainError("boundary modulus tables require a uniform grid")
    times = _certificate_times(field, grid.nodes, limit=41)
    n_t = times.size
    gap = float(times[1] - times[0]) if n_t > 1 else grid.span
    j_cap = n_t - 1 if delta0 is None else min(n_t - 1, int(np.ceil(delta0 / gap)))
    rng = np.random.default_rng(seed)
    worst_per_width = np.zeros(j_cap + 1)
    for eps in eps_list:
        probes = _feasible_samples(field, float(times[0]), n_probes, rng, box_radius)
        profile = np.stack(
            [field._distances(float(eps), float(t), probes)[1] for t in times]
        )
        finite = np.isfinite(profile).all(axis=0)
        profile = profile[:, finite]
        for j in range(1, j_cap + 1):
            drift = np.abs(profile[j:] - profile[:-j]).max() if profile.size else 0.0
            worst_per_width[j] = max(worst_per_width[j], float(drift))
    return ModulusTable(gap * np.arange(j_cap + 1), np.maximum.accumulate(worst_per_width))


def field_from_config(config: dict) -> ConstraintField:
    """Build a field from a config mapping (builtin name or expressions)."""
    if "builtin" in config:
        name = config["builtin"]
        if name != "unit_ball_complement":
            raise DomainError(f"unknown builtin constraint {name!r}")
        return unit_ball_complement(
            dim=int(config.get("dim", 1)),
            box_radius=float(config.get("box_radius", 2.0)),
        )
    try:
        box = np.asarray(config["box"], dtype=float)
        expressions = config["components"]
    except KeyError as exc:
        raise ConfigError(f"constraint config needs {exc.args[0]!r}") from None
    if box.ndim != 2:
        raise ConfigError("constraint box must be a list of [lo, hi] pairs")
    dim = box.shape[0]
    components = tuple(compile_expression(expr, dim) for expr in expressions)
    return ConstraintField(
        components=components,
        sampling_box=box,
        time_varying=bool(config.get("time_varying", False)),
        resolution=float(config.get("resolution", 0.0)),
        name=str(config.get("name", "")),
    )
