"""Controlled vector fields and time-shift control selection.

A dynamics model packages the field f(t, x, u) with its dimensions, an
optional exact rule that transports a control from one time to another
while (nearly) preserving the field value, and whatever regularity
constants are known in closed form. Models whose constants are not
declared get them measured by the certification routines instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import (
    ConfigError,
    DomainError,
    ModelEvaluationError,
    SelectionError,
    ShapeError,
)
from .geometry import compile_expression

_BREAK_TIME = 1.0  # both motor variants switch behaviour here


@dataclass(frozen=True)
class DeclaredRegularity:
    """Closed-form regularity data a model may carry.

    Every field is optional; absent entries are certified numerically.
    ``shift_radius_scale`` and ``holder_rate_scale`` are per-unit-control
    factors: the certified radius at time s is scale(s) times the control
    magnitude cap there.
    """

    growth_envelope: object = None  # t -> envelope in |f| <= env(t)(1+|x|+|u|)
    state_lipschitz: object = None  # t -> Lipschitz constant of f(t, ., u)
    time_drift: object = None  # s -> integrable density bounding |f(t,x,u_t)-f(s,x,u_s)|
    drift_singularities: tuple = ()  # interior times where time_drift blows up
    shift_radius_scale: object = None  # s -> sup_t |u_t - u_s| / control scale
    holder_exponent: float | None = None
    holder_rate_scale: object = None  # s -> rate in |u_t - u_s| <= (t-s)^alpha rate(s)


@dataclass(frozen=True)
class DynamicsModel:
    """A controlled field x' = rhs(t, x, u).

    ``rhs`` maps (t, x, u) with x of shape (state_dim,) and u of shape
    (control_dim,) to the state derivative; builtin models broadcast over
    a leading batch axis. ``shift_hook`` (s, t, x, u_s) -> u_t, when
    present, is the exact control transport used instead of the sampled
    search.
    """

    state_dim: int
    control_dim: int
    rhs: object
    shift_hook: object = None
    metadata: DeclaredRegularity = field(default_factory=DeclaredRegularity)
    name: str = ""
    # Times where t -> rhs(t, x, u) is kinked or singular: integrators must
    # place a node there and refine the adjacent spans.
    time_breakpoints: tuple = ()


@dataclass(frozen=True)
class MotorModel(DynamicsModel):
    """Electric-motor field: bounded drift plus a time-scaled control term."""

    variant: str = "surge"
    drift: object = None
    drift_amplitude: float = 0.2


def eval_rhs(model: DynamicsModel, t: float, x, u) -> np.ndarray:
    """Evaluate the field at a single point with shape and finiteness checks."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.state_dim,):
        raise ShapeError(f"state must have shape ({model.state_dim},), got {x.shape}")
    if u.shape != (model.control_dim,):
        raise ShapeError(f"control must have shape ({model.control_dim},), got {u.shape}")
    out = np.asarray(model.rhs(float(t), x, u), dtype=float)
    if out.shape != (model.state_dim,):
        raise ShapeError(f"rhs returned shape {out.shape}, expected ({model.state_dim},)")
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError(f"rhs not finite at t={t}, x={x.tolist()}, u={u.tolist()}")
    return out


def rhs_batch(model: DynamicsModel, t: float, x_batch: np.ndarray, u_batch: np.ndarray):
    """Field values for (n, N) states and (n, M) controls; loops if the
    model's rhs does not broadcast."""
    x_batch = np.asarray(x_batch, dtype=float)
    u_batch = np.asarray(u_batch, dtype=float)
    try:
        out = np.asarray(model.rhs(float(t), x_batch, u_batch), dtype=float)
        if out.shape == x_batch.shape:
            return out
    except Exception:
        pass
    return np.stack(
        [np.asarray(model.rhs(float(t), xi, ui), dtype=float) for xi, ui in zip(x_batch, u_batch)]
    )


def drift_budget(model: DynamicsModel, s: float, t: float) -> float | None:
    """Integral of the declared time-drift density over [s, t], or None."""
    density = model.metadata.time_drift
    if density is None:
        return None
    if t <= s:
        return 0.0
    interior = [p for p in model.metadata.drift_singularities if s < p < t]
    value, _ = quad(lambda sigma: float(density(sigma)), s, t, points=interior or None, limit=200)
    return float(value)


def _ball_candidates(center: np.ndarray, radius: float, n: int, dim: int, rng) -> np.ndarray:
    if dim == 1:
        offsets = radius * np.linspace(-1.0, 1.0, n)[:, None]
    else:
        directions = rng.standard_normal((n, dim))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radii = radius * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / dim)
        offsets = directions / norms * radii
    return center + offsets


def shift_selection(
    model: DynamicsModel,
    s: float,
    t: float,
    x,
    u_s,
    radius: float | None = None,
    budget: float | None = None,
    n_samples: int | None = None,
    refine_rounds: int = 2,
    seed: int = 0,
) -> np.ndarray:
    """Transport the control u_s from time s to time t near the state x.

    With a declared hook the hook's value is returned directly. Otherwise
    the search minimizes |f(t, x, .) - f(s, x, u_s)| over the ball of the
    given radius around u_s (declared shift radius by default), sampling
    64^min(control_dim, 2) candidates plus local refinement. When a drift
    budget applies (declared density, or an explicit bound), a residual
    above it is an error carrying that residual.
    """
    if not 0 <= s < t:
        raise DomainError(f"need 0 <= s < t, got s={s}, t={t}")
    x = np.asarray(x, dtype=float)
    u_s = np.asarray(u_s, dtype=float)
    if model.shift_hook is not None:
        u_t = np.asarray(model.shift_hook(s, t, x, u_s), dtype=float).reshape(model.control_dim)
        if not np.all(np.isfinite(u_t)):
            raise ModelEvaluationError(f"shift hook not finite at s={s}, t={t}")
        return u_t
    if radius is None:
        scale = model.metadata.shift_radius_scale
        if scale is None:
            raise DomainError("model declares no shift radius; pass radius explicitly")
        radius = float(scale(s)) * float(np.linalg.norm(u_s))
    if budget is None:
        budget = drift_budget(model, s, t)
    f_s = eval_rhs(model, s, x, u_s)
    rng = np.random.default_rng(seed)
    n = n_samples or 64 ** min(model.control_dim, 2)

    def best_of(candidates: np.ndarray) -> tuple[np.ndarray, float]:
        # Keep every candidate inside the allowed ball around u_s.
        offset = candidates - u_s
        norms = np.linalg.norm(offset, axis=1, keepdims=True)
        over = norms[:, 0] > radius
        if radius > 0 and over.any():
            candidates = np.where(over[:, None], u_s + offset * (radius / norms), candidates)
        states = np.broadcast_to(x, (candidates.shape[0], model.state_dim))
        values = rhs_batch(model, t, states, candidates)
        residuals = np.linalg.norm(values - f_s, axis=1)
        residuals = np.where(np.isfinite(residuals), residuals, np.inf)
        i = int(np.argmin(residuals))
        return candidates[i].copy(), float(residuals[i])

    best_u, best_res = best_of(np.vstack([u_s[None, :], _ball_candidates(u_s, radius, n, model.control_dim, rng)]))
    local = radius
    for _ in range(refine_rounds):
        local /= 4.0
        cand, res = best_of(
            _ball_candidates(best_u, local, max(n // 4, 9), model.control_dim, rng)
        )
        if res < best_res:
            best_u, best_res = cand, res
    if budget is not None and best_res > budget + 1e-12:
        raise SelectionError(
            f"no control within radius {radius:.6g} of u_s keeps the field drift "
            f"under {budget:.6g} (best residual {best_res:.6g})",
            residual=best_res,
        )
    return best_u


def _surge_scale(t):
    t = np.asarray(t, dtype=float)
    late = t > _BREAK_TIME
    safe = np.where(late, t - _BREAK_TIME, 1.0)
    out = np.where(late, safe ** -0.25, 1.0)
    return out if out.ndim else float(out)


def _decline_decay(t):
    t = np.asarray(t, dtype=float)
    late = t > _BREAK_TIME
    safe = np.where(late, t - _BREAK_TIME, 0.0)
    out = np.where(late, 1.0 - 0.5 * np.sqrt(safe), 1.0)
    return out if out.ndim else float(out)


def _default_drift(amplitude: float):
    def drift(t, x):
        return amplitude * np.cos(np.asarray(x)[..., 0])

    return drift


def motor_surge(
    drift_amplitude: float = 0.2,
    drift=None,
    drift_bound: float | None = None,
    drift_lipschitz: float | None = None,
) -> MotorModel:
    """Motor with control gain 1 up to the break time, then (t-1)^(-1/4).

    The gain grows without bound just past t = 1, but transporting a
    control as u_t = gain(s)/gain(t) * u_s keeps the control term of the
    field constant, so the field drifts not at all under the hook.
    """
    amp = float(drift_amplitude)
    if drift is None:
        drift = _default_drift(amp)
        drift_bound = amp if drift_bound is None else float(drift_bound)
        drift_lipschitz = amp if drift_lipschitz is None else float(drift_lipschitz)
    elif drift_bound is None or drift_lipschitz is None:
        raise DomainError("custom drift requires drift_bound and drift_lipschitz")

    def rhs(t, x, u):
        return drift(t, np.asarray(x, dtype=float))[..., None] + _surge_scale(t) * np.asarray(
            u, dtype=float
        )

    def hook(s, t, x, u_s):
        if t <= _BREAK_TIME:
            return np.asarray(u_s, dtype=float)
        if s <= _BREAK_TIME:
            return (t - _BREAK_TIME) ** 0.25 * np.asarray(u_s, dtype=float)
        return ((t - _BREAK_TIME) / (s - _BREAK_TIME)) ** 0.25 * np.asarray(u_s, dtype=float)

    def radius_scale(s):
        s = np.asarray(s, dtype=float)
        late = s > _BREAK_TIME
        safe = np.where(late, s - _BREAK_TIME, 1.0)
        out = np.where(late, np.maximum(safe ** -0.25 - 1.0, 0.0), 1.0)
        return out if out.ndim else float(out)

    def rate_scale(s):
        s = np.asarray(s, dtype=float)
        gap = np.abs(s - _BREAK_TIME)
        with np.errstate(divide="ignore"):
            out = gap ** -0.25
        return out if out.ndim else float(out)

    bound = drift_bound

    def envelope(t):
        return _surge_scale(t) + bound

    lip = drift_lipschitz
    metadata = DeclaredRegularity(
        growth_envelope=envelope,
        state_lipschitz=lambda t: lip + np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else lip,
        time_drift=lambda s: np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0,
        shift_radius_scale=radius_scale,
        holder_exponent=0.25,
        holder_rate_scale=rate_scale,
    )
    return MotorModel(
        state_dim=1,
        control_dim=1,
        rhs=rhs,
        shift_hook=hook,
        metadata=metadata,
        name="motor_surge",
        time_breakpoints=(_BREAK_TIME,),
        variant="surge",
        drift=drift,
        drift_amplitude=amp,
    )


def motor_decline(
    drift_amplitude: float = 0.2,
    drift=None,
    drift_lipschitz: float | None = None,
) -> MotorModel:
    """Motor with saturating control response that decays past the break.

    Keeping the control fixed, the field drifts by |decay(t) - decay(s)|
    times the saturated control value; the declared drift density matches
    that exactly whenever the saturated value stays within 1, i.e. on
    control boxes inside |u| <= tan(1).
    """
    amp = float(drift_amplitude)
    if drift is None:
        drift = _default_drift(amp)
        drift_lipschitz = amp if drift_lipschitz is None else float(drift_lipschitz)
    elif drift_lipschitz is None:
        raise DomainError("custom drift requires drift_lipschitz")

    def rhs(t, x, u):
        return drift(t, np.asarray(x, dtype=float))[..., None] + _decline_decay(t) * np.arctan(
            np.asarray(u, dtype=float)
        )

    def hook(s, t, x, u_s):
        return np.asarray(u_s, dtype=float)

    def drift_density(s):
        s = np.asarray(s, dtype=float)
        late = s > _BREAK_TIME
        safe = np.where(late, s - _BREAK_TIME, 1.0)
        out = np.where(late, 0.25 / np.sqrt(safe), 0.0)
        return out if out.ndim else float(out)

    lip = drift_lipschitz
    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0  # noqa: E731
    metadata = DeclaredRegularity(
        growth_envelope=None,
        state_lipschitz=lambda t: lip + np.zeros_like(np.asarray(t, dtype=float)) if np.ndim(t) else lip,
        time_drift=drift_density,
        drift_singularities=(_BREAK_TIME,),
        shift_radius_scale=zero,
        holder_exponent=1.0,
        holder_rate_scale=zero,
    )
    return MotorModel(
        state_dim=1,
        control_dim=1,
        rhs=rhs,
        shift_hook=hook,
        metadata=metadata,
        name="motor_decline",
        time_breakpoints=(_BREAK_TIME,),
        variant="decline",
        drift=drift,
        drift_amplitude=amp,
    )


def control_affine(
    drift,
    gain,
    state_dim: int,
    control_dim: int,
    metadata: DeclaredRegularity | None = None,
    name: str = "control_affine",
) -> DynamicsModel:
    """Field drift(t, x) + gain(t, x) @ u with drift (.., N), gain (.., N, M)."""

    def rhs(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        a = np.asarray(drift(t, x), dtype=float)
        b = np.asarray(gain(t, x), dtype=float)
        return a + np.einsum("...nm,...m->...n", b, u)

    return DynamicsModel(
        state_dim=state_dim,
        control_dim=control_dim,
        rhs=rhs,
        metadata=metadata or DeclaredRegularity(),
        name=name,
    )


def double_integrator() -> DynamicsModel:
    """Position-velocity chain x1' = x2, x2' = u."""

    def rhs(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.stack([x[..., 1], u[..., 0]], axis=-1)

    one = lambda t: np.ones_like(np.asarray(t, dtype=float)) if np.ndim(t) else 1.0  # noqa: E731
    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0  # noqa: E731
    metadata = DeclaredRegularity(
        growth_envelope=one,
        state_lipschitz=one,
        time_drift=zero,
        shift_radius_scale=zero,
        holder_exponent=1.0,
        holder_rate_scale=zero,
    )
    return DynamicsModel(
        state_dim=2,
        control_dim=1,
        rhs=rhs,
        shift_hook=lambda s, t, x, u_s: np.asarray(u_s, dtype=float),
        metadata=metadata,
        name="double_integrator",
    )


def _stacked_expressions(expressions, dim: int):
    compiled = [compile_expression(str(e), dim) for e in expressions]

    def stacked(t, x):
        return np.stack([c(t, x) for c in compiled], axis=-1)

    return stacked


def expression_model(
    equations,
    state_dim: int,
    control_dim: int,
    name: str = "expression",
    shift_radius: float | None = None,
) -> DynamicsModel:
    """Field with one expression per state over ``t, x1..xN, u1..uM``.

    A field whose expressions never mention ``t`` transports controls by
    the identity, exactly. Time-dependent expressions must declare a
    ``shift_radius`` scale for the generic transport search.
    """
    if len(equations) != state_dim:
        raise ConfigError("need one rhs expression per state")
    labels = tuple(f"x{i + 1}" for i in range(state_dim)) + tuple(
        f"u{j + 1}" for j in range(control_dim)
    )
    compiled = [
        compile_expression(str(e), state_dim + control_dim, names=labels)
        for e in equations
    ]

    def rhs(t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        z = np.concatenate([x, u], axis=-1)
        return np.stack([c(t, z) for c in compiled], axis=-1)

    autonomous = not any(re.search(r"\bt\b", str(e)) for e in equations)
    hook = None
    metadata = DeclaredRegularity()
    if autonomous:
        zero = lambda s: np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0  # noqa: E731
        hook = lambda s, t, x, u_s: np.asarray(u_s, dtype=float)  # noqa: E731
        metadata = DeclaredRegularity(
            time_drift=zero,
            shift_radius_scale=zero,
            holder_exponent=1.0,
            holder_rate_scale=zero,
        )
    elif shift_radius is not None:
        value = float(shift_radius)
        metadata = DeclaredRegularity(shift_radius_scale=lambda s: value)
    return DynamicsModel(
        state_dim=state_dim,
        control_dim=control_dim,
        rhs=rhs,
        shift_hook=hook,
        metadata=metadata,
        name=name,
    )


def model_from_config(config: dict) -> DynamicsModel:
    """Build a model from a config mapping.

    Recognized kinds: ``motor_surge``, ``motor_decline`` (optional
    ``drift_amplitude``), ``expression`` with ``state_dim``,
    ``control_dim``, and ``rhs`` (one expression per state over
    ``t, x1.., u1..``), and ``control_affine`` with ``state_dim``,
    ``control_dim``, ``drift`` (one expression per state), and ``gain``
    (rows of expressions or numbers, one row per state).
    """
    try:
        kind = config["model"]
    except KeyError:
        raise ConfigError("model config needs a 'model' key") from None
    if kind == "motor_surge":
        return motor_surge(drift_amplitude=float(config.get("drift_amplitude", 0.2)))
    if kind == "motor_decline":
        return motor_decline(drift_amplitude=float(config.get("drift_amplitude", 0.2)))
    if kind == "expression":
        try:
            return expression_model(
                config["rhs"],
                int(config["state_dim"]),
                int(config["control_dim"]),
                name=str(config.get("name", "expression")),
                shift_radius=config.get("shift_radius"),
            )
        except KeyError as exc:
            raise ConfigError(f"expression model config needs {exc.args[0]!r}") from None
    if kind != "control_affine":
        raise ConfigError(f"unknown model kind {kind!r}")
    try:
        state_dim = int(config["state_dim"])
        control_dim = int(config["control_dim"])
        drift_exprs = config["drift"]
        gain_rows = config["gain"]
    except KeyError as exc:
        raise ConfigError(f"control_affine config needs {exc.args[0]!r}") from None
    if len(drift_exprs) != state_dim or len(gain_rows) != state_dim:
        raise ConfigError("drift and gain must have one row per state")
    drift = _stacked_expressions(drift_exprs, state_dim)
    rows = [_stacked_expressions(row, state_dim) for row in gain_rows]

    def gain(t, x):
        return np.stack([row(t, x) for row in rows], axis=-2)

    declared = {}
    if "growth_envelope" in config:
        value = float(config["growth_envelope"])
        declared["growth_envelope"] = lambda t: value
    if "state_lipschitz" in config:
        value_l = float(config["state_lipschitz"])
        declared["state_lipschitz"] = lambda t: value_l
    return control_affine(
        drift,
        gain,
        state_dim,
        control_dim,
        metadata=DeclaredRegularity(**declared),
        name=str(config.get("name", "control_affine")),
    )
