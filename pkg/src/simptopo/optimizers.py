"""Outer iteration drivers: optimality criteria and projected gradient.

Every driver iterates on a feasible :class:`~simptopo.simp_model.DesignField`
(primal method): equilibrium is solved exactly at each iterate, the gradient is
projected onto the active constraints, and the update is followed by whatever
is needed to put the new design back on the volume constraint.

The convergence record keeps the volume multiplier in the ``h = 0`` sign
convention of :mod:`simptopo.projection` for every method, so the OC column is
the negated bisection value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FeasibilityError, InnerLoopError, ParameterError, ScalingError, SimpTopoError
from .projection import (
    ActiveSet,
    MultiplierSet,
    ProjectedDirection,
    kkt_residual,
    project,
)
from .simp_model import DesignField, compliance_gradient, equilibrium, material_stiffness
from .tension import energy_split, tension_descent

log = logging.getLogger(__name__)

METHODS = ("oc", "pg-add", "pg-mult")
VOLUME_TOL = 1e-9


@dataclass(frozen=True)
class OcConfig:
    move_limit: float = 0.2
    damping: float = 1.0
    inner_tol: float = 1e-9
    lambda_bracket: tuple | None = None
    tol: float = 1e-3
    kkt_tol: float = 1e-2
    max_iters: int = 300

    def __post_init__(self):
        if not 0.0 < self.move_limit < 1.0:
            raise ParameterError(f"move limit must lie in (0, 1), got {self.move_limit}")
        if not 0.0 < self.damping <= 1.0:
            raise ParameterError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.inner_tol > 0:
            raise ParameterError("inner_tol must be positive")
        if self.lambda_bracket is not None:
            lo, hi = self.lambda_bracket
            if not 0.0 < lo < hi:
                raise ParameterError(f"lambda bracket must satisfy 0 < lo < hi, got {self.lambda_bracket}")
        if not self.tol > 0 or not self.kkt_tol > 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")


@dataclass(frozen=True)
class PgConfig:
    """Projected-gradient settings.

    ``step`` is dimensionless.  For the additive update the raw step length is
    ``step / (|lambda_volume| * mean(v))``, so an element moves by about
    ``step * (B_e - 1)``; it is then cut so no free density moves more than
    ``move_limit``.  For the multiplicative update ``step`` is the exponent.
    ``tol`` is relative to ``|grad f|_inf``.
    """

    step: float = 0.5
    mode: str = "additive"
    tol: float = 1e-2
    max_iters: int = 300
    move_limit: float = 0.2

    def __post_init__(self):
        if not self.step > 0:
            raise ParameterError(f"step must be positive, got {self.step}")
        if self.mode not in ("additive", "multiplicative"):
            raise ParameterError(f"mode must be additive or multiplicative, got {self.mode!r}")
        if not self.tol > 0:
            raise ParameterError("tol must be positive")
        if self.max_iters < 0:
            raise ParameterError("max_iters must be >= 0")
        if not 0.0 < self.move_limit < 1.0:
            raise ParameterError(f"move limit must lie in (0, 1), got {self.move_limit}")


@dataclass
class ConvergenceRecord:
    COLUMNS = ("iter", "compliance", "volume", "kkt_inf", "max_change", "lambda")

    rows: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "not started"
    #: reduced-stress energy per iteration, tension-only runs only
    reduced_energy: list = field(default_factory=list)

    def append(self, it, compliance, volume, kkt_inf, max_change, lam):
        self.rows.append((int(it), float(compliance), float(volume), float(kkt_inf), float(max_change), float(lam)))

    def column(self, name) -> np.ndarray:
        i = self.COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def __len__(self):
        return len(self.rows)


@dataclass
class IterationInfo:
    """Everything computed at one iterate, handed to run callbacks."""

    iteration: int
    field: DesignField
    compliance: float
    grad: np.ndarray
    active: ActiveSet
    multipliers: MultiplierSet
    direction: ProjectedDirection
    kkt_inf: float


# ---------------------------------------------------------------------------
# optimality criteria
# ---------------------------------------------------------------------------


def compute_Be(energy_gradient, lam: float, elem_volumes=1.0) -> np.ndarray:
    """``B_e = (-f,rho_e) / (lam v_e)``; equals one at interior KKT points."""
    if not lam > 0:
        raise ParameterError(f"OC multiplier must be positive, got {lam}")
    return np.asarray(energy_gradient, dtype=float) / (lam * np.asarray(elem_volumes, dtype=float))


def _move_bounds(rho, move, rho_min):
    return np.maximum((1.0 - move) * rho, rho_min), np.minimum((1.0 + move) * rho, 1.0)


def oc_update(field: DesignField, Be, cfg: OcConfig) -> DesignField:
    """Fixed-point step ``rho * B**damping`` clipped to move limits and the box."""
    Be = np.asarray(Be, dtype=float)
    if np.any(Be < 0):
        raise ParameterError("B_e must be non-negative")
    lo, hi = _move_bounds(field.rho, cfg.move_limit, field.rho_min)
    return field.with_rho(np.clip(field.rho * Be**cfg.damping, lo, hi))


def oc_lambda_search(field: DesignField, energy_gradient, cfg: OcConfig):
    """Bisect the OC multiplier until the updated design meets the volume target.

    The updated volume is non-increasing in the multiplier, so a bracket with
    too much volume at ``lo`` and too little at ``hi`` always contains the
    answer.  Returns ``(lam, field, attained)``; when the target lies outside
    what the move limits allow, the closest reachable design is returned with
    ``attained=False``.
    """
    s = np.asarray(energy_gradient, dtype=float)
    v = field.elem_volumes
    V = field.volume_target
    tol = cfg.inner_tol * V

    def update(lam):
        return oc_update(field, compute_Be(s, lam, v), cfg)

    lo_rho, hi_rho = _move_bounds(field.rho, cfg.move_limit, field.rho_min)
    # limits lam -> inf and lam -> 0+
    vmin = float(lo_rho @ v)
    vmax = float(np.where(s > 0, hi_rho, lo_rho) @ v)
    if V < vmin - tol:
        return np.inf, field.with_rho(lo_rho), False
    if V > vmax + tol:
        return 0.0, field.with_rho(np.where(s > 0, hi_rho, lo_rho)), False

    if cfg.lambda_bracket is not None:
        lo, hi = cfg.lambda_bracket
    else:
        scale = float(s @ v / (v @ v)) if np.any(s > 0) else 1.0
        lo, hi = 1e-3 * scale, 1e3 * scale
    for _ in range(60):
        if update(lo).volume >= V:
            break
        lo /= 10.0
    else:
        raise InnerLoopError("could not bracket the volume target from below", (lo, hi))
    for _ in range(60):
        if update(hi).volume <= V:
            break
        hi *= 10.0
    else:
        raise InnerLoopError("could not bracket the volume target from above", (lo, hi))

    best = None
    for _ in range(400):
        mid = np.sqrt(lo * hi)
        if not lo < mid < hi:
            break
        new = update(mid)
        err = new.volume - V
        if best is None or abs(err) < abs(best[1].volume - V):
            best = (mid, new)
        if abs(err) <= tol:
            return mid, new, True
        if err > 0:
            lo = mid
        else:
            hi = mid
    lam, new = best
    if abs(new.volume - V) <= tol:
        return lam, new, True
    raise InnerLoopError(
        f"bisection stalled at volume error {abs(new.volume - V) / V:.2e} * V", (lo, hi)
    )


# ---------------------------------------------------------------------------
# projected gradient
# ---------------------------------------------------------------------------


def volume_restore(field: DesignField, tol: float = VOLUME_TOL, max_rounds: int | None = None) -> DesignField:
    """Scale interior densities until the volume target holds.

    Densities that hit a bound are clipped and frozen, the rest are rescaled,
    until ``|sum rho v - V| <= tol * V``.  Elements already on a bound never move.
    """
    rho = np.array(field.rho)
    v = field.elem_volumes
    V = field.volume_target
    lo, hi = field.rho_min, 1.0
    movable = (rho > lo) & (rho < hi)
    rounds = max_rounds if max_rounds is not None else rho.size + 2
    for _ in range(rounds):
        err = rho @ v - V
        if abs(err) <= tol * V:
            return field.with_rho(rho)
        fixed_vol = rho[~movable] @ v[~movable]
        free_vol = rho[movable] @ v[movable]
        if not movable.any() or free_vol <= 0:
            break
        scale = (V - fixed_vol) / free_vol
        if scale <= 0:
            break
        rho[movable] *= scale
        hit = movable & ((rho <= lo) | (rho >= hi))
        np.clip(rho, lo, hi, out=rho)
        movable &= ~hit
    err = rho @ v - V
    if abs(err) <= tol * V:
        return field.with_rho(rho)
    raise FeasibilityError(
        f"cannot restore volume: {rho @ v:.6g} vs target {V:.6g} with every free density saturated"
    )


def additive_step_length(d: ProjectedDirection, cfg: PgConfig, scale: float, free=None) -> float:
    """Raw step for ``rho + gamma d`` after the move-limit cap."""
    dd = d.d if free is None else d.d[free]
    dmax = float(np.max(np.abs(dd), initial=0.0))
    if dmax == 0.0:
        return 0.0
    gamma = cfg.step / scale if scale > 0 else np.inf
    return min(gamma, cfg.move_limit / dmax)


def pg_step_additive(field: DesignField, d: ProjectedDirection, cfg: PgConfig, scale: float,
                     restore: bool = True) -> DesignField:
    """``rho + gamma d``, box clip, then volume restoration.

    ``scale`` is the gradient magnitude that makes ``cfg.step`` dimensionless
    (the driver passes ``|lambda_volume| * mean(v)``).
    """
    gamma = additive_step_length(d, cfg, scale)
    if gamma == 0.0:
        return field
    rho = np.clip(field.rho + gamma * d.d, field.rho_min, 1.0)
    new = field.with_rho(rho)
    return volume_restore(new) if restore else new


def multiplicative_ratio(grad_f, multipliers: MultiplierSet, field: DesignField, active: ActiveSet) -> np.ndarray:
    """Per-element ratio ``f,rho_e / (sum_k lam_k h_k,rho_e)`` on free elements.

    Oriented so that it exceeds one where the projected gradient points up:
    for a volume-only free element it is ``B_e``.  Bound elements get 1.
    """
    g = np.asarray(grad_f, dtype=float)
    free = active.free_mask(g.size)
    denom = multipliers.lambda_volume * field.elem_volumes
    ratio = np.ones_like(g)
    idx = np.flatnonzero(free)
    zero = idx[(denom[idx] == 0.0) | (g[idx] == 0.0)]
    if zero.size:
        raise ScalingError(f"zero gradient or multiplier term at free element {zero[0]}", int(zero[0]))
    ratio[idx] = g[idx] / denom[idx]
    bad = idx[ratio[idx] <= 0]
    if bad.size:
        raise ScalingError(f"non-positive update ratio at element {bad[0]}", int(bad[0]))
    return ratio


def pg_step_multiplicative(field: DesignField, grad_f, multipliers: MultiplierSet, cfg: PgConfig,
                           active: ActiveSet | None = None, restore: bool = True) -> DesignField:
    """``rho * ratio**step`` on free elements, move-limit and box clip, volume restoration."""
    if active is None:
        active = ActiveSet()
    ratio = multiplicative_ratio(grad_f, multipliers, field, active)
    rho = field.rho * ratio**cfg.step
    lo, hi = _move_bounds(field.rho, cfg.move_limit, field.rho_min)
    rho = np.clip(rho, lo, hi)
    frozen = ~active.free_mask(rho.size)
    rho[frozen] = field.rho[frozen]
    new = field.with_rho(rho)
    return volume_restore(new) if restore else new


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def objective_gradient(problem, field: DesignField, state) -> np.ndarray:
    """Compliance gradient, or its tension-only counterpart when the problem asks for it."""
    if problem.tension is not None:
        return -tension_descent(problem, field, state.u, problem.tension)
    k0 = material_stiffness(problem.material, problem.grid)
    return compliance_gradient(state.u, field.rho, problem.material, k0, problem.grid)


def _at_iteration(exc, it):
    new = type(exc).__new__(type(exc))
    new.__dict__.update(exc.__dict__)
    new.args = (f"iteration {it}: {exc}",)
    return new


def initial_field(problem) -> DesignField:
    return DesignField.uniform(problem.grid, problem.volume_fraction, problem.rho_min)


def run_optimization(problem, method: str = "oc", config=None, *, field: DesignField | None = None,
                     callback: Callable[[IterationInfo], None] | None = None):
    """Optimize ``problem`` and return ``(final field, ConvergenceRecord)``.

    ``method`` is ``"oc"``, ``"pg-add"`` or ``"pg-mult"``.  ``config`` is an
    :class:`OcConfig` for OC and a :class:`PgConfig` otherwise (defaults if
    omitted).  Each row of the record describes the iterate the step started
    from; a converged final iterate gets a row with ``max_change = 0``.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown optimizer {method!r}; choose one of {', '.join(METHODS)}")
    if config is None:
        config = OcConfig() if method == "oc" else PgConfig(mode="multiplicative" if method == "pg-mult" else "additive")
    if method == "oc" and not isinstance(config, OcConfig):
        raise ParameterError("OC needs an OcConfig")
    if method != "oc" and not isinstance(config, PgConfig):
        raise ParameterError("projected-gradient methods need a PgConfig")
    kkt_tol = config.kkt_tol if method == "oc" else config.tol

    field = initial_field(problem) if field is None else field
    record = ConvergenceRecord(stop_reason="max_iters")
    for it in range(config.max_iters):
        try:
            state = equilibrium(problem, field)
            g = objective_gradient(problem, field, state)
            active, mult, d = project(g, field)
        except SimpTopoError as exc:
            raise _at_iteration(exc, it) from exc
        kkt = kkt_residual(d)
        gscale = float(np.max(np.abs(g), initial=0.0))
        if callback is not None:
            callback(IterationInfo(it, field, state.compliance, g, active, mult, d, kkt))
        if problem.tension is not None:
            split = energy_split(problem, field, state.u, problem.tension.k)
            record.reduced_energy.append(split.reduced)

        if kkt <= kkt_tol * gscale:
            record.append(it, state.compliance, field.volume, kkt, 0.0, mult.lambda_volume)
            record.converged, record.stop_reason = True, "kkt"
            break

        try:
            if method == "oc":
                lam, new, attained = oc_lambda_search(field, -g, config)
                if not attained:
                    log.warning("iteration %d: volume target outside the move limits", it)
                lam_rec = -lam
            elif method == "pg-add":
                scale = abs(mult.lambda_volume) * float(np.mean(field.elem_volumes))
                new = pg_step_additive(field, d, config, scale)
                lam_rec = mult.lambda_volume
            else:
                new = pg_step_multiplicative(field, g, mult, config, active)
                lam_rec = mult.lambda_volume
        except SimpTopoError as exc:
            raise _at_iteration(exc, it) from exc
        change = float(np.max(np.abs(new.rho - field.rho), initial=0.0))
        record.append(it, state.compliance, field.volume, kkt, change, lam_rec)
        log.debug("it %d  c=%.6g  kkt=%.3e  change=%.3e", it, state.compliance, kkt, change)
        field = new
        if method == "oc" and change <= config.tol:
            record.converged, record.stop_reason = True, "max_change"
            break
    if config.max_iters == 0:
        record.stop_reason = "max_iters"
    return field, record
