"""Projected gradients and multipliers defined at every design point.

Constraints follow the ``h_k = 0`` convention: the volume row is
``sum rho_e v_e - V`` (gradient ``v``), an active lower bound is
``-rho_e + rho_min`` (gradient ``-e_e``) and an active upper bound is
``rho_e - 1`` (gradient ``+e_e``).  For a gradient ``g`` of the objective and the
active-constraint matrix ``H`` (one row per constraint), the multipliers make

    d = -g + H^T lam

orthogonal to every row of ``H``, i.e. ``(H H^T) lam = H g``.  With that
convention a bound still binds exactly when its multiplier is ``<= 0``:

============  =================  ==================  ==========
bound         trial ``d_e``      multiplier          action
============  =================  ==================  ==========
lower         ``< 0`` (exits)    ``lam = d_e < 0``   keep / add
lower         ``> 0`` (enters)   ``lam = d_e > 0``   drop
upper         ``> 0`` (exits)    ``lam = -d_e < 0``  keep / add
upper         ``< 0`` (enters)   ``lam = -d_e > 0``  drop
============  =================  ==================  ==========

Here "trial ``d_e``" is the direction the element would follow with only the
volume constraint acting on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ActiveSetError, DegeneracyError, ParameterError, ScalingError
from .simp_model import DesignField

BOUND_TOL = 1e-12


@dataclass(frozen=True)
class ActiveSet:
    lower: frozenset = frozenset()
    upper: frozenset = frozenset()
    volume_active: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lower", frozenset(int(e) for e in self.lower))
        object.__setattr__(self, "upper", frozenset(int(e) for e in self.upper))
        both = self.lower & self.upper
        if both:
            raise DegeneracyError(
                f"element {min(both)} is in both bound sets", dependent_rows=sorted(both)
            )

    @property
    def bounded(self) -> frozenset:
        return self.lower | self.upper

    def free_mask(self, n: int) -> np.ndarray:
        mask = np.ones(n, dtype=bool)
        if self.bounded:
            mask[sorted(self.bounded)] = False
        return mask

    def validate(self, field: DesignField) -> None:
        for e in self.lower:
            if not field.rho[e] <= field.rho_min + BOUND_TOL:
                raise ParameterError(f"element {e} is marked lower-active at rho={field.rho[e]}")
        for e in self.upper:
            if not field.rho[e] >= 1.0 - BOUND_TOL:
                raise ParameterError(f"element {e} is marked upper-active at rho={field.rho[e]}")


@dataclass(frozen=True)
class MultiplierSet:
    lambda_volume: float
    lambda_bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = [self.lambda_volume, *self.lambda_bounds.values()]
        if not np.all(np.isfinite(vals)):
            raise ParameterError("multipliers must be finite")


@dataclass(frozen=True, eq=False)
class ProjectedDirection:
    d: np.ndarray

    def __len__(self):
        return self.d.size


# ---------------------------------------------------------------------------
# generic dense routes (any full-rank H)
# ---------------------------------------------------------------------------


def _as_rows(constraint_grads, n):
    H = np.atleast_2d(np.asarray(constraint_grads, dtype=float))
    if H.size == 0:
        return np.zeros((0, n))
    if H.shape[1] != n:
        raise ParameterError(f"constraint gradients have {H.shape[1]} columns, objective gradient has {n}")
    return H


def dependent_rows(H, rtol: float = 1e-12) -> list[int]:
    """Indices of rows that lie (numerically) in the span of earlier rows."""
    basis = []
    dep = []
    for k, row in enumerate(np.asarray(H, dtype=float)):
        r = row.copy()
        for _ in range(2):  # twice is enough (Kahan)
            for q in basis:
                r -= (q @ r) * q
        nrm = np.linalg.norm(r)
        if nrm <= rtol * max(np.linalg.norm(row), np.finfo(float).tiny):
            dep.append(k)
        else:
            basis.append(r / nrm)
    return dep


def _require_full_rank(H):
    dep = dependent_rows(H)
    if dep:
        raise DegeneracyError(
            f"active constraint gradients are linearly dependent (rows {dep})", dependent_rows=dep
        )


def hestenes_multipliers(grad_f, constraint_grads) -> np.ndarray:
    """Multipliers from orthogonality of ``-g + H^T lam`` to every row of ``H``.

    Solves the ``S x S`` normal system ``(H H^T) lam = H g`` by Cholesky.
    """
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    if H.shape[0] == 0:
        return np.zeros(0)
    _require_full_rank(H)
    G = H @ H.T
    c = np.linalg.cholesky(G)
    y = np.linalg.solve(c, H @ g)
    return np.linalg.solve(c.T, y)


def least_squares_multipliers(grad_f, constraint_grads) -> np.ndarray:
    """Minimizer of ``0.5 |-g + H^T lam|^2``, computed by an SVD least-squares solve.

    Shares no code with :func:`hestenes_multipliers`; the two must coincide.
    """
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    if H.shape[0] == 0:
        return np.zeros(0)
    _require_full_rank(H)
    lam, *_ = np.linalg.lstsq(H.T, g, rcond=None)
    return lam


def projected_gradient(grad_f, constraint_grads, multipliers) -> ProjectedDirection:
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    lam = np.asarray(multipliers, dtype=float).reshape(-1)
    if lam.size != H.shape[0]:
        raise ParameterError(f"{lam.size} multipliers for {H.shape[0]} constraints")
    return ProjectedDirection(-g + H.T @ lam)


def kkt_residual(d) -> float:
    """Infinity norm of the projected gradient; zero exactly at a KKT point."""
    d = d.d if isinstance(d, ProjectedDirection) else np.asarray(d)
    return float(np.max(np.abs(d), initial=0.0))


def tangent_uniqueness_probe(grad_f, constraint_grads, d, trials: int = 100, seed: int = 0) -> float:
    """Largest normalized ``|g . r|`` over random tangent vectors ``r`` orthogonal to ``d``.

    Each sample is projected onto the null space of the active-constraint
    gradients, then orthogonalized against ``d``.  If ``d`` really is the
    projected gradient, ``g`` has no component left along any such ``r``.
    """
    g = np.asarray(grad_f, dtype=float)
    n = g.size
    H = _as_rows(constraint_grads, n)
    d = d.d if isinstance(d, ProjectedDirection) else np.asarray(d, dtype=float)
    if H.shape[0]:
        Q, _ = np.linalg.qr(H.T)
    else:
        Q = np.zeros((n, 0))
    gn = np.linalg.norm(g)
    # only the tangent part of d defines a direction; a round-off d does not
    dt = d - Q @ (Q.T @ d)
    dn = np.linalg.norm(dt)
    dhat = dt / dn if dn > 1e-12 * max(gn, np.linalg.norm(d)) else None
    dim = n - Q.shape[1] - (1 if dhat is not None else 0)
    if dim <= 0 or gn == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    attempts = 0
    while done < trials:
        attempts += 1
        if attempts > 10 * trials + 100:
            raise RuntimeError("could not draw non-degenerate tangent vectors")
        r = rng.standard_normal(n)
        for _ in range(2):
            r -= Q @ (Q.T @ r)
            if dhat is not None:
                r -= (dhat @ r) * dhat
        rn = np.linalg.norm(r)
        if rn < 1e-14:
            continue
        worst = max(worst, abs(g @ r) / (gn * rn))
        done += 1
    return worst


# ---------------------------------------------------------------------------
# Venkayya's generalized OC multipliers
# ---------------------------------------------------------------------------


def _venkayya_inputs(grad_f, constraint_grads, x):
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    x = np.asarray(x, dtype=float)
    if x.shape != g.shape:
        raise ParameterError("design point and gradient differ in length")
    zero = np.flatnonzero(g == 0.0)
    if zero.size:
        raise ScalingError(f"objective gradient component {zero[0]} is zero; cannot scale by it", int(zero[0]))
    if np.any(x <= 0):
        raise ParameterError("design variables must be positive")
    return g, H, x


def venkayya_multipliers(grad_f, constraint_grads, design_point) -> np.ndarray:
    """Solve ``(E^T A E) lam = E^T A 1`` with ``E_ik = h_k,i / f,i`` and ``A = diag(f,i x_i)``."""
    g, H, x = _venkayya_inputs(grad_f, constraint_grads, design_point)
    E = (H / g).T
    A = np.diag(g * x)
    return np.linalg.solve(E.T @ A @ E, E.T @ A @ np.ones(g.size))


def venkayya_multipliers_compact(grad_f, constraint_grads, design_point) -> np.ndarray:
    """Same multipliers from the compact form ``(H X G^-1 H^T) lam = H x``.

    ``X`` and ``G`` are diagonal matrices of the design variables and of the
    objective gradient.
    """
    g, H, x = _venkayya_inputs(grad_f, constraint_grads, design_point)
    Hx = H * x
    return np.linalg.solve(Hx @ (H / g).T, Hx.sum(axis=1))


def scaled_orthogonality_multipliers(grad_f, constraint_grads, design_point) -> np.ndarray:
    """Multipliers making ``X(-g + H^T lam)`` orthogonal to the rows of ``H``."""
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    x = np.asarray(design_point, dtype=float)
    _require_full_rank(H)
    Hx = H * x
    return np.linalg.solve(Hx @ H.T, Hx @ g)


def weighted_orthogonality_residual(grad_f, constraint_grads, design_point, multipliers) -> float:
    """``|H X (-g + H^T lam)|_inf`` for the x-scaled projected gradient."""
    g = np.asarray(grad_f, dtype=float)
    H = _as_rows(constraint_grads, g.size)
    x = np.asarray(design_point, dtype=float)
    lam = np.asarray(multipliers, dtype=float).reshape(-1)
    scaled = x * (-g + H.T @ lam)
    return float(np.max(np.abs(H @ scaled), initial=0.0))


# ---------------------------------------------------------------------------
# structured route: one volume row plus unit-vector bound rows
# ---------------------------------------------------------------------------


def volume_constraint_gradient(field: DesignField) -> np.ndarray:
    return np.array(field.elem_volumes, dtype=float)


def constraint_matrix(field: DesignField, active: ActiveSet) -> np.ndarray:
    """Dense ``H``: volume row, then lower-bound rows, then upper-bound rows (sorted ids)."""
    n = len(field)
    rows = [volume_constraint_gradient(field)] if active.volume_active else []
    for e in sorted(active.lower):
        r = np.zeros(n)
        r[e] = -1.0
        rows.append(r)
    for e in sorted(active.upper):
        r = np.zeros(n)
        r[e] = 1.0
        rows.append(r)
    return np.array(rows).reshape(len(rows), n)


def multipliers_from_vector(lam, active: ActiveSet) -> MultiplierSet:
    """Label a multiplier vector ordered like :func:`constraint_matrix` rows."""
    lam = np.asarray(lam, dtype=float)
    ids = sorted(active.lower) + sorted(active.upper)
    if lam.size != len(ids) + 1:
        raise ParameterError(f"{lam.size} multipliers for {len(ids) + 1} constraints")
    return MultiplierSet(float(lam[0]), {e: float(v) for e, v in zip(ids, lam[1:])})


def _volume_multiplier(g, v, free):
    if not free.any():
        raise DegeneracyError("every element sits on an active bound; volume row is dependent")
    vf = v[free]
    return float(g[free] @ vf / (vf @ vf))


def trial_direction(grad_f, field: DesignField, active: ActiveSet) -> tuple[float, np.ndarray]:
    """Volume multiplier over the free set, and ``-g + lam v`` on every element."""
    g = np.asarray(grad_f, dtype=float)
    if g.shape != field.rho.shape:
        raise ParameterError(f"gradient shape {g.shape} does not match {field.rho.shape}")
    v = volume_constraint_gradient(field)
    free = active.free_mask(g.size)
    lam = _volume_multiplier(g, v, free)
    d = -g + lam * v
    # one re-orthogonalization pass against round-off in the free-set sum
    corr = d[free] @ v[free] / (v[free] @ v[free])
    return lam - corr, d - corr * v


def box_volume_projection(grad_f, field: DesignField, active: ActiveSet):
    """Closed-form multipliers and projected gradient for volume plus bound rows.

    Bound rows are unit vectors, so each one only zeroes its own component and
    the volume multiplier reduces to a weighted mean of ``g`` over free elements.
    Returns ``(MultiplierSet, ProjectedDirection)``.
    """
    lam, d = trial_direction(grad_f, field, active)
    bounds = {}
    for e in sorted(active.lower):
        bounds[e] = float(d[e])
    for e in sorted(active.upper):
        bounds[e] = float(-d[e])
    d = d.copy()
    if active.bounded:
        d[sorted(active.bounded)] = 0.0
    return MultiplierSet(lam, bounds), ProjectedDirection(d)


def active_set_update(field: DesignField, multipliers: MultiplierSet, trial: ProjectedDirection,
                      active: ActiveSet | None = None, tol: float | None = None) -> ActiveSet:
    """One refinement of the bound set.

    Drops a bound whose multiplier is positive (the constraint would hold the
    density against a direction pointing back into the box) and adds every
    at-bound element whose trial direction points out of the box.  ``tol``
    (default ``1e-13 * max|trial|``) keeps round-off ties from toggling.
    """
    if active is None:
        active = ActiveSet()
    d = trial.d
    if tol is None:
        tol = 1e-13 * float(np.max(np.abs(d), initial=0.0))
    lower = {e for e in active.lower if multipliers.lambda_bounds.get(e, -1.0) <= tol}
    upper = {e for e in active.upper if multipliers.lambda_bounds.get(e, -1.0) <= tol}
    at_lo = np.flatnonzero(field.at_lower(BOUND_TOL) & (d < -tol))
    at_hi = np.flatnonzero(field.at_upper(BOUND_TOL) & (d > tol))
    lower.update(int(e) for e in at_lo if e not in active.lower)
    upper.update(int(e) for e in at_hi if e not in active.upper)
    return ActiveSet(frozenset(lower), frozenset(upper))


def _cone_active_set(g, field: DesignField) -> ActiveSet:
    """Bounds active in the projection of ``-g`` onto the feasible tangent cone.

    With ``t(lam) = -g + lam v``, the projection keeps ``t_e`` on free elements
    and clips it to ``>= 0`` (lower) or ``<= 0`` (upper) on at-bound elements.
    ``sum v_e d_e(lam)`` is non-decreasing and piecewise linear in ``lam``, so
    the volume multiplier is bracketed between two breakpoints ``g_e / v_e`` and
    the active set is read off there.  No iteration over sets is needed.
    """
    v = field.elem_volumes
    lo = field.at_lower(BOUND_TOL)
    hi = field.at_upper(BOUND_TOL)
    bnd = lo | hi
    if not bnd.any():
        return ActiveSet()

    def flux(lam):
        t = -g + lam * v
        t = np.where(lo, np.maximum(t, 0.0), np.where(hi, np.minimum(t, 0.0), t))
        return float(t @ v)

    bps = np.unique(g[bnd] / v[bnd])
    span = max(float(bps[-1] - bps[0]), float(np.max(np.abs(g / v))), 1.0)
    pts = np.concatenate(([bps[0] - span], bps, [bps[-1] + span]))
    vals = np.array([flux(x) for x in (pts[0], pts[-1])])
    if vals[0] > 0 or vals[1] < 0:
        # no free element and every bound clipped on one side: nothing moves
        return ActiveSet(frozenset(np.flatnonzero(lo).tolist()), frozenset(np.flatnonzero(hi).tolist()))
    # bisection over breakpoint indices for the last point with flux <= 0
    a, b = 0, pts.size - 1
    while b - a > 1:
        m = (a + b) // 2
        if flux(pts[m]) <= 0.0:
            a = m
        else:
            b = m
    fa, fb = flux(pts[a]), flux(pts[b])
    lam = pts[a] if fb == fa else pts[a] - fa * (pts[b] - pts[a]) / (fb - fa)
    t = -g + lam * v
    scale = 1e-13 * float(np.max(np.abs(t), initial=0.0))
    lower = np.flatnonzero(lo & (t <= scale))
    upper = np.flatnonzero(hi & (t >= -scale))
    return ActiveSet(frozenset(lower.tolist()), frozenset(upper.tolist()))


def project(grad_f, field: DesignField, max_toggles: int | None = None):
    """Settle the active set and return ``(ActiveSet, MultiplierSet, ProjectedDirection)``.

    The set comes from the exact tangent-cone projection; the add/drop
    refinement then has to confirm it is stable.  Further changes point to a
    sign-convention fault and are capped by a toggle budget (default: the
    element count).
    """
    g = np.asarray(grad_f, dtype=float)
    if g.shape != field.rho.shape:
        raise ParameterError(f"gradient shape {g.shape} does not match {field.rho.shape}")
    n = len(field)
    budget = n if max_toggles is None else max_toggles
    active = _cone_active_set(g, field)
    toggles = 0
    while True:
        mult, _ = box_volume_projection(g, field, active)
        _, trial = trial_direction(g, field, active)
        new = active_set_update(field, mult, ProjectedDirection(trial), active)
        if new == active:
            break
        toggles += len(new.lower ^ active.lower) + len(new.upper ^ active.upper)
        if toggles > budget:
            raise ActiveSetError(f"active set still changing after {toggles} toggles (budget {budget})")
        active = new
    mult, d = box_volume_projection(g, field, active)
    return active, mult, d
