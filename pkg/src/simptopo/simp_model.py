"""SIMP interpolation, compliance and its equilibrium-constrained gradient."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .grid_fe import (
    StructuredGrid,
    assemble,
    rigid_body_modes,
    element_stiffness,
    solve_equilibrium,
)

DEFAULT_RHO_MIN = 1e-3


@dataclass(frozen=True)
class SimpMaterial:
    E0: float = 1.0
    nu: float = 0.3
    p: float = 3.0

    def __post_init__(self):
        if not self.E0 > 0:
            raise ParameterError(f"E0 must be positive, got {self.E0}")
        if not 0.0 <= self.nu < 0.5:
            raise ParameterError(f"nu must lie in [0, 0.5), got {self.nu}")
        if not self.p >= 1:
            raise ParameterError(f"penalty exponent must be >= 1, got {self.p}")


@dataclass(frozen=True, eq=False)
class DesignField:
    """Element densities together with their box bounds and volume target.

    ``volume_target`` is an absolute volume, ``elem_volumes`` holds ``v_e``.
    """

    rho: np.ndarray
    elem_volumes: np.ndarray
    volume_target: float
    rho_min: float = DEFAULT_RHO_MIN

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        vols = np.broadcast_to(np.asarray(self.elem_volumes, dtype=float), rho.shape).copy()
        if rho.ndim != 1:
            raise ParameterError("rho must be a flat vector")
        if not 0.0 < self.rho_min < 1.0:
            raise ParameterError(f"rho_min must lie in (0, 1), got {self.rho_min}")
        if np.any(vols <= 0):
            raise ParameterError("element volumes must be positive")
        if np.any(rho < self.rho_min) or np.any(rho > 1.0):
            raise ParameterError(f"densities must lie in [{self.rho_min}, 1]")
        rho.setflags(write=False)
        vols.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "elem_volumes", vols)

    @classmethod
    def uniform(cls, grid: StructuredGrid, volume_fraction: float, rho_min: float = DEFAULT_RHO_MIN):
        """Feasible centroid start: every density equal to the volume fraction."""
        if not 0.0 < volume_fraction < 1.0:
            raise ParameterError(f"volume fraction must lie in (0, 1), got {volume_fraction}")
        vols = np.full(grid.n_elements, grid.elem_volume)
        target = volume_fraction * vols.sum()
        rho = np.full(grid.n_elements, target / vols.sum())
        return cls(rho, vols, target, rho_min)

    def with_rho(self, rho) -> "DesignField":
        return replace(self, rho=rho)

    @property
    def volume(self) -> float:
        return float(np.dot(self.rho, self.elem_volumes))

    @property
    def volume_error(self) -> float:
        """Relative violation ``|sum rho v - V| / V``."""
        return abs(self.volume - self.volume_target) / self.volume_target

    def at_lower(self, tol: float = 1e-12) -> np.ndarray:
        return self.rho <= self.rho_min + tol

    def at_upper(self, tol: float = 1e-12) -> np.ndarray:
        return self.rho >= 1.0 - tol

    def __len__(self):
        return self.rho.size


def effective_modulus(rho_e: float, mat: SimpMaterial, rho_min: float = DEFAULT_RHO_MIN) -> float:
    if not rho_min <= rho_e <= 1.0:
        raise ParameterError(f"density {rho_e} outside [{rho_min}, 1]")
    return rho_e**mat.p * mat.E0


@lru_cache(maxsize=32)
def _k0_cached(E0, nu, grid):
    k0 = element_stiffness(E0, nu, grid)
    k0.setflags(write=False)
    return k0


def material_stiffness(mat: SimpMaterial, grid: StructuredGrid) -> np.ndarray:
    """Element stiffness of the solid material (shared, read-only)."""
    return _k0_cached(mat.E0, mat.nu, grid)


def compliance(u, K) -> float:
    u = np.asarray(u)
    if u.shape != (K.shape[0],):
        raise ParameterError(f"displacement length {u.shape} does not match K {K.shape}")
    return float(u @ (K @ u))


def element_energies(u, grid: StructuredGrid, k0) -> np.ndarray:
    """``u_e^T k0 u_e`` per element (unit-density strain energy, doubled).

    ``k0`` annihilates rigid-body motion, so it is removed from ``u_e`` first.
    Otherwise an element that mostly translates loses its small strain energy
    to cancellation between large terms.
    """
    ue = np.asarray(u)[grid.element_dofs]
    R = rigid_body_modes(grid)
    ue = ue - (ue @ R) @ R.T
    return np.einsum("ei,ij,ej->e", ue, k0, ue)


def compliance_gradient(u, rho, mat: SimpMaterial, k0, grid: StructuredGrid) -> np.ndarray:
    """Sensitivity of compliance with equilibrium enforced.

    Because the adjoint of compliance is the displacement itself, the chain rule
    collapses to ``-u_e^T dK_e/drho_e u_e = -(p / rho_e) rho_e**p u_e^T k0 u_e``.
    Every component is non-positive.
    """
    rho = np.asarray(rho.rho if isinstance(rho, DesignField) else rho, dtype=float)
    if rho.shape != (grid.n_elements,):
        raise ParameterError(f"density vector has shape {rho.shape}, grid needs ({grid.n_elements},)")
    energy = element_energies(u, grid, k0)
    # p * rho^(p-1) avoids the division; identical to (p/rho) * rho^p
    return -mat.p * rho ** (mat.p - 1.0) * np.maximum(energy, 0.0)


@dataclass
class EquilibriumState:
    rho: np.ndarray
    K: object
    u: np.ndarray
    compliance: float
    load: np.ndarray = field(repr=False, default=None)


def equilibrium(problem, rho) -> EquilibriumState:
    """Assemble and solve ``K(rho) u = p`` for a problem definition."""
    rho = np.asarray(rho.rho if isinstance(rho, DesignField) else rho, dtype=float)
    k0 = material_stiffness(problem.material, problem.grid)
    K = assemble(problem.grid, k0, rho, problem.material.p)
    u = solve_equilibrium(K, problem.bc, problem.grid)
    return EquilibriumState(rho, K, u, compliance(u, K), problem.bc.load_vector(problem.grid))


def fd_gradient_oracle(problem, field: DesignField, e: int, step: float = 1e-6) -> float:
    """Central difference of compliance in ``rho_e`` with equilibrium re-solved."""
    problem.grid.check_element(e)
    if not step > 0:
        raise ParameterError(f"step must be positive, got {step}")
    rho = np.array(field.rho)
    if rho[e] - step < field.rho_min or rho[e] + step > 1.0:
        raise ParameterError(f"rho[{e}] = {rho[e]} +/- {step} leaves [{field.rho_min}, 1]")
    plus, minus = rho.copy(), rho.copy()
    plus[e] += step
    minus[e] -= step
    return (equilibrium(problem, plus).compliance - equilibrium(problem, minus).compliance) / (2 * step)
