"""Tension-only sensitivities from reduced principal stresses at Gauss points.

The element energy is evaluated in stress form at each Gauss point, rotated to
principal axes, and compressive principal stresses are scaled by ``k`` before
the energy is formed.  With ``k = 1`` nothing is reduced and the result equals
the ordinary compliance sensitivity exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .grid_fe import StructuredGrid, all_gauss_point_stresses
from .simp_model import DesignField, SimpMaterial


class StressTensor2D(NamedTuple):
    sxx: float
    syy: float
    txy: float


class PrincipalStresses(NamedTuple):
    sI: np.ndarray
    sII: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class TensionConfig:
    k: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ParameterError(f"reduction factor must lie in [0, 1], got {self.k}")


def principal_stresses(s) -> PrincipalStresses:
    """Eigenvalues of the 2x2 stress tensor, ``sI >= sII``.

    ``s`` is a :class:`StressTensor2D` or any array whose last axis holds
    ``(sxx, syy, txy)``.  ``theta`` is the angle from x to the ``sI`` axis.
    """
    s = np.asarray(s, dtype=float)
    # normalize so the products below neither underflow nor overflow
    mag = np.max(np.abs(s), axis=-1)
    mag = np.where(mag > 0, mag, 1.0)
    sxx, syy, txy = (s[..., i] / mag for i in range(3))
    centre = 0.5 * (sxx + syy)
    half = 0.5 * (sxx - syy)
    radius = np.hypot(half, txy)
    det = sxx * syy - txy * txy
    # form the root without cancellation, recover the other from the determinant
    big = centre + np.copysign(radius, centre)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = np.where(big != 0.0, det / big, 0.0)
    pos = centre >= 0
    sI = np.where(pos, big, small)
    sII = np.where(pos, small, big)
    flat = centre == 0.0
    sI = np.where(flat, radius, sI)
    sII = np.where(flat, -radius, sII)
    theta = 0.5 * np.arctan2(2.0 * txy, sxx - syy)
    return PrincipalStresses(sI * mag, sII * mag, theta)


def reduce_stresses(ps: PrincipalStresses, cfg: TensionConfig):
    """Keep positive principal stresses, scale the rest by ``k``."""
    k = cfg.k
    sI = np.asarray(ps.sI, dtype=float)
    sII = np.asarray(ps.sII, dtype=float)
    return np.where(sI > 0, sI, k * sI), np.where(sII > 0, sII, k * sII)


def principal_energy_density(s1, s2, E, nu):
    """Plane-stress complementary energy ``(s1^2 - 2 nu s1 s2 + s2^2) / E`` (doubled)."""
    return (s1 * s1 - 2.0 * nu * s1 * s2 + s2 * s2) / E


def tension_gradient(field: DesignField, mat: SimpMaterial, stresses, detJ, cfg: TensionConfig,
                     thickness: float = 1.0) -> np.ndarray:
    """Descent direction ``-f,rho_e`` built from reduced principal stresses.

    Parameters
    ----------
    field : DesignField
    mat : SimpMaterial
    stresses : array, shape (N, 4, 3)
        Gauss-point stresses computed with the SIMP-effective modulus
        ``rho_e**p * E0``.
    detJ : float or array broadcastable to (N, 4)
    cfg : TensionConfig
    thickness : float

    Returns
    -------
    ndarray, shape (N,)
        Non-negative for ``nu <= 0.5`` and ``0 <= k <= 1``.
    """
    rho = field.rho if isinstance(field, DesignField) else np.asarray(field, dtype=float)
    stresses = np.asarray(stresses, dtype=float)
    if stresses.shape != (rho.size, 4, 3):
        raise ParameterError(f"expected stresses of shape ({rho.size}, 4, 3), got {stresses.shape}")
    s1, s2 = reduce_stresses(principal_stresses(stresses), cfg)
    E_eff = (rho**mat.p * mat.E0)[:, None]
    w = principal_energy_density(s1, s2, E_eff, mat.nu)
    w = w * np.broadcast_to(detJ, w.shape) * thickness
    return mat.p / rho * w.sum(axis=1)


def element_stresses(problem, field: DesignField, u) -> np.ndarray:
    """Gauss-point stresses of every element at the SIMP-effective modulus."""
    mat = problem.material
    rho = field.rho if isinstance(field, DesignField) else np.asarray(field)
    return all_gauss_point_stresses(problem.grid, u, rho**mat.p * mat.E0, mat.nu)


def tension_descent(problem, field: DesignField, u, cfg: TensionConfig) -> np.ndarray:
    grid: StructuredGrid = problem.grid
    stresses = element_stresses(problem, field, u)
    return tension_gradient(field, problem.material, stresses, grid.det_jacobian, cfg, grid.thickness)


@dataclass(frozen=True)
class EnergySplit:
    total: float
    tensile: float
    compressive: float
    reduced: float

    @property
    def compressive_share(self) -> float:
        return self.compressive / self.total if self.total > 0 else 0.0


def energy_split(problem, field: DesignField, u, k: float = 0.0) -> EnergySplit:
    """Split the Gauss-point elastic energy into tensile and compressive parts.

    The tensile part is the energy left after zeroing compressive principal
    stresses; the compressive part is the remainder.  ``reduced`` is the energy
    with compressive stresses scaled by ``k``.
    """
    mat = problem.material
    grid = problem.grid
    rho = field.rho if isinstance(field, DesignField) else np.asarray(field)
    ps = principal_stresses(element_stresses(problem, field, u))
    E_eff = (rho**mat.p * mat.E0)[:, None]
    scale = grid.det_jacobian * grid.thickness

    def total_for(kk):
        s1, s2 = reduce_stresses(ps, TensionConfig(kk))
        return float(principal_energy_density(s1, s2, E_eff, mat.nu).sum() * scale)

    full = total_for(1.0)
    tens = total_for(0.0)
    return EnergySplit(full, tens, full - tens, total_for(k))
