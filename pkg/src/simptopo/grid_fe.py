"""Structured plane-stress finite elements on a rectangular grid.

Numbering
---------
Node ``(i, j)`` (``i`` along x, ``j`` along y, origin bottom-left) has index
``j * (nx + 1) + i`` and owns DOFs ``2n`` (x) and ``2n + 1`` (y).

Elements are stored column-major: element ``(i, j)`` has index ``i * ny + j``.
Its four nodes run counter-clockwise from the bottom-left corner, matching the
natural coordinates ``(-1,-1), (1,-1), (1,1), (-1,1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ParameterError, SolveError

_G = 1.0 / np.sqrt(3.0)
#: 2x2 Gauss points, same ordering as the element corners; all weights are 1.
GAUSS_POINTS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True)
class StructuredGrid:
    nx: int
    ny: int
    elem_w: float = 1.0
    elem_h: float = 1.0
    thickness: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ParameterError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        for name in ("elem_w", "elem_h", "thickness"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def elem_volume(self) -> float:
        return self.elem_w * self.elem_h * self.thickness

    @property
    def det_jacobian(self) -> float:
        """Jacobian determinant of the (rectangular) element map, same at every Gauss point."""
        return 0.25 * self.elem_w * self.elem_h

    def node(self, i: int, j: int) -> int:
        if not (0 <= i <= self.nx and 0 <= j <= self.ny):
            raise ParameterError(f"node ({i}, {j}) outside a {self.nx}x{self.ny} grid")
        return j * (self.nx + 1) + i

    def element(self, i: int, j: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise ParameterError(f"element ({i}, {j}) outside a {self.nx}x{self.ny} grid")
        return i * self.ny + j

    def element_ij(self, e: int) -> tuple[int, int]:
        self.check_element(e)
        return divmod(int(e), self.ny)

    def check_element(self, e) -> None:
        if int(e) != e or not 0 <= e < self.n_elements:
            raise ParameterError(f"element id {e} out of range [0, {self.n_elements})")

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """``(n_elements, 4)`` node indices, counter-clockwise from bottom-left."""
        i, j = np.divmod(np.arange(self.n_elements), self.ny)
        n0 = j * (self.nx + 1) + i
        return np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """``(n_elements, 8)`` global DOFs ordered ``x0, y0, x1, y1, ...``."""
        n = self.element_nodes
        return np.stack([2 * n, 2 * n + 1], axis=2).reshape(self.n_elements, 8)

    def to_image(self, values) -> np.ndarray:
        """Reshape per-element values to an ``(ny, nx)`` array, top row first."""
        values = np.asarray(values)
        if values.shape != (self.n_elements,):
            raise ParameterError(f"expected {self.n_elements} element values, got shape {values.shape}")
        return values.reshape(self.nx, self.ny).T[::-1]


@dataclass(frozen=True)
class BoundaryConditions:
    """Fixed DOFs and nodal point loads ``(dof, magnitude)``."""

    fixed_dofs: frozenset
    loads: tuple = ()

    def __init__(self, fixed_dofs, loads=()):
        object.__setattr__(self, "fixed_dofs", frozenset(int(d) for d in fixed_dofs))
        object.__setattr__(self, "loads", tuple((int(d), float(m)) for d, m in loads))

    def validate(self, grid: StructuredGrid) -> None:
        n = grid.n_dofs
        bad = sorted(d for d in self.fixed_dofs if not 0 <= d < n)
        if bad:
            raise ParameterError(f"fixed DOF {bad[0]} out of range [0, {n})")
        for dof, _ in self.loads:
            if not 0 <= dof < n:
                raise ParameterError(f"loaded DOF {dof} out of range [0, {n})")
            if dof in self.fixed_dofs:
                raise ParameterError(f"DOF {dof} is both fixed and loaded")

    def load_vector(self, grid: StructuredGrid) -> np.ndarray:
        self.validate(grid)
        p = np.zeros(grid.n_dofs)
        for dof, mag in self.loads:
            p[dof] += mag
        return p

    def free_dofs(self, grid: StructuredGrid) -> np.ndarray:
        mask = np.ones(grid.n_dofs, dtype=bool)
        mask[sorted(self.fixed_dofs)] = False
        return np.flatnonzero(mask)


@lru_cache(maxsize=32)
def rigid_body_modes(grid: StructuredGrid) -> np.ndarray:
    """Orthonormal element rigid-body modes, shape (8, 3): x, y translation, rotation."""
    x = _CORNERS[:, 0] * 0.5 * grid.elem_w
    y = _CORNERS[:, 1] * 0.5 * grid.elem_h
    R = np.zeros((8, 3))
    R[0::2, 0] = 1.0
    R[1::2, 1] = 1.0
    R[0::2, 2] = -y
    R[1::2, 2] = x
    R /= np.linalg.norm(R, axis=0)
    R.setflags(write=False)
    return R


def elasticity_matrix(E: float, nu: float) -> np.ndarray:
    """Plane-stress constitutive matrix in Voigt form (engineering shear strain)."""
    return E / (1.0 - nu * nu) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]
    )


def _check_material(E, nu):
    if not E > 0:
        raise ParameterError(f"Young's modulus must be positive, got {E}")
    if not 0.0 <= nu < 0.5:
        raise ParameterError(f"Poisson ratio must lie in [0, 0.5), got {nu}")


def strain_displacement(grid: StructuredGrid, xi: float, eta: float) -> np.ndarray:
    """3x8 strain-displacement matrix at natural coordinates ``(xi, eta)``."""
    dxi = 0.25 * _CORNERS[:, 0] * (1.0 + _CORNERS[:, 1] * eta)
    deta = 0.25 * _CORNERS[:, 1] * (1.0 + _CORNERS[:, 0] * xi)
    # rectangular element: J = diag(w/2, h/2)
    dx = dxi * 2.0 / grid.elem_w
    dy = deta * 2.0 / grid.elem_h
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


def gauss_b_matrices(grid: StructuredGrid) -> np.ndarray:
    """``(4, 3, 8)`` B matrices at the 2x2 Gauss points."""
    return np.stack([strain_displacement(grid, xi, eta) for xi, eta in GAUSS_POINTS])


def element_stiffness(E0: float, nu: float, grid: StructuredGrid) -> np.ndarray:
    """Bilinear plane-stress element stiffness, 2x2 Gauss quadrature.

    Parameters
    ----------
    E0, nu : float
        Young's modulus and Poisson ratio of the solid material.
    grid : StructuredGrid
        Supplies element size and thickness; all elements share the result.

    Returns
    -------
    ndarray, shape (8, 8)
    """
    _check_material(E0, nu)
    C = elasticity_matrix(E0, nu)
    k0 = np.zeros((8, 8))
    for B in gauss_b_matrices(grid):
        k0 += B.T @ C @ B
    k0 *= grid.det_jacobian * grid.thickness
    return 0.5 * (k0 + k0.T)


def assemble(grid: StructuredGrid, k0: np.ndarray, rho, p: float) -> sp.csr_matrix:
    """Global stiffness ``K = sum_e rho_e**p * k0`` scattered by the fixed DOF map."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (grid.n_elements,):
        raise ParameterError(f"density vector has shape {rho.shape}, grid needs ({grid.n_elements},)")
    if np.any(rho <= 0):
        raise ParameterError("densities must be strictly positive for assembly")
    edof = grid.element_dofs
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    vals = (rho**p)[:, None] * k0.ravel()[None, :]
    n = grid.n_dofs
    K = sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def factorize_reduced(K, bc: BoundaryConditions, grid: StructuredGrid):
    """Factorize the free-DOF block of ``K``; returns ``(lu, free, Kff)``.

    SuperLU runs in symmetric mode with diagonal pivoting, so its pivots are
    those of an LDL^T factorization and any non-positive one flags a singular
    or indefinite system.
    """
    bc.validate(grid)
    free = bc.free_dofs(grid)
    Kff = sp.csc_matrix(K[free][:, free])
    try:
        lu = splu(
            Kff,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True, "Equil": False},
        )
    except RuntimeError as exc:
        raise SolveError(f"reduced stiffness factorization failed: {exc}") from exc
    pivots = lu.U.diagonal()
    # round-off leaves exactly singular pivots near eps * max, not at zero
    floor = 64.0 * np.finfo(float).eps * np.abs(pivots).max(initial=0.0)
    bad = np.flatnonzero(~(pivots > floor))
    if bad.size:
        k = int(bad[0])
        dof = int(free[lu.perm_c[k]])
        raise SolveError(
            f"reduced stiffness is not positive definite: pivot {k} = {pivots[k]:.3e} "
            f"(global DOF {dof}); check supports for rigid-body modes"
        )
    return lu, free, Kff


def solve_equilibrium(K, bc: BoundaryConditions, grid: StructuredGrid) -> np.ndarray:
    """Solve ``K u = p`` on the free DOFs; fixed DOFs come back exactly zero."""
    p = bc.load_vector(grid)
    u = np.zeros(grid.n_dofs)
    pnorm = np.linalg.norm(p)
    if pnorm == 0.0:
        return u
    lu, free, Kff = factorize_reduced(K, bc, grid)
    pf = p[free]
    uf = lu.solve(pf)
    r = pf - Kff @ uf
    if np.linalg.norm(r) > 1e-10 * pnorm:
        uf += lu.solve(r)  # one step of iterative refinement
        r = pf - Kff @ uf
    rnorm = np.linalg.norm(r)
    if not np.isfinite(rnorm) or rnorm > 1e-10 * pnorm:
        raise SolveError(f"equilibrium residual {rnorm:.3e} exceeds 1e-10 * |p| = {1e-10 * pnorm:.3e}")
    u[free] = uf
    return u


def gauss_point_stresses(grid: StructuredGrid, e: int, u, E: float, nu: float) -> np.ndarray:
    """Stresses ``(sxx, syy, txy)`` at the four Gauss points of element ``e``.

    ``E`` is the modulus the element actually carries (SIMP-effective).
    """
    grid.check_element(e)
    _check_material(E, nu)
    ue = np.asarray(u)[grid.element_dofs[int(e)]]
    C = elasticity_matrix(E, nu)
    return np.einsum("ij,gjk,k->gi", C, gauss_b_matrices(grid), ue)


def all_gauss_point_stresses(grid: StructuredGrid, u, E, nu: float) -> np.ndarray:
    """Vectorized :func:`gauss_point_stresses` over all elements, shape ``(N, 4, 3)``.

    ``E`` is a scalar or a per-element array of effective moduli.
    """
    E = np.broadcast_to(np.asarray(E, dtype=float), (grid.n_elements,))
    _check_material(float(E.min()), nu)
    ue = np.asarray(u)[grid.element_dofs]
    C1 = elasticity_matrix(1.0, nu)
    strains = np.einsum("gjk,ek->egj", gauss_b_matrices(grid), ue)
    return E[:, None, None] * np.einsum("ij,egj->egi", C1, strains)


def stress_energy(stresses, E: float, nu: float, grid: StructuredGrid) -> float:
    """Complementary form ``sum_g sigma : C^-1 : sigma * detJ * t`` for one element."""
    Cinv = np.linalg.inv(elasticity_matrix(E, nu))
    s = np.asarray(stresses)
    return float(np.einsum("gi,ij,gj->", s, Cinv, s) * grid.det_jacobian * grid.thickness)
