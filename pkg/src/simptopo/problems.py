"""Benchmark problems and the line-oriented problem file format.

Problem files hold one ``key=value`` per line; ``#`` starts a comment::

    nx=40
    ny=20
    volfrac=0.5
    fix=0,xy          # node index, constrained directions
    load=840,y,-1.0   # node index, direction, magnitude

Optional keys with defaults: ``elem_w=1``, ``elem_h=1``, ``thickness=1``,
``E0=1``, ``nu=0.3``, ``penalty=3`` and ``tension_k`` (absent means a standard
compliance run).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError, ProblemFileError, SolveError
from .grid_fe import BoundaryConditions, StructuredGrid, assemble, factorize_reduced
from .simp_model import DEFAULT_RHO_MIN, SimpMaterial, material_stiffness
from .tension import TensionConfig

BUILTIN_NAMES = ("cantilever", "mbb", "bridge")


@dataclass(frozen=True)
class ProblemDefinition:
    grid: StructuredGrid
    bc: BoundaryConditions
    material: SimpMaterial = SimpMaterial()
    volume_fraction: float = 0.5
    tension: TensionConfig | None = None
    rho_min: float = DEFAULT_RHO_MIN
    name: str = field(default="custom", compare=False)
    #: "vertical" when the problem is mirror-symmetric about x = nx * elem_w / 2
    symmetry: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ParameterError(f"volume fraction must lie in (0, 1), got {self.volume_fraction}")
        if not 0.0 < self.rho_min < self.volume_fraction:
            raise ParameterError(f"rho_min {self.rho_min} must lie in (0, volume fraction)")
        self.bc.validate(self.grid)

    def check_supports(self) -> None:
        """Raise ``ParameterError`` unless the supports remove every rigid-body mode."""
        k0 = material_stiffness(self.material, self.grid)
        K = assemble(self.grid, k0, np.ones(self.grid.n_elements), self.material.p)
        try:
            factorize_reduced(K, self.bc, self.grid)
        except SolveError as exc:
            raise ParameterError(f"supports do not restrain the structure: {exc}") from exc

    def with_tension(self, k: float | None) -> "ProblemDefinition":
        return replace(self, tension=None if k is None else TensionConfig(k))


def _cantilever(grid):
    fixed = [2 * grid.node(0, j) + d for j in range(grid.ny + 1) for d in (0, 1)]
    loads = [(2 * grid.node(grid.nx, grid.ny // 2) + 1, -1.0)]
    return BoundaryConditions(fixed, loads), None


def _mbb(grid):
    fixed = [2 * grid.node(0, j) for j in range(grid.ny + 1)]
    fixed.append(2 * grid.node(grid.nx, 0) + 1)
    loads = [(2 * grid.node(0, grid.ny) + 1, -1.0)]
    return BoundaryConditions(fixed, loads), None


def _bridge(grid):
    # Pins at all four corners (deck ends and pylon tops), unit total deck
    # load as equivalent nodal loads.  The corner shares act directly on the
    # supports and are left out.
    corners = [grid.node(i, j) for i in (0, grid.nx) for j in (0, grid.ny)]
    fixed = [2 * n + d for n in corners for d in (0, 1)]
    w = 1.0 / grid.nx
    loads = [(2 * grid.node(i, 0) + 1, -w) for i in range(1, grid.nx)]
    return BoundaryConditions(fixed, loads), "vertical"


_BUILDERS = {"cantilever": _cantilever, "mbb": _mbb, "bridge": _bridge}


def builtin_problem(name: str, nx: int, ny: int, volume_fraction: float, *,
                    material: SimpMaterial | None = None, tension_k: float | None = None,
                    rho_min: float = DEFAULT_RHO_MIN) -> ProblemDefinition:
    """Canonical benchmark on a unit-square-element grid.

    ``cantilever``: left edge clamped, unit downward load at the right-edge node
    at mid-height.  ``mbb``: symmetric half of the MBB beam, left-edge x-DOFs and
    the bottom-right y-DOF fixed, unit downward load at the top-left node.
    ``bridge``: pins at the four corners with a uniform downward deck load on
    the interior bottom-edge nodes, so the deck can hang from the top supports.
    This layout is a reconstruction and is mirror-symmetric about the
    vertical centre line.
    """
    if name not in _BUILDERS:
        raise ParameterError(f"unknown problem {name!r}; choose one of {', '.join(BUILTIN_NAMES)}")
    if nx < 2 or ny < 2:
        raise ParameterError(f"builtin problems need nx, ny >= 2, got {nx}x{ny}")
    grid = StructuredGrid(int(nx), int(ny))
    bc, sym = _BUILDERS[name](grid)
    return ProblemDefinition(
        grid=grid,
        bc=bc,
        material=material or SimpMaterial(),
        volume_fraction=volume_fraction,
        tension=None if tension_k is None else TensionConfig(tension_k),
        rho_min=rho_min,
        name=name,
        symmetry=sym,
    )


_FLOAT_KEYS = {"elem_w": 1.0, "elem_h": 1.0, "thickness": 1.0, "E0": 1.0, "nu": 0.3, "penalty": 3.0}
_INT_KEYS = ("nx", "ny")


def _number(text, cast, line):
    try:
        return cast(text.strip())
    except ValueError:
        raise ProblemFileError(f"not a valid {cast.__name__}: {text.strip()!r}", line) from None


def load_problem(text: str) -> ProblemDefinition:
    """Parse and validate a problem file's contents."""
    scalars = {}
    fixes = []
    loads = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ProblemFileError(f"expected key=value, got {body!r}", lineno)
        key, value = (part.strip() for part in body.split("=", 1))
        if key == "fix":
            parts = value.split(",")
            if len(parts) != 2 or parts[1].strip() not in ("x", "y", "xy"):
                raise ProblemFileError("fix takes <node>,<x|y|xy>", lineno)
            fixes.append((_number(parts[0], int, lineno), parts[1].strip(), lineno))
        elif key == "load":
            parts = value.split(",")
            if len(parts) != 3 or parts[1].strip() not in ("x", "y"):
                raise ProblemFileError("load takes <node>,<x|y>,<magnitude>", lineno)
            loads.append((_number(parts[0], int, lineno), parts[1].strip(),
                          _number(parts[2], float, lineno), lineno))
        elif key in _INT_KEYS:
            scalars[key] = (_number(value, int, lineno), lineno)
        elif key in _FLOAT_KEYS or key in ("volfrac", "tension_k"):
            scalars[key] = (_number(value, float, lineno), lineno)
        else:
            raise ProblemFileError(f"unknown key {key!r}", lineno)

    for key in ("nx", "ny", "volfrac"):
        if key not in scalars:
            raise ProblemFileError(f"missing required key {key!r}")

    def get(key):
        return scalars[key][0] if key in scalars else _FLOAT_KEYS[key]

    def at(key):
        return scalars[key][1] if key in scalars else None

    try:
        grid = StructuredGrid(scalars["nx"][0], scalars["ny"][0], get("elem_w"), get("elem_h"), get("thickness"))
    except ParameterError as exc:
        raise ProblemFileError(str(exc), at("nx")) from None
    try:
        material = SimpMaterial(get("E0"), get("nu"), get("penalty"))
    except ParameterError as exc:
        raise ProblemFileError(f"material: {exc}") from None

    fixed = []
    for node, dirs, lineno in fixes:
        if not 0 <= node < grid.n_nodes:
            raise ProblemFileError(f"fix: node {node} out of range [0, {grid.n_nodes})", lineno)
        fixed.extend(2 * node + (0 if c == "x" else 1) for c in dirs)
    load_list = []
    for node, direction, mag, lineno in loads:
        if not 0 <= node < grid.n_nodes:
            raise ProblemFileError(f"load: node {node} out of range [0, {grid.n_nodes})", lineno)
        dof = 2 * node + (0 if direction == "x" else 1)
        if dof in fixed:
            raise ProblemFileError(f"load: DOF {dof} of node {node} is fixed", lineno)
        load_list.append((dof, mag))

    volfrac = scalars["volfrac"][0]
    if not 0.0 < volfrac < 1.0:
        raise ProblemFileError(f"volfrac must lie in (0, 1), got {volfrac}", at("volfrac"))
    tension = None
    if "tension_k" in scalars:
        try:
            tension = TensionConfig(scalars["tension_k"][0])
        except ParameterError as exc:
            raise ProblemFileError(str(exc), at("tension_k")) from None

    problem = ProblemDefinition(grid, BoundaryConditions(fixed, load_list), material, volfrac, tension)
    try:
        problem.check_supports()
    except ParameterError as exc:
        raise ProblemFileError(str(exc)) from None
    return problem


def dump_problem(problem: ProblemDefinition) -> str:
    """Render a problem in the file format; ``load_problem`` reads it back equal."""
    g, m = problem.grid, problem.material
    lines = [
        f"# {problem.name}",
        f"nx={g.nx}",
        f"ny={g.ny}",
        f"elem_w={g.elem_w!r}",
        f"elem_h={g.elem_h!r}",
        f"thickness={g.thickness!r}",
        f"E0={m.E0!r}",
        f"nu={m.nu!r}",
        f"penalty={m.p!r}",
        f"volfrac={problem.volume_fraction!r}",
    ]
    if problem.tension is not None:
        lines.append(f"tension_k={problem.tension.k!r}")
    by_node = {}
    for dof in sorted(problem.bc.fixed_dofs):
        by_node.setdefault(dof // 2, []).append("xy"[dof % 2])
    lines += [f"fix={node},{''.join(d)}" for node, d in sorted(by_node.items())]
    lines += [f"load={dof // 2},{'xy'[dof % 2]},{mag!r}" for dof, mag in problem.bc.loads]
    return "\n".join(lines) + "\n"
