import numpy as np
import pytest

from simptopo.errors import ParameterError, ProblemFileError
from simptopo.problems import BUILTIN_NAMES, builtin_problem, dump_problem, load_problem


def test_cantilever_counts():
    p = builtin_problem("cantilever", 2, 2, 0.5)
    assert len(p.bc.fixed_dofs) == 6
    assert len(p.bc.loads) == 1


@pytest.mark.parametrize("nx,ny", [(2, 2), (7, 3), (30, 10)])
def test_mbb_counts(nx, ny):
    p = builtin_problem("mbb", nx, ny, 0.5)
    fixed = p.bc.fixed_dofs
    assert sum(1 for d in fixed if d % 2 == 0) == ny + 1
    assert sum(1 for d in fixed if d % 2 == 1) == 1


@pytest.mark.parametrize("nx,ny", [(4, 2), (9, 5), (40, 20)])
def test_bridge_layout(nx, ny):
    p = builtin_problem("bridge", nx, ny, 0.3)
    assert len(p.bc.fixed_dofs) == 8
    # corner deck shares land on supports, the interior bottom nodes carry the rest
    assert len(p.bc.loads) == nx - 1
    assert sum(m for _, m in p.bc.loads) == pytest.approx(-(nx - 1) / nx)
    assert all(d % 2 == 1 for d, _ in p.bc.loads)
    assert p.symmetry == "vertical"


def test_bridge_loads_are_mirror_symmetric():
    p = builtin_problem("bridge", 10, 4, 0.3)
    g = p.grid
    by_node = {d // 2: m for d, m in p.bc.loads}
    for node, m in by_node.items():
        i, j = node % (g.nx + 1), node // (g.nx + 1)
        assert by_node[g.node(g.nx - i, j)] == m


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_are_supported(name):
    builtin_problem(name, 6, 4, 0.4).check_supports()


@pytest.mark.parametrize("args", [("truss", 4, 4, 0.5), ("mbb", 1, 4, 0.5), ("mbb", 4, 4, 1.5)])
def test_builtin_rejects(args):
    with pytest.raises(ParameterError):
        builtin_problem(*args)


def test_unknown_name_lists_choices():
    with pytest.raises(ParameterError, match="cantilever, mbb, bridge"):
        builtin_problem("arch", 4, 4, 0.5)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
@pytest.mark.parametrize("k", [None, 0.0, 0.5])
def test_dump_load_round_trip(name, k):
    p = builtin_problem(name, 5, 3, 0.35, tension_k=k)
    assert load_problem(dump_problem(p)) == p


def test_handwritten_cantilever_file():
    text = """
    # 2x2 cantilever
    nx=2
    ny=2
    volfrac=0.5
    fix=0,xy
    fix=3,xy
    fix=6,xy      # left edge
    load=5,y,-1.0
    """
    assert load_problem(text) == builtin_problem("cantilever", 2, 2, 0.5)


@pytest.mark.parametrize("text,lineno", [
    ("nx=2\nny=2\nvolfrac=0.5\nfix=99,x\n", 4),
    ("nx=2\nny=2\nvolfrac=1.5\nfix=0,xy\n", 3),
    ("nx=2\nny=two\n", 2),
    ("nx=2\nny=2\nvolfrac=0.5\nweight=3\n", 4),
    ("nx=2\nny=2\nvolfrac=0.5\nfix=0,z\n", 4),
    ("nx=2\nny=2\nvolfrac=0.5\nfix=0,xy\nload=0,y,1\n", 5),
    ("nx=2\nny=2\nvolfrac=0.5\nload=1\n", 4),
    ("nx=2\nny=2\nvolfrac=0.5\njunk\n", 4),
])
def test_parse_errors_carry_line(text, lineno):
    with pytest.raises(ProblemFileError, match=f"^line {lineno}: ") as info:
        load_problem(text)
    assert info.value.line == lineno


def test_missing_key_and_floating_structure():
    with pytest.raises(ProblemFileError, match="volfrac"):
        load_problem("nx=2\nny=2\n")
    with pytest.raises(ProblemFileError, match="restrain"):
        load_problem("nx=2\nny=2\nvolfrac=0.5\nfix=0,x\nload=8,y,1\n")


def test_tension_key():
    p = load_problem("nx=2\nny=2\nvolfrac=0.5\nfix=0,xy\nfix=6,xy\nload=8,y,-1\ntension_k=0.2\n")
    assert p.tension.k == 0.2
    with pytest.raises(ProblemFileError):
        load_problem("nx=2\nny=2\nvolfrac=0.5\nfix=0,xy\nfix=6,xy\ntension_k=2\n")


def test_uniform_start_spd_for_every_builtin():
    for name in BUILTIN_NAMES:
        p = builtin_problem(name, 8, 4, 0.5)
        from simptopo.simp_model import equilibrium

        assert equilibrium(p, np.full(p.grid.n_elements, 0.5)).compliance > 0
