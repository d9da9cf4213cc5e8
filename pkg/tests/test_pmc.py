import numpy as np
import pytest

from pmcgraph.grid import build_grid, constant_field, field_from_expr
from pmcgraph.expr import ParseError
from pmcgraph.pmc import (
    MONOTONE_TOL,
    PMCFunction,
    QuasiDecomposition,
    WorkingBox,
    check_monotone,
    check_quasi_decreasing,
    graph_normal_env,
    parse_pmc,
    pmc_residual,
)

TWO_PI = 6.283185307179586


# -- PMCFunction --------------------------------------------------------------

def test_parse_and_eval():
    H = parse_pmc("0.5*sin(z) + 0.1*sin(6.283185307179586*x1)")
    assert abs(H.eval(0.25, 0.0, 0.0, 0.0, 0.0, 1.0) - 0.1) < 1e-15
    assert H.provenance == "expression"
    assert H.has_exact_partials


def test_symbolic_partials():
    H = parse_pmc("z^2*t - 0.5*y1")
    # d/dz = 2 z t, d/dt = z^2, d/dy1 = -0.5
    assert H.d_z(0.0, 0.0, 3.0, 0.0, 0.0, 0.5) == pytest.approx(3.0, abs=1e-15)
    assert H.d_t(0.0, 0.0, 3.0, 0.0, 0.0, 0.5) == pytest.approx(9.0, abs=1e-15)
    assert H.d_y(0, 0.0, 0.0, 3.0, 0.2, 0.0, 0.5) == -0.5


def test_absent_variable_partial_is_exact_zero():
    H = parse_pmc("1 + 0.5*y1")
    # the height partial folds to the literal constant 0, so monotonicity
    # checks on height-free prescriptions pass with worst value exactly 0.0
    assert H.d_z(0.0, 0.0, 100.0, 0.5, 0.0, 0.5) == 0.0


def test_callable_fd_partials():
    H = PMCFunction.from_callable(lambda x1, x2, z, y1, y2, t: z * z * t)
    assert not H.has_exact_partials
    assert H.d_z(0.0, 0.0, 3.0, 0.0, 0.0, 0.5) == pytest.approx(3.0, rel=1e-8)
    assert H.d_t(0.0, 0.0, 3.0, 0.0, 0.0, 0.5) == pytest.approx(9.0, rel=1e-8)


def test_parse_rejects_unknown_variable():
    with pytest.raises(ParseError, match="t, x1, x2, y1, y2, z"):
        parse_pmc("sin(q)")


# -- WorkingBox ---------------------------------------------------------------

def test_box_validation():
    with pytest.raises(ValueError, match="a < b"):
        WorkingBox((1.0, 1.0), ((0.0, 1.0),))
    with pytest.raises(ValueError, match="base range"):
        WorkingBox((0.0, 1.0), ((2.0, 1.0),))
    box = WorkingBox((-1.0, 1.0), ((0.0, 1.0), (0.0, 2.0)))
    assert box.dimension == 2
    assert box.z_span() == 2.0


def test_box_from_grid():
    g = build_grid(2, (8, 8), (1.0, 2.0), "periodic", origin=(0.0, -1.0))
    box = WorkingBox.from_grid(g, (0.0, 3.0))
    assert box.x_ranges == ((0.0, 1.0), (-1.0, 1.0))


def test_box_contains():
    box = WorkingBox((0.0, 1.0), ((0.0, 1.0),))
    assert box.contains_values(np.array([0.0, 0.5, 1.0]))
    assert box.contains_values(np.array([1.0 + 1e-13]))
    assert not box.contains_values(np.array([1.1]))


def test_lattice_is_upward_half_ball_1d():
    box = WorkingBox((0.0, 1.0), ((0.0, 1.0),))
    env = box.sample_lattice(samples=3)
    # 3 x1 * 3 z * {(y1,t)} with y1 in {-1,0,1}, t in {0,.5,1} and y1^2+t^2<=1:
    # (-1,0) (0,0) (0,.5) (0,1) (1,0) -> 5 normal pairs, 45 points total
    assert env["x1"].size == 45
    r2 = env["y1"] ** 2 + env["t"] ** 2
    assert np.all(r2 <= 1.0 + 1e-12)
    assert np.all(env["t"] >= 0.0)
    # the vertical pole and the horizontal corners are all sampled
    assert np.any((env["y1"] == 0.0) & (env["t"] == 1.0))
    assert np.any((env["y1"] == -1.0) & (env["t"] == 0.0))
    assert np.any((env["y1"] == 1.0) & (env["t"] == 0.0))


def test_lattice_count_2d():
    box = WorkingBox((0.0, 1.0), ((0.0, 1.0), (0.0, 1.0)))
    env = box.sample_lattice(samples=3)
    # normal triples surviving |Y|^2+t^2<=1: five at t=0, one each at t=.5, 1
    assert env["x1"].size == 27 * 7
    with pytest.raises(ValueError, match="at least 2"):
        box.sample_lattice(samples=1)


# -- monotonicity checks ------------------------------------------------------

def test_check_monotone_sine():
    H = parse_pmc("sin(z)")
    box = WorkingBox((0.25, 3.391592653589793), ((0.0, 1.0),))
    out = check_monotone(H, box)
    assert not out["passed"]
    # d/dz = cos(z) peaks at the low edge of the height range
    assert out["worst_value"] == pytest.approx(0.9689124217106447, abs=1e-15)
    assert out["worst_point"]["z"] == pytest.approx(0.25, abs=1e-15)


def test_check_monotone_height_free_passes_exactly():
    H = parse_pmc("1 + 0.5*y1 - 0.2*t")
    box = WorkingBox((-50.0, 50.0), ((0.0, 1.0),))
    out = check_monotone(H, box)
    assert out["passed"]
    assert out["worst_value"] == 0.0


def test_check_monotone_decreasing():
    H = parse_pmc("-z + 0.3*t")
    box = WorkingBox((-2.0, 2.0), ((0.0, 1.0), (0.0, 1.0)))
    out = check_monotone(H, box)
    assert out["passed"]
    assert out["worst_value"] == -1.0
    assert set(out["worst_point"]) == {"x1", "x2", "z", "y1", "y2", "t"}


# -- quasi-decreasing splits --------------------------------------------------

def test_quasi_decomposition_composite():
    D = QuasiDecomposition.from_exprs("-z", "0.3")
    H = D.composite()
    assert H.eval(0.0, 0.0, 2.0, 0.0, 0.0, 0.5) == pytest.approx(-1.85, abs=1e-15)
    assert H.d_t(0.0, 0.0, 2.0, 0.0, 0.0, 0.5) == pytest.approx(0.3, abs=1e-15)
    assert H.d_z(0.0, 0.0, 2.0, 0.0, 0.0, 0.5) == -1.0
    assert H.provenance == "composite"


def test_quasi_decomposition_variable_scoping():
    with pytest.raises(ParseError):
        QuasiDecomposition.from_exprs("-z + t", "0.3")  # t not allowed in H1
    with pytest.raises(ParseError):
        QuasiDecomposition.from_exprs("-z", "z")  # z not allowed in H2


def test_check_quasi_decreasing():
    box = WorkingBox((-2.0, 2.0), ((0.0, 1.0),))
    good = QuasiDecomposition.from_exprs("-z", "0.3*y1")
    out = check_quasi_decreasing(good, box)
    assert out["passed"] and out["h2_height_free"]

    bad = QuasiDecomposition.from_exprs("z", "0.3")
    out = check_quasi_decreasing(bad, box)
    assert not out["passed"]
    assert out["worst_value"] == 1.0


def test_check_quasi_decreasing_flags_sneaky_h2():
    # an H2 that smuggles height dependence in through a callable
    h1 = PMCFunction.from_callable(lambda x1, x2, z, y1, y2, t: -z)
    h2 = PMCFunction.from_callable(lambda x1, x2, z, y1, y2, t: 0.1 * z)
    box = WorkingBox((1.0, 2.0), ((0.0, 1.0),))
    out = check_quasi_decreasing(QuasiDecomposition(h1, h2), box)
    assert not out["h2_height_free"]
    assert not out["passed"]


# -- residual -----------------------------------------------------------------

def test_graph_normal_is_unit():
    g = build_grid(2, (17, 17), (1.0, 1.0), "dirichlet", origin=(-0.5, -0.5))
    u = field_from_expr(g, "sqrt(1 - x1^2 - x2^2)")
    env, omega = graph_normal_env(g, u.values)
    r2 = env["y1"] ** 2 + env["y2"] ** 2 + env["t"] ** 2
    assert np.max(np.abs(r2 - 1.0)) < 1e-14
    assert np.all(env["t"] > 0.0)
    assert np.max(np.abs(env["t"] * omega - 1.0)) < 1e-14


def test_residual_zero_for_plane():
    g = build_grid(2, (9, 9), (1.0, 1.0), "dirichlet")
    u = field_from_expr(g, "0.3 + 0.1*x1 - 0.2*x2")
    res = pmc_residual(g, u, parse_pmc("0"))
    assert np.max(np.abs(res.values)) < 1e-12


def test_residual_cap():
    g = build_grid(2, (33, 33), (1.0, 1.0), "dirichlet", origin=(-0.5, -0.5))
    u = field_from_expr(g, "sqrt(1 - x1^2 - x2^2)")
    res = pmc_residual(g, u, parse_pmc("2"))
    assert np.max(np.abs(res.values)) < 0.05
    assert np.max(np.abs(res.values[8:-8, 8:-8])) < 1e-3
    assert np.all(res.values[g.boundary_mask] == 0.0)


def test_residual_translation_covariance():
    g = build_grid(2, (16, 16), (1.0, 1.0), "periodic")
    u = field_from_expr(g, f"0.2*sin({TWO_PI}*x1) + 0.1*cos({TWO_PI}*x2)")
    shifted = constant_field(g, 3.0)
    H = parse_pmc("y1^2 + 0.5*t")  # height-free
    a = pmc_residual(g, u, H)
    b = pmc_residual(g, type(u)(g, u.values + shifted.values), H)
    # differencing heights near 3 instead of near 0 costs a few mantissa bits
    assert np.max(np.abs(a.values - b.values)) < 1e-11


def test_residual_box_exit_names_nodes():
    g = build_grid(2, (4, 4), (1.0, 1.0), "periodic")
    u = constant_field(g, 0.5)
    box = WorkingBox.from_grid(g, (0.6, 1.0))
    with pytest.raises(ValueError) as err:
        pmc_residual(g, u, parse_pmc("0"), box=box)
    msg = str(err.value)
    assert "16 node(s)" in msg
    assert "flat indices 0, 1, 2, 3, 4" in msg
    assert "..." in msg


def test_residual_inside_box_is_fine():
    g = build_grid(2, (4, 4), (1.0, 1.0), "periodic")
    u = constant_field(g, 0.5)
    box = WorkingBox.from_grid(g, (0.0, 1.0))
    res = pmc_residual(g, u, parse_pmc("0"), box=box)
    assert np.max(np.abs(res.values)) == 0.0


def test_residual_grid_mismatch():
    g = build_grid(2, (8, 8), (1.0, 1.0), "periodic")
    other = build_grid(2, (8, 8), (2.0, 1.0), "periodic")
    u = constant_field(other, 0.0)
    with pytest.raises(ValueError, match="not defined on"):
        pmc_residual(g, u, parse_pmc("0"))


def test_monotone_tolerance_is_tight():
    assert MONOTONE_TOL <= 1e-12
