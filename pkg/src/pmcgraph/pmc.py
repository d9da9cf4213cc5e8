"""Curvature prescriptions H(x, z, Y, t) and pointwise checks.

A prescription is evaluated with base point x, height z, the horizontal
part Y of the upward unit normal and its vertical part t = 1/omega; for the
graph of u these are Y = -Du/omega, t = 1/omega, so |Y|^2 + t^2 = 1 with
t > 0.  Partial derivatives are symbolic when the prescription came from
expression text, centered finite differences (step 1e-6) otherwise.
"""

from __future__ import annotations

import numpy as np

from .calculus import mean_curvature_product_values, node_gradients
from .expr import ExprNode, eval_checked, parse_expr

__all__ = [
    "PMCFunction",
    "QuasiDecomposition",
    "WorkingBox",
    "parse_pmc",
    "check_monotone",
    "check_quasi_decreasing",
    "pmc_residual",
    "MONOTONE_TOL",
]

PMC_VARS = ("x1", "x2", "z", "y1", "y2", "t")
FD_STEP = 1e-6

# slack admitted when testing sampled partials against 0 (exact symbolic
# partials of z-free prescriptions evaluate to the literal 0.0)
MONOTONE_TOL = 1e-12


def _env_of(x1, x2, z, y1, y2, t):
    return {"x1": x1, "x2": x2, "z": z, "y1": y1, "y2": y2, "t": t}


class PMCFunction:
    """Curvature prescription with evaluation and first partials.

    Parameters
    ----------
    fn : callable
        Maps an environment dict with keys x1,x2,z,y1,y2,t (scalars or
        broadcastable arrays) to values.
    partials : dict, optional
        Map from variable name to a function with the same signature.
        Missing entries fall back to centered differences.
    provenance : str
        How the prescription was built: 'expression', 'callable',
        'composite', 'transformed' or 'penalized'.
    """

    def __init__(self, fn, partials=None, provenance="callable", text=None, ast=None):
        self._fn = fn
        self._partials = dict(partials or {})
        self.provenance = provenance
        self.text = text
        self.ast = ast

    @classmethod
    def from_ast(cls, ast, provenance="expression", text=None, label="curvature"):
        fn = lambda env: eval_checked(ast, env, label=label)
        partials = {}
        for var in PMC_VARS:
            d = ast.diff(var)
            partials[var] = (lambda node: lambda env: eval_checked(
                node, env, label=f"d/d{var} of {label}"))(d)
        return cls(fn, partials, provenance=provenance, text=text, ast=ast)

    @classmethod
    def from_callable(cls, fn, provenance="callable"):
        """Wrap fn(x1, x2, z, y1, y2, t); partials by finite differences."""
        return cls(lambda env: fn(env["x1"], env["x2"], env["z"],
                                  env["y1"], env["y2"], env["t"]),
                   provenance=provenance)

    # -- evaluation ---------------------------------------------------------

    def eval(self, x1, x2, z, y1, y2, t):
        return np.asarray(self._fn(_env_of(x1, x2, z, y1, y2, t)), dtype=float)

    def _partial(self, var, env):
        if var in self._partials:
            return np.asarray(self._partials[var](env), dtype=float)
        hi = dict(env)
        lo = dict(env)
        hi[var] = np.asarray(env[var], dtype=float) + FD_STEP
        lo[var] = np.asarray(env[var], dtype=float) - FD_STEP
        return np.asarray((self._fn(hi) - self._fn(lo)) / (2.0 * FD_STEP), dtype=float)

    def d_z(self, x1, x2, z, y1, y2, t):
        return self._partial("z", _env_of(x1, x2, z, y1, y2, t))

    def d_y(self, axis, x1, x2, z, y1, y2, t):
        return self._partial(("y1", "y2")[axis], _env_of(x1, x2, z, y1, y2, t))

    def d_t(self, x1, x2, z, y1, y2, t):
        return self._partial("t", _env_of(x1, x2, z, y1, y2, t))

    @property
    def has_exact_partials(self):
        return all(v in self._partials for v in PMC_VARS)

    def __repr__(self):
        src = f" {self.text!r}" if self.text else ""
        return f"PMCFunction({self.provenance}{src})"


def parse_pmc(expr):
    """Parse curvature-prescription text over variables x1,x2,z,y1,y2,t."""
    ast = parse_expr(expr, PMC_VARS)
    return PMCFunction.from_ast(ast, provenance="expression", text=expr)


class QuasiDecomposition:
    """Split prescription H = H1(x, z, Y) + t * H2(x, Y).

    H1 must be non-increasing in the height, H2 height- and t-free; the
    split is what the decreasing-part solver consumes.
    """

    H1_VARS = ("x1", "x2", "z", "y1", "y2")
    H2_VARS = ("x1", "x2", "y1", "y2")

    def __init__(self, H1, H2):
        self.H1 = H1
        self.H2 = H2

    @classmethod
    def from_exprs(cls, h1_text, h2_text):
        h1 = PMCFunction.from_ast(parse_expr(h1_text, cls.H1_VARS),
                                  provenance="expression", text=h1_text,
                                  label="decreasing part")
        h2 = PMCFunction.from_ast(parse_expr(h2_text, cls.H2_VARS),
                                  provenance="expression", text=h2_text,
                                  label="bounded part")
        return cls(h1, h2)

    def composite(self):
        """The full prescription H1 + t*H2 as a PMCFunction."""
        if self.H1.ast is not None and self.H2.ast is not None:
            from .expr import Mul, Add, Var  # AST assembly

            ast = Add(self.H1.ast, Mul(Var("t"), self.H2.ast))
            text = None
            if self.H1.text and self.H2.text:
                text = f"({self.H1.text}) + t*({self.H2.text})"
            return PMCFunction.from_ast(ast, provenance="composite", text=text)

        h1, h2 = self.H1, self.H2

        def fn(env):
            return (h1._fn(env) + env["t"] * h2._fn(env))

        partials = {
            "z": lambda env: h1._partial("z", env),
            "t": lambda env: np.asarray(h2._fn(env), dtype=float),
        }
        for var in ("x1", "x2", "y1", "y2"):
            partials[var] = (lambda v: lambda env: h1._partial(v, env)
                             + env["t"] * h2._partial(v, env))(var)
        return PMCFunction(fn, partials, provenance="composite")


class WorkingBox:
    """Compact region where height monotonicity and penalties are certified.

    Holds the height range [z_min, z_max] and the base-coordinate ranges;
    the normal arguments always range over the upward unit half-ball
    |Y|^2 + t^2 <= 1, t >= 0 (graph normals have t = 1/omega > 0).
    """

    def __init__(self, z_range, x_ranges):
        a, b = (float(z_range[0]), float(z_range[1]))
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"box z-range must be finite with a < b, got ({a}, {b})")
        self.z_min, self.z_max = a, b
        self.x_ranges = tuple((float(lo), float(hi)) for lo, hi in x_ranges)
        for lo, hi in self.x_ranges:
            if not lo < hi:
                raise ValueError(f"bad base range ({lo}, {hi})")
        if len(self.x_ranges) not in (1, 2):
            raise ValueError("working box needs 1 or 2 base ranges")

    @classmethod
    def from_grid(cls, grid, z_range):
        ranges = tuple((o, o + L) for o, L in zip(grid.origin, grid.lengths))
        return cls(z_range, ranges)

    @property
    def dimension(self):
        return len(self.x_ranges)

    def z_span(self):
        return self.z_max - self.z_min

    def contains_values(self, values, slack=1e-12):
        v = np.asarray(values)
        return bool(np.all(v >= self.z_min - slack) and np.all(v <= self.z_max + slack))

    def sample_lattice(self, samples=9):
        """Deterministic sample environment over box x base x half-ball.

        Axis order x1[,x2],z,y1[,y2],t with `samples` points per axis
        (endpoints included, so box corners and the normal poles are all
        in the lattice); normal samples outside the closed unit half-ball
        are dropped.  Returns arrays of equal length, flattened C-order.
        """
        samples = int(samples)
        if samples < 2:
            raise ValueError("need at least 2 samples per axis")
        dim = self.dimension
        axes = [np.linspace(lo, hi, samples) for lo, hi in self.x_ranges]
        axes.append(np.linspace(self.z_min, self.z_max, samples))
        for _ in range(dim):
            axes.append(np.linspace(-1.0, 1.0, samples))
        axes.append(np.linspace(0.0, 1.0, samples))
        mesh = np.meshgrid(*axes, indexing="ij")
        flat = [m.reshape(-1) for m in mesh]
        if dim == 1:
            x1, z, y1, t = flat
            x2 = np.zeros_like(x1)
            y2 = np.zeros_like(x1)
        else:
            x1, x2, z, y1, y2, t = flat
        keep = y1 * y1 + y2 * y2 + t * t <= 1.0 + 1e-12
        return _env_of(x1[keep], x2[keep], z[keep], y1[keep], y2[keep], t[keep])

    def __repr__(self):
        return (f"WorkingBox(z=[{self.z_min:.6g}, {self.z_max:.6g}], "
                f"x={self.x_ranges})")


def _worst_point(env, idx, dimension):
    keys = ("x1", "z", "y1", "t") if dimension == 1 else PMC_VARS
    return {k: float(np.asarray(env[k]).reshape(-1)[idx]) for k in keys}


def check_monotone(H, box, samples=9):
    """Sample dH/dz over the box lattice; pass iff the sup is <= ~0.

    Returns a dict with `passed`, the signed `worst_value` (sup of the
    sampled height derivative) and the lattice point attaining it (lowest
    flat index on ties).
    """
    env = box.sample_lattice(samples)
    vals = H.d_z(**env)
    vals = np.broadcast_to(vals, env["z"].shape)
    idx = int(np.argmax(vals))
    worst = float(vals[idx])
    return {
        "passed": bool(worst <= MONOTONE_TOL),
        "worst_value": worst,
        "worst_point": _worst_point(env, idx, box.dimension),
        "samples": int(samples),
    }


def check_quasi_decreasing(D, box, samples=9):
    """Check a split prescription: H1 non-increasing in z, H2 z-free."""
    env = box.sample_lattice(samples)
    d1 = np.broadcast_to(D.H1._partial("z", env), env["z"].shape)
    idx = int(np.argmax(d1))
    worst = float(d1[idx])
    d2 = np.abs(np.broadcast_to(D.H2._partial("z", env), env["z"].shape))
    h2_free = bool(np.max(d2) <= MONOTONE_TOL)
    return {
        "passed": bool(worst <= MONOTONE_TOL) and h2_free,
        "worst_value": worst,
        "worst_point": _worst_point(env, idx, box.dimension),
        "h2_height_free": h2_free,
        "samples": int(samples),
    }


def graph_normal_env(grid, values):
    """Evaluation environment for a graph: base coords, height, unit normal."""
    pos = grid.node_positions()
    grads = node_gradients(grid, values)
    omega = np.sqrt(1.0 + sum(g * g for g in grads))
    env = {
        "x1": pos[0],
        "x2": pos[1] if grid.dimension == 2 else np.zeros(grid.shape),
        "z": values,
        "y1": -grads[0] / omega,
        "y2": -grads[1] / omega if grid.dimension == 2 else np.zeros(grid.shape),
        "t": 1.0 / omega,
    }
    return env, omega


def pmc_residual(grid, u, H, F=None, n=None, box=None):
    """Residual field of the prescribed-curvature equation at the graph of u.

    Product metric: mean_curvature_product(u) - H(x, u, -Du/omega, 1/omega);
    with a conformal factor `F` the curvature operator is the conformal one.
    Boundary nodes carry 0.  If a working box is supplied the height values
    must stay inside its z-range: leaving it is an error naming offending
    nodes, never a silent clamp.
    """
    from .grid import ScalarField

    if u.grid != grid:
        raise ValueError("field is not defined on the supplied grid")
    if n is None:
        n = grid.dimension
    if box is not None and not box.contains_values(u.values):
        bad = np.flatnonzero((u.values.reshape(-1) < box.z_min - 1e-12)
                             | (u.values.reshape(-1) > box.z_max + 1e-12))
        head = ", ".join(str(i) for i in bad[:5])
        raise ValueError(
            f"graph leaves the working box z-range [{box.z_min:.6g}, {box.z_max:.6g}] "
            f"at {bad.size} node(s) (flat indices {head}{', ...' if bad.size > 5 else ''})")
    env, _omega = graph_normal_env(grid, u.values)
    if F is None:
        base = mean_curvature_product_values(grid, u.values)
    else:
        from .geometry import conformal_mean_curvature_values

        base = conformal_mean_curvature_values(grid, u.values, F, n)
    res = base - H.eval(**env)
    res[grid.boundary_mask] = 0.0
    return ScalarField(grid, res)
