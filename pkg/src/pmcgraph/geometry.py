"""Conformal product metrics, warped-product reduction, and the graph
geometry fields (tilt, second fundamental form, stability residual).

The ambient metric is either the flat product or its conformal rescale by
e^{2f(x,r)}.  Curvature of a graph in the rescaled metric relates to the
product-metric curvature through a zeroth-order correction in the unit
normal, which is what `conformal_transform_pmc` bakes into a prescription
so that every solve runs against the product operator.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad

from .calculus import (
    face_gradients,
    graph_laplacian,
    mean_curvature_product_values,
    node_gradients,
    _centered_axis_diff,
    _div_values,
    _to_faces,
)
from .expr import eval_checked, parse_expr, rename_var, _add, _mul, _sub, _call
from .expr import Const, Var
from .grid import ScalarField, face_positions, face_shape
from .pmc import PMCFunction, graph_normal_env

__all__ = [
    "ConformalFactor",
    "WarpedProfile",
    "conformal_mean_curvature",
    "divergence_oracle",
    "conformal_transform_pmc",
    "warped_to_conformal",
    "theta_field",
    "second_fundamental_norm",
    "jacobi_residual",
]

FD_STEP = 1e-6
FACTOR_VARS = ("x1", "x2", "r")


class ConformalFactor:
    """Scale exponent f(x, r) of a conformal product metric e^{2f}(dx²+dr²).

    Carries evaluation plus the base-gradient and height-derivative of f.
    `derivative_mode` records whether those are analytic (symbolic, or
    caller-supplied closures) or centered finite differences.
    """

    def __init__(self, fn, d_base=None, d_r=None, derivative_mode="fd",
                 text=None, ast=None):
        self._fn = fn
        self._d_base = d_base  # tuple of closures or None
        self._d_r = d_r
        self.derivative_mode = derivative_mode
        self.text = text
        self.ast = ast

    @classmethod
    def from_expr(cls, text):
        ast = parse_expr(text, FACTOR_VARS)
        fn = lambda env: eval_checked(ast, env, label="conformal factor")
        d_base = tuple(
            (lambda node: lambda env: eval_checked(node, env, label="factor gradient"))(
                ast.diff(v))
            for v in ("x1", "x2"))
        dr_ast = ast.diff("r")
        d_r = lambda env: eval_checked(dr_ast, env, label="factor height derivative")
        return cls(fn, d_base, d_r, derivative_mode="analytic", text=text, ast=ast)

    @classmethod
    def from_callable(cls, f, d_base=None, d_r=None):
        """Wrap f(x1, x2, r); derivatives by central differences unless given."""
        fn = lambda env: f(env["x1"], env["x2"], env["r"])
        mode = "analytic" if (d_base is not None and d_r is not None) else "fd"
        db = None
        if d_base is not None:
            db = tuple((lambda g: lambda env: g(env["x1"], env["x2"], env["r"]))(g)
                       for g in d_base)
        dr = None
        if d_r is not None:
            dr = lambda env: d_r(env["x1"], env["x2"], env["r"])
        return cls(fn, db, dr, derivative_mode=mode)

    def _fd(self, var, env):
        hi = dict(env)
        lo = dict(env)
        hi[var] = np.asarray(env[var], dtype=float) + FD_STEP
        lo[var] = np.asarray(env[var], dtype=float) - FD_STEP
        return (self._fn(hi) - self._fn(lo)) / (2.0 * FD_STEP)

    def eval(self, x1, x2, r):
        return np.asarray(self._fn({"x1": x1, "x2": x2, "r": r}), dtype=float)

    def d_x(self, axis, x1, x2, r):
        env = {"x1": x1, "x2": x2, "r": r}
        if self._d_base is not None:
            return np.asarray(self._d_base[axis](env), dtype=float)
        return np.asarray(self._fd(("x1", "x2")[axis], env), dtype=float)

    def d_r(self, x1, x2, r):
        env = {"x1": x1, "x2": x2, "r": r}
        if self._d_r is not None:
            return np.asarray(self._d_r(env), dtype=float)
        return np.asarray(self._fd("r", env), dtype=float)

    def __repr__(self):
        src = f" {self.text!r}" if self.text else ""
        return f"ConformalFactor({self.derivative_mode}{src})"


# ---------------------------------------------------------------------------
# curvature in the conformal metric


def _factor_env(grid, values):
    pos = grid.node_positions()
    return {
        "x1": pos[0],
        "x2": pos[1] if grid.dimension == 2 else np.zeros(grid.shape),
        "r": values,
    }


def conformal_mean_curvature_values(grid, values, F, n):
    grads = node_gradients(grid, values)
    omega = np.sqrt(1.0 + sum(g * g for g in grads))
    env = _factor_env(grid, values)
    f = F.eval(**env)
    corr = F.d_r(**env)
    for ax in range(grid.dimension):
        corr = corr - F.d_x(ax, **env) * grads[ax]
    mcp = mean_curvature_product_values(grid, values)
    out = np.exp(-f) * (mcp + n * corr / omega)
    out[grid.boundary_mask] = 0.0
    return out


def conformal_mean_curvature(grid, u, F, n=None):
    """Mean curvature of the graph of u in the metric e^{2f}(flat product).

    Equals e^{-f} (H_product + n (f_r - <Df, Du>)/omega) at the graph, with
    all factor derivatives evaluated at (x, u(x)).  Boundary nodes carry 0.
    """
    if n is None:
        n = grid.dimension
    return ScalarField(grid, conformal_mean_curvature_values(grid, u.values, F, n))


def divergence_oracle(grid, u, F, n=None):
    """Independent curvature evaluation via the weighted-divergence identity.

    The conformal mean curvature equals e^{-(n+1)f} div(e^{nf} nu) for the
    unit product normal nu of the graph extended vertically.  Horizontal
    terms are assembled as face fluxes (factor evaluated at face midpoints),
    the vertical derivative analytically.  Agrees with
    `conformal_mean_curvature` up to discretization error only.
    """
    if n is None:
        n = grid.dimension
    values = u.values
    comps = []
    for ax in range(grid.dimension):
        g = face_gradients(grid, values, ax)
        omega_face = np.sqrt(1.0 + sum(c * c for c in g))
        u_face = _to_faces(values, ax, grid.topology[ax])
        fpos = face_positions(grid, ax)
        env = {
            "x1": fpos[0],
            "x2": fpos[1] if grid.dimension == 2 else np.zeros(face_shape(grid, ax)),
            "r": u_face,
        }
        W = np.exp(n * F.eval(**env)) * (-g[ax] / omega_face)
        comps.append(W)
    div_h = _div_values(grid, comps)

    grads = node_gradients(grid, values)
    omega = np.sqrt(1.0 + sum(g * g for g in grads))
    env = _factor_env(grid, values)
    f = F.eval(**env)
    # the face fluxes differentiate e^{nf(x, u(x))} along the graph, i.e.
    # they pick up f_r u_k nu^k = -f_r |Du|^2/omega on top of the fixed-
    # height derivative; compensating that together with the true vertical
    # term d_r(e^{nf} nu^r) leaves n f_r e^{nf} (1+|Du|^2)/omega below
    vertical = n * F.d_r(**env) * np.exp(n * f) * omega
    out = np.exp(-(n + 1) * f) * (div_h + vertical)
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


def conformal_transform_pmc(H, F, n):
    """Pull a conformal-metric prescription back to the product metric.

    A graph has curvature H(x, r, Y, t) in the e^{2f} metric exactly when
    its product curvature is

        H'(x, r, Y, t) = e^{f} H(x, r, Y, t) - n (<Df, Y> + f_r t),

    with factor derivatives at (x, r).  The height slot of the factor maps
    onto the prescription's z argument.  When both sides carry expression
    trees the transform is symbolic, so partials of H' stay exact.
    """
    n = int(n)
    if H.ast is not None and F.ast is not None:
        f_ast = rename_var(F.ast, "r", "z")
        d1 = rename_var(F.ast.diff("x1"), "r", "z")
        d2 = rename_var(F.ast.diff("x2"), "r", "z")
        fr = rename_var(F.ast.diff("r"), "r", "z")
        drift = _add(_add(_mul(d1, Var("y1")), _mul(d2, Var("y2"))),
                     _mul(fr, Var("t")))
        ast = _sub(_mul(_call("exp", (f_ast,)), H.ast), _mul(Const(float(n)), drift))
        text = None
        if H.text and F.text:
            text = f"exp({F.text})*({H.text}) - {n}*<D({F.text}),(Y,t)>"
        return PMCFunction.from_ast(ast, provenance="transformed", text=text,
                                    label="transformed curvature")

    def fn(env):
        fenv = {"x1": env["x1"], "x2": env["x2"], "r": env["z"]}
        drift = F.d_x(0, **fenv) * env["y1"] + F.d_x(1, **fenv) * env["y2"] \
            + F.d_r(**fenv) * env["t"]
        return np.exp(F.eval(**fenv)) * H._fn(env) - n * drift

    return PMCFunction(fn, provenance="transformed")


# ---------------------------------------------------------------------------
# warped products


class WarpedProfile:
    """Positive warping profile h(r) of the metric h(r)² dx² + dr².

    The height substitution ds = dr/h(r) turns that metric into the
    conformal form e^{2f}(dx² + ds²) with f = ln h, which is how the rest
    of the package consumes it.  `quad_tol` is the absolute tolerance
    handed to the adaptive quadrature of 1/h.
    """

    def __init__(self, h, h_prime=None, quad_tol=1e-12, text=None, ast=None):
        self._h = h
        self._h_prime = h_prime
        self.quad_tol = float(quad_tol)
        self.text = text
        self.ast = ast

    @classmethod
    def from_expr(cls, text, quad_tol=1e-12):
        ast = parse_expr(text, ("r",))
        h = lambda r: eval_checked(ast, {"r": r}, label="warp profile")
        d = ast.diff("r")
        hp = lambda r: eval_checked(d, {"r": r}, label="warp profile derivative")
        return cls(h, hp, quad_tol=quad_tol, text=text, ast=ast)

    def h(self, r):
        return np.asarray(self._h(r), dtype=float)

    def h_prime(self, r):
        if self._h_prime is not None:
            return np.asarray(self._h_prime(r), dtype=float)
        return np.asarray(
            (self._h(np.asarray(r, dtype=float) + FD_STEP)
             - self._h(np.asarray(r, dtype=float) - FD_STEP)) / (2 * FD_STEP),
            dtype=float)

    def __repr__(self):
        return f"WarpedProfile({self.text!r})" if self.text else "WarpedProfile(callable)"


BISECTION_TOL = 1e-10


def warped_to_conformal(P, interval):
    """Reparameterize a warped height into conformal form.

    For the profile h on [r_lo, r_hi] the substitution s(r) = ∫ dρ/h(ρ)
    turns the warped metric into e^{2f(s)}(dx² + ds²) with f(s) = ln h(r(s)).
    Returns (factor, (0, s(r_hi))); the factor's height derivative is
    f_s(s) = h'(r(s)), by the chain rule through ds = dr/h.

    The inverse r(s) is recovered by bisection to 1e-10; the forward map
    uses adaptive quadrature of 1/h, so each factor evaluation is exact to
    quadrature tolerance rather than to any grid resolution.
    """
    r_lo, r_hi = float(interval[0]), float(interval[1])
    if not r_lo < r_hi:
        raise ValueError(f"warped interval must be increasing, got ({r_lo}, {r_hi})")
    probe = np.linspace(r_lo, r_hi, 257)
    hv = P.h(probe)
    if not np.all(np.isfinite(hv)) or np.min(hv) <= 0.0:
        k = int(np.argmin(hv))
        raise ValueError(
            f"warp profile must be positive on the interval; h({probe[k]:.6g}) = {hv[k]:.6g}")

    def s_of_r(r):
        if r <= r_lo:
            return 0.0
        val, _err = quad(lambda rho: 1.0 / float(P.h(rho)), r_lo, r,
                         epsabs=P.quad_tol, epsrel=1e-13, limit=200)
        return val

    s_hi = s_of_r(r_hi)

    def r_of_s_scalar(s):
        if s < -1e-9 or s > s_hi + 1e-9:
            raise ValueError(
                f"height {s:.6g} outside the reparameterized range [0, {s_hi:.6g}]")
        s = min(max(s, 0.0), s_hi)
        lo, hi = r_lo, r_hi
        while hi - lo > BISECTION_TOL:
            mid = 0.5 * (lo + hi)
            if s_of_r(mid) < s:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def r_of_s(s):
        arr = np.asarray(s, dtype=float)
        flat = np.array([r_of_s_scalar(v) for v in np.atleast_1d(arr).reshape(-1)])
        return flat.reshape(arr.shape) if arr.shape else float(flat[0])

    fn = lambda env: np.log(P.h(r_of_s(env["r"])))
    d_base = (lambda env: np.zeros_like(np.asarray(env["r"], dtype=float)),
              lambda env: np.zeros_like(np.asarray(env["r"], dtype=float)))
    d_r = lambda env: P.h_prime(r_of_s(env["r"]))
    mode = "analytic" if P._h_prime is not None else "fd"
    factor = ConformalFactor(fn, d_base, d_r, derivative_mode=mode,
                             text=f"ln h(r(s)), h = {P.text}" if P.text else None)
    factor.r_of_s = r_of_s
    factor.s_of_r = s_of_r
    return factor, (0.0, s_hi)


# ---------------------------------------------------------------------------
# graph geometry fields


def theta_field(grid, u):
    """Vertical tilt of the upward unit normal: 1/omega, in (0, 1]."""
    grads = node_gradients(grid, u.values)
    omega = np.sqrt(1.0 + sum(g * g for g in grads))
    return ScalarField(grid, 1.0 / omega)


def _second_diff(values, axis, h, topology):
    out = np.zeros_like(values)
    if topology == "periodic":
        return (np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)) / (h * h)
    v = np.moveaxis(values, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
    return out


def second_fundamental_norm(grid, u):
    """Squared norm of the graph's second fundamental form, |A|².

    Centered second differences for the Hessian; the metric contractions
    are algebraic in the node gradient.  Boundary nodes carry 0.
    """
    values = u.values
    grads = node_gradients(grid, values)
    omega2 = 1.0 + sum(g * g for g in grads)
    if grid.dimension == 1:
        upp = _second_diff(values, 0, grid.spacing[0], grid.topology[0])
        out = upp * upp / omega2 ** 3
    else:
        h11 = _second_diff(values, 0, grid.spacing[0], grid.topology[0])
        h22 = _second_diff(values, 1, grid.spacing[1], grid.topology[1])
        d0 = _centered_axis_diff(values, 0, grid.spacing[0], grid.topology[0])
        h12 = _centered_axis_diff(d0, 1, grid.spacing[1], grid.topology[1])
        v1, v2 = grads
        g11 = 1.0 - v1 * v1 / omega2
        g22 = 1.0 - v2 * v2 / omega2
        g12 = -v1 * v2 / omega2
        # M = g^{-1} Hess, |A|^2 = tr(M M)/omega^2
        m11 = g11 * h11 + g12 * h12
        m12 = g11 * h12 + g12 * h22
        m21 = g12 * h11 + g22 * h12
        m22 = g12 * h12 + g22 * h22
        out = (m11 * m11 + 2.0 * m12 * m21 + m22 * m22) / omega2
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)


def jacobi_residual(grid, u, H):
    """Residual of the tilt in the graph's stability (Jacobi) equation.

    For a solved graph, Theta = 1/omega satisfies
    Delta_graph Theta + |A|^2 Theta = <Du, D eta>/omega^2 with
    eta(x) = H(x, u, -Du/omega, 1/omega), so this field's interior decay
    under refinement certifies the computed surface.  Boundary nodes 0.
    """
    theta = theta_field(grid, u)
    lap = graph_laplacian(u, theta)
    a2 = second_fundamental_norm(grid, u)
    env, omega = graph_normal_env(grid, u.values)
    eta = np.broadcast_to(H.eval(**env), grid.shape)
    grads_u = node_gradients(grid, u.values)
    grads_eta = node_gradients(grid, np.array(eta, dtype=float))
    inner = sum(gu * ge for gu, ge in zip(grads_u, grads_eta)) / (omega * omega)
    out = lap.values + a2.values * theta.values - inner
    out[grid.boundary_mask] = 0.0
    return ScalarField(grid, out)
