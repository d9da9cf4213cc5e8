"""Barrier verification and the graph-curvature solvers.

Two regimes share one inner engine.  When the prescription is non-increasing
in height the discrete problem is solved directly by damped Newton (the
diagonal shift -dF/dz >= 0 keeps the linearization nondegenerate).  Otherwise
the outer iteration cuts the prescription off outside the barrier range and
adds a penalty gamma*(z - anchor) large enough to restore monotonicity; each
sweep re-anchors at the previous iterate, which climbs monotonically from the
lower barrier to a fixed point of the original problem.

The Jacobian is assembled analytically in the same flux form as the residual:
per-face derivatives of g_along/omega scattered into the two adjacent node
rows, plus the node-local derivative of the prescription through the height
and the unit-normal components.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .calculus import (
    _face_slope_data,
    mean_curvature_product_values,
    node_gradients,
)
from .expr import Const, Var, _mul, _sub
from .grid import ScalarField, sup_norm
from .pmc import (
    PMCFunction,
    WorkingBox,
    check_monotone,
    check_quasi_decreasing,
    graph_normal_env,
    pmc_residual,
)

__all__ = [
    "BarrierPair",
    "SolveConfig",
    "SolveReport",
    "SolverFailure",
    "MonotonicityError",
    "check_barrier",
    "cutoff_profile",
    "gamma_for",
    "penalized_pmc",
    "solve_inner",
    "outer_iterate",
    "barriers_from_phi",
    "solve_quasi",
]

# hard abort threshold for comparison-principle violations; below it the
# violation is logged and tolerated as scheme noise
MONOTONE_ABORT = 1e-6
MONOTONE_SLACK = 1e-9


class SolverFailure(RuntimeError):
    """Solve did not reach its tolerance; carries the best iterate so far."""

    def __init__(self, message, best=None, residual_history=None, partial=None):
        super().__init__(message)
        self.best = best
        self.residual_history = list(residual_history or [])
        self.partial = partial


class MonotonicityError(SolverFailure):
    """An accepted sweep moved down by more than the abort threshold."""


class SolveConfig:
    """Knobs shared by the inner and outer solvers.

    gamma is "auto" (sampled-slope certificate with a 5% safety factor) or an
    explicit positive number; cutoff is an explicit (c1, c2) plateau override,
    otherwise the plateau is the barrier range padded by 10% of its span.
    box is an explicit working z-range; default is the barrier range padded
    by half its span.
    """

    def __init__(self, tol_inner=1e-10, tol_outer=1e-8, max_newton=50,
                 max_outer=200, armijo_c=1e-4, min_step=2.0 ** -20,
                 gamma="auto", samples=9, theta_threshold=1e-3,
                 allowance_constant=10.0, box=None, cutoff=None,
                 refine_check=True):
        if not (tol_inner > 0.0 and tol_outer > 0.0):
            raise ValueError("tolerances must be positive")
        if int(max_newton) < 1 or int(max_outer) < 1:
            raise ValueError("iteration caps must be at least 1")
        if not 0.0 < armijo_c < 1.0:
            raise ValueError("armijo constant must lie in (0, 1)")
        if gamma != "auto":
            gamma = float(gamma)
            if not gamma > 0.0:
                raise ValueError("explicit gamma must be positive")
        if box is not None:
            a, b = float(box[0]), float(box[1])
            if not a < b:
                raise ValueError(f"box z-range must be increasing, got ({a}, {b})")
            box = (a, b)
        if cutoff is not None:
            c1, c2 = float(cutoff[0]), float(cutoff[1])
            if not c1 < c2:
                raise ValueError(f"cutoff plateau must be increasing, got ({c1}, {c2})")
            cutoff = (c1, c2)
        self.tol_inner = float(tol_inner)
        self.tol_outer = float(tol_outer)
        self.max_newton = int(max_newton)
        self.max_outer = int(max_outer)
        self.armijo_c = float(armijo_c)
        self.min_step = float(min_step)
        self.gamma = gamma
        self.samples = int(samples)
        self.theta_threshold = float(theta_threshold)
        self.allowance_constant = float(allowance_constant)
        self.box = box
        self.cutoff = cutoff
        self.refine_check = bool(refine_check)


class BarrierPair:
    """Ordered sub/super-solution pair with shared boundary trace.

    u1 is the lower (sub) barrier, u0 the upper; psi supplies the dirichlet
    boundary values and must be bracketed by the barriers there.  Periodic
    grids carry no trace.
    """

    def __init__(self, u1, u0, psi=None):
        if u1.grid != u0.grid:
            raise ValueError("barriers live on different grids")
        grid = u1.grid
        gap = u0.values - u1.values
        if np.min(gap) < -1e-12:
            i = int(np.argmin(gap.reshape(-1)))
            raise ValueError(
                f"lower barrier exceeds the upper one (flat node {i}, "
                f"u1={u1.values.reshape(-1)[i]:.6g} > u0={u0.values.reshape(-1)[i]:.6g})")
        has_dirichlet = any(t == "dirichlet" for t in grid.topology)
        if has_dirichlet:
            if psi is None:
                raise ValueError("dirichlet grid needs a boundary trace psi")
            if psi.grid != grid:
                raise ValueError("boundary trace lives on a different grid")
            b = grid.boundary_mask
            if (np.max(u1.values[b] - psi.values[b]) > 1e-12
                    or np.max(psi.values[b] - u0.values[b]) > 1e-12):
                raise ValueError("barriers do not bracket the boundary trace")
        elif psi is not None:
            raise ValueError("fully periodic grid takes no boundary trace")
        self.grid = grid
        self.u1 = u1
        self.u0 = u0
        self.psi = psi

    def z_bounds(self):
        return float(np.min(self.u1.values)), float(np.max(self.u0.values))

    def span(self):
        lo, hi = self.z_bounds()
        return hi - lo


def check_barrier(B, H, F=None, allowance=10.0):
    """Verify the barrier inequalities against a prescription.

    The lower barrier must have residual <= tol everywhere in the interior
    (its curvature does not exceed the prescription) and the upper barrier
    residual >= -tol, with tol = 1e-8 + allowance*h^2 absorbing the scheme's
    truncation error.  Interior ordering u1 < u0 is a hard error.
    """
    grid = B.grid
    interior = ~grid.boundary_mask
    gap = (B.u0.values - B.u1.values)[interior]
    if gap.size and np.min(gap) <= 0.0:
        k = int(np.argmin(gap))
        idx = np.flatnonzero(interior.reshape(-1))[k]
        raise ValueError(
            f"barriers are not strictly ordered in the interior (flat node {idx})")
    h = grid.max_spacing()
    tol = 1e-8 + allowance * h * h
    r1 = pmc_residual(grid, B.u1, H, F=F).values
    r0 = pmc_residual(grid, B.u0, H, F=F).values
    worst_sub = float(np.max(r1[interior])) if gap.size else 0.0
    worst_super = float(np.min(r0[interior])) if gap.size else 0.0
    return {
        "passed": bool(worst_sub <= tol and worst_super >= -tol),
        "worst_sub": worst_sub,
        "worst_super": worst_super,
        "tol": tol,
        "allowance_constant": float(allowance),
    }


# ---------------------------------------------------------------------------
# height cutoff and penalty size


def _smoothstep(s):
    return s * s * s * (10.0 + s * (6.0 * s - 15.0))


def _smoothstep_prime(s):
    return 30.0 * s * s * (1.0 - s) * (1.0 - s)


class Cutoff:
    """C^2 plateau profile: 1 on [c1, c2], 0 outside the ramp feet.

    The ramps are quintic smoothsteps on [a', c1] and [c2, b'] where a', b'
    are the midpoints between the plateau and the working range ends, so the
    profile vanishes well inside the working range.
    """

    def __init__(self, c1, c2, a, b):
        c1, c2, a, b = float(c1), float(c2), float(a), float(b)
        if not (a < c1 < c2 < b):
            raise ValueError(
                f"cutoff needs a < c1 < c2 < b, got a={a:.6g} c1={c1:.6g} "
                f"c2={c2:.6g} b={b:.6g}")
        self.c1, self.c2, self.a, self.b = c1, c2, a, b
        self.a_ramp = 0.5 * (a + c1)
        self.b_ramp = 0.5 * (c2 + b)

    def h(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        out[(r >= self.c1) & (r <= self.c2)] = 1.0
        up = (r > self.a_ramp) & (r < self.c1)
        if np.any(up):
            out[up] = _smoothstep((r[up] - self.a_ramp) / (self.c1 - self.a_ramp))
        down = (r > self.c2) & (r < self.b_ramp)
        if np.any(down):
            out[down] = _smoothstep((self.b_ramp - r[down]) / (self.b_ramp - self.c2))
        return out if out.shape else float(out)

    def h_prime(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape)
        up = (r > self.a_ramp) & (r < self.c1)
        if np.any(up):
            w = self.c1 - self.a_ramp
            out[up] = _smoothstep_prime((r[up] - self.a_ramp) / w) / w
        down = (r > self.c2) & (r < self.b_ramp)
        if np.any(down):
            w = self.b_ramp - self.c2
            out[down] = -_smoothstep_prime((self.b_ramp - r[down]) / w) / w
        return out if out.shape else float(out)

    def describe(self):
        return {"c1": self.c1, "c2": self.c2, "a": self.a, "b": self.b,
                "a_ramp": self.a_ramp, "b_ramp": self.b_ramp}


def cutoff_profile(c1, c2, a, b):
    """Plateau profile h with analytic h'; see Cutoff."""
    return Cutoff(c1, c2, a, b)


class Gamma(float):
    """Penalty size with its sampling certificate attached."""

    def __new__(cls, value, sup_slope, worst_point, samples):
        obj = float.__new__(cls, value)
        obj.sup_slope = float(sup_slope)
        obj.worst_point = worst_point
        obj.samples = int(samples)
        return obj

    def certificate(self):
        return {"gamma": float(self), "sup_slope": self.sup_slope,
                "worst_point": self.worst_point, "samples": self.samples}


def gamma_for(H, h, box, samples=9):
    """Penalty size making the cut-off prescription decrease in height.

    Samples d/dz of h(z)*H over the box lattice and returns
    1 + 1.05*max(0, sup) as a float carrying the worst sample point, so the
    certificate -d(hH)/dz + gamma >= 1 holds at every sampled point by
    construction.
    """
    env = box.sample_lattice(samples)
    Hv = np.broadcast_to(H.eval(**env), env["z"].shape)
    dz = np.broadcast_to(H._partial("z", env), env["z"].shape)
    if h is None:
        slope = dz.copy()
    else:
        slope = h.h_prime(env["z"]) * Hv + h.h(env["z"]) * dz
    if not np.all(np.isfinite(slope)):
        k = int(np.flatnonzero(~np.isfinite(slope))[0])
        raise ValueError(
            f"height slope of the prescription is not finite at z={env['z'][k]:.6g}")
    k = int(np.argmax(slope))
    sup = float(slope[k])
    from .pmc import _worst_point

    worst = _worst_point(env, k, box.dimension)
    return Gamma(1.0 + 1.05 * max(0.0, sup), sup, worst, samples)


def penalized_pmc(H, cutoff, gamma):
    """Cut-off, height-penalized prescription h(z)*H - gamma*z.

    The anchor part gamma*u_prev enters the inner solve as a nodal source,
    not here, so this object's height slope is h'H + hH_z - gamma <= -1 by
    the gamma certificate, uniformly on the working box.
    """
    g = float(gamma)

    def fn(env):
        return cutoff.h(env["z"]) * H._fn(env) - g * np.asarray(env["z"], dtype=float)

    partials = {
        "z": lambda env: (cutoff.h_prime(env["z"]) * H._fn(env)
                          + cutoff.h(env["z"]) * H._partial("z", env) - g),
    }
    for var in ("x1", "x2", "y1", "y2", "t"):
        partials[var] = (lambda v: lambda env: cutoff.h(env["z"])
                         * H._partial(v, env))(var)
    return PMCFunction(fn, partials, provenance="penalized")


# ---------------------------------------------------------------------------
# Jacobian assembly


def _node_diff_stencil(grid, axis):
    """Columns/weights of the node-gradient operator along one axis.

    Returns (cols, wts) shaped (N, 3): centered rows carry a zero-weight
    third slot so every node has a uniform entry count.
    """
    shape = grid.shape
    N = int(np.prod(shape))
    h = grid.spacing[axis]
    idx = np.arange(N).reshape(shape)
    if grid.topology[axis] == "periodic":
        cols = np.empty((N, 3), dtype=np.int64)
        wts = np.zeros((N, 3))
        cols[:, 0] = np.roll(idx, 1, axis).reshape(-1)
        wts[:, 0] = -0.5 / h
        cols[:, 1] = np.roll(idx, -1, axis).reshape(-1)
        wts[:, 1] = 0.5 / h
        cols[:, 2] = np.arange(N)
        return cols, wts
    iv = np.moveaxis(idx, axis, 0)
    cv = np.empty(iv.shape + (3,), dtype=np.int64)
    wv = np.zeros(iv.shape + (3,))
    cv[1:-1, ..., 0] = iv[:-2]
    wv[1:-1, ..., 0] = -0.5 / h
    cv[1:-1, ..., 1] = iv[2:]
    wv[1:-1, ..., 1] = 0.5 / h
    cv[1:-1, ..., 2] = iv[1:-1]
    cv[0, ..., 0] = iv[0]
    wv[0, ..., 0] = -1.5 / h
    cv[0, ..., 1] = iv[1]
    wv[0, ..., 1] = 2.0 / h
    cv[0, ..., 2] = iv[2]
    wv[0, ..., 2] = -0.5 / h
    cv[-1, ..., 0] = iv[-1]
    wv[-1, ..., 0] = 1.5 / h
    cv[-1, ..., 1] = iv[-2]
    wv[-1, ..., 1] = -2.0 / h
    cv[-1, ..., 2] = iv[-3]
    wv[-1, ..., 2] = 0.5 / h
    cols = np.moveaxis(cv, 0, axis).reshape(N, 3)
    wts = np.moveaxis(wv, 0, axis).reshape(N, 3)
    return cols, wts


def _face_endpoints(grid, axis):
    """Flat node indices (L, R) of each face along `axis`, face-ordered."""
    shape = grid.shape
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    if grid.topology[axis] == "periodic":
        return idx.reshape(-1), np.roll(idx, -1, axis).reshape(-1)
    lo = [slice(None)] * grid.dimension
    hi = [slice(None)] * grid.dimension
    lo[axis] = slice(0, shape[axis] - 1)
    hi[axis] = slice(1, shape[axis])
    return idx[tuple(lo)].reshape(-1), idx[tuple(hi)].reshape(-1)


def assemble_jacobian(grid, values, F):
    """Sparse derivative of the discrete residual mcp(u) - F(graph env of u).

    Full N x N matrix over all nodes; dirichlet rows/columns are sliced off
    by the caller.  Mirrors the flux-form residual exactly: the same face
    gradients, the same endpoint-averaged transverse components, the same
    node stencils behind the normal arguments.
    """
    dim = grid.dimension
    N = int(np.prod(grid.shape))
    stencils = [_node_diff_stencil(grid, c) for c in range(dim)]
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for ax in range(dim):
        comps, omega = _face_slope_data(grid, values, ax)
        om3 = omega ** 3
        ga = comps[ax]
        tsq = sum(comps[c] * comps[c] for c in range(dim) if c != ax)
        dP_dga = ((1.0 + tsq) / om3).reshape(-1)
        Lf, Rf = _face_endpoints(grid, ax)
        h = grid.spacing[ax]
        inv = 1.0 / h
        # residual rows: mcp_i = (P_leftface - P_rightface)/h, so the face
        # adds +P/h to its right node and -P/h to its left node
        w_L = -dP_dga * inv
        w_R = dP_dga * inv
        put(Rf, Lf, inv * w_L)
        put(Rf, Rf, inv * w_R)
        put(Lf, Lf, -inv * w_L)
        put(Lf, Rf, -inv * w_R)
        for c in range(dim):
            if c == ax:
                continue
            B = (-ga * comps[c] / om3).reshape(-1)
            st_cols, st_wts = stencils[c]
            for Ef in (Lf, Rf):
                ec = st_cols[Ef]
                ew = st_wts[Ef]
                for k in range(3):
                    w = 0.5 * B * ew[:, k]
                    put(Rf, ec[:, k], inv * w)
                    put(Lf, ec[:, k], -inv * w)

    env, omega_node = graph_normal_env(grid, values)
    grads = node_gradients(grid, values)
    om3 = omega_node ** 3
    all_nodes = np.arange(N)
    Fz = np.broadcast_to(np.asarray(F._partial("z", env), dtype=float),
                         grid.shape).reshape(-1)
    put(all_nodes, all_nodes, -Fz)
    Fy = [np.broadcast_to(np.asarray(F._partial(("y1", "y2")[m], env), dtype=float),
                          grid.shape) for m in range(dim)]
    Ft = np.broadcast_to(np.asarray(F._partial("t", env), dtype=float), grid.shape)
    for l in range(dim):
        mult = Ft * (-grads[l] / om3)
        for m in range(dim):
            dY = grads[m] * grads[l] / om3
            if m == l:
                dY = dY - 1.0 / omega_node
            mult = mult + Fy[m] * dY
        mult = (-mult).reshape(-1)
        st_cols, st_wts = stencils[l]
        for k in range(3):
            put(all_nodes, st_cols[:, k], mult * st_wts[:, k])

    J = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N))
    return J.tocsr()


# ---------------------------------------------------------------------------
# inner solve


def _residual_values(grid, values, F, source):
    out = mean_curvature_product_values(grid, values)
    env, _ = graph_normal_env(grid, values)
    out = out - np.asarray(F._fn(env), dtype=float)
    if source is not None:
        out = out - source
    return out


def solve_inner(grid, F, psi, init, cfg=None, box=None, source=None):
    """Damped Newton on the discrete prescribed-curvature system.

    F must be non-increasing in height; when a working box is supplied that
    is verified by sampling and a failure refuses to run.  psi fixes the
    dirichlet boundary (None on fully periodic grids); `source` is an
    optional nodal field added to the prescription (the penalty anchor).
    On a fully periodic grid with a height-free prescription the mean of the
    iterate is pinned through a bordered linear system.

    Returns (solution field, report dict).  Raises SolverFailure with the
    best iterate when the step budget runs out; falls back to pseudo-time
    stepping when the line search stagnates.
    """
    if cfg is None:
        cfg = SolveConfig()
    if box is not None:
        mono = check_monotone(F, box, cfg.samples)
        if not mono["passed"]:
            raise ValueError(
                "prescription increases with height (sampled slope "
                f"{mono['worst_value']:.6g} at {mono['worst_point']}); "
                "the monotone solver refuses to run")
    has_dirichlet = any(t == "dirichlet" for t in grid.topology)
    if has_dirichlet and psi is None:
        raise ValueError("dirichlet grid needs boundary data")
    if init.grid != grid:
        raise ValueError("initial iterate is not defined on the supplied grid")

    u = init.values.astype(float).copy()
    if has_dirichlet:
        u[grid.boundary_mask] = psi.values[grid.boundary_mask]
    unknown = np.flatnonzero(~grid.boundary_mask.reshape(-1))
    src = None
    if source is not None:
        src = np.broadcast_to(np.asarray(source, dtype=float), grid.shape)

    def residual(vals):
        return _residual_values(grid, vals, F, src).reshape(-1)[unknown]

    env0, _ = graph_normal_env(grid, u)
    dz0 = np.max(np.abs(np.asarray(F._partial("z", env0), dtype=float)))
    bordered = grid.is_fully_periodic() and dz0 <= 1e-13

    R = residual(u)
    res_sup = float(np.max(np.abs(R))) if R.size else 0.0
    history = [res_sup]
    newton_steps = 0
    ptc_steps = 0
    ptc_dt = None

    while res_sup > cfg.tol_inner:
        if newton_steps + ptc_steps >= cfg.max_newton:
            raise SolverFailure(
                f"inner solve exhausted {cfg.max_newton} steps "
                f"(residual {res_sup:.3e}, tolerance {cfg.tol_inner:.3e})",
                best=ScalarField(grid, u), residual_history=history)
        J = assemble_jacobian(grid, u, F)[unknown][:, unknown]
        if ptc_dt is not None:
            J = J + sp.identity(unknown.size, format="csr") / ptc_dt
        if bordered:
            n = unknown.size
            one = np.ones((n, 1))
            Jb = sp.bmat([[J, one], [one.T, None]], format="csc")
            delta = spsolve(Jb, np.concatenate([-R, [0.0]]))[:n]
        else:
            delta = spsolve(J.tocsc(), -R)
        if not np.all(np.isfinite(delta)):
            raise SolverFailure(
                "linear solve produced a non-finite step (singular linearization)",
                best=ScalarField(grid, u), residual_history=history)

        if ptc_dt is not None:
            # pseudo-transient phase: accept the damped implicit-Euler step,
            # grow the pseudo step as the residual drops
            u_try = u.copy()
            u_try.reshape(-1)[unknown] += delta
            try:
                R_try = residual(u_try)
            except ValueError:
                ptc_dt = max(ptc_dt * 0.25, 1e-8)
                ptc_steps += 1
                continue
            new_sup = float(np.max(np.abs(R_try)))
            if np.isfinite(new_sup) and new_sup <= res_sup * 1.2:
                phi_old = np.linalg.norm(R)
                phi_new = np.linalg.norm(R_try)
                u, R, res_sup = u_try, R_try, new_sup
                ptc_dt = min(ptc_dt * max(phi_old / max(phi_new, 1e-300), 0.5), 1e12)
            else:
                ptc_dt = max(ptc_dt * 0.25, 1e-8)
            ptc_steps += 1
            history.append(res_sup)
            continue

        phi0 = np.linalg.norm(R)
        s = 1.0
        accepted = False
        while s >= cfg.min_step:
            u_try = u.copy()
            u_try.reshape(-1)[unknown] += s * delta
            try:
                R_try = residual(u_try)
            except ValueError:
                s *= 0.5
                continue
            if np.all(np.isfinite(R_try)) and (
                    np.linalg.norm(R_try) <= (1.0 - cfg.armijo_c * s) * phi0):
                accepted = True
                break
            s *= 0.5
        if accepted:
            u, R = u_try, R_try
            res_sup = float(np.max(np.abs(R)))
            newton_steps += 1
            history.append(res_sup)
        else:
            # stagnation: engage the parabolic relaxation fallback
            ptc_dt = 1.0

    report = {
        "newton_steps": newton_steps,
        "ptc_steps": ptc_steps,
        "residual_sup": res_sup,
        "residual_history": history,
        "bordered": bool(bordered),
        "converged": True,
    }
    return ScalarField(grid, u), report


# ---------------------------------------------------------------------------
# outer iteration


class SolveReport:
    """Everything observable about one solve, JSON-ready via to_dict()."""

    _FIELDS = (
        "converged", "mode", "gamma", "gamma_certificate", "cutoff",
        "outer_count", "inner_newton_counts", "residual_history",
        "step_history", "monotonicity_violations", "confinement_violations",
        "final_residual", "consistency_bound", "consistency_ok", "min_theta",
        "sup_abs_u", "sup_abs_curvature", "barrier_check", "monotone_check",
        "box", "grid",
    )

    def __init__(self, **kw):
        for name in self._FIELDS:
            setattr(self, name, kw.pop(name))
        for name, value in kw.items():  # quasi extensions
            setattr(self, name, value)
        self._extra = tuple(kw)

    def to_dict(self):
        out = {name: getattr(self, name) for name in self._FIELDS}
        for name in self._extra:
            out[name] = getattr(self, name)
        return out


def _grid_meta(grid):
    return {
        "dimension": grid.dimension,
        "shape": list(grid.shape),
        "lengths": list(grid.lengths),
        "topology": list(grid.topology),
        "origin": list(grid.origin),
    }


def _default_box(B, cfg):
    zmin, zmax = B.z_bounds()
    span = zmax - zmin
    if span <= 0.0:
        span = 1.0
    if cfg.box is not None:
        a, b = cfg.box
        if not (a < zmin and zmax < b):
            raise ValueError(
                f"barrier range [{zmin:.6g}, {zmax:.6g}] must lie strictly "
                f"inside the working z-range ({a:.6g}, {b:.6g})")
        return WorkingBox.from_grid(B.grid, (a, b))
    return WorkingBox.from_grid(B.grid, (zmin - 0.5 * span, zmax + 0.5 * span))


def outer_iterate(H, B, cfg=None):
    """Solve the prescribed-curvature problem between the barriers.

    Monotone prescriptions go straight to the inner Newton solve.  Otherwise
    each sweep solves the cut-off penalized problem anchored at the previous
    iterate, starting from the lower barrier; the anchor sequence increases
    and the step size contracts at rate about gamma/(gamma+1).  Accepted
    sweeps must not move down or leave the barrier slab by more than 1e-6
    (1e-9 is tolerated and logged as scheme noise).
    """
    if cfg is None:
        cfg = SolveConfig()
    grid = B.grid
    box = _default_box(B, cfg)
    barrier_check = check_barrier(B, H, allowance=cfg.allowance_constant)
    if not barrier_check["passed"]:
        raise ValueError(
            "barrier check failed (worst sub-solution residual "
            f"{barrier_check['worst_sub']:.3e}, worst super-solution residual "
            f"{barrier_check['worst_super']:.3e}, tolerance {barrier_check['tol']:.3e})")
    mono = check_monotone(H, box, cfg.samples)

    if mono["passed"]:
        mode = "direct"
        gamma_eff = 0.0
        gamma_cert = None
        cut = None
        F_core = H
    else:
        mode = "penalized"
        zmin, zmax = B.z_bounds()
        span = max(zmax - zmin, 1e-12)
        if cfg.cutoff is not None:
            c1, c2 = cfg.cutoff
        else:
            c1, c2 = zmin - 0.1 * span, zmax + 0.1 * span
        cut = cutoff_profile(c1, c2, box.z_min, box.z_max)
        if cfg.gamma == "auto":
            gm = gamma_for(H, cut, box, cfg.samples)
            gamma_eff = float(gm)
            gamma_cert = gm.certificate()
        else:
            gamma_eff = float(cfg.gamma)
            gamma_cert = None
        F_core = penalized_pmc(H, cut, gamma_eff)

    interior = ~grid.boundary_mask
    u_prev = ScalarField(grid, B.u1.values.copy())
    # Newton seed for the first sweep.  The sweeps anchor at the lower
    # barrier, but seeding Newton with it leaves a trace mismatch at the
    # boundary ring once the solve pins boundary nodes to psi — an
    # O((psi - u1)/h^2) shock that saturates the flux derivatives on steep
    # graphs at fine spacings.  The inner problems are height-monotone, so
    # their solutions are seed-independent: start from the trace clipped
    # into the barrier slab instead.  Later sweeps seed from the previous
    # output, whose trace already matches.
    if B.psi is not None:
        seed = ScalarField(
            grid, np.clip(B.psi.values, B.u1.values, B.u0.values))
    else:
        seed = u_prev
    inner_counts = []
    residual_history = []
    step_history = []
    mono_viol = []
    conf_viol = []
    converged = False
    step = np.inf

    for m in range(cfg.max_outer):
        source = None if mode == "direct" else gamma_eff * u_prev.values
        try:
            u_next, irep = solve_inner(grid, F_core, B.psi,
                                       seed if m == 0 else u_prev, cfg,
                                       source=source)
        except SolverFailure as exc:
            exc.partial = {
                "mode": mode,
                "gamma": gamma_eff,
                "outer_count": m,
                "residual_history": residual_history + exc.residual_history,
                "step_history": step_history,
            }
            raise
        step = sup_norm(u_next, u_prev)
        diff = (u_next.values - u_prev.values)[interior]
        viol = max(0.0, -float(np.min(diff))) if diff.size else 0.0
        conf = max(
            float(np.max(B.u1.values - u_next.values)),
            float(np.max(u_next.values - B.u0.values)),
            0.0,
        )
        inner_counts.append(irep["newton_steps"] + irep["ptc_steps"])
        residual_history.append(irep["residual_sup"])
        step_history.append(float(step))
        mono_viol.append(viol)
        conf_viol.append(conf)
        if viol > MONOTONE_ABORT:
            raise MonotonicityError(
                f"outer sweep {m + 1} moved down by {viol:.3e} (> {MONOTONE_ABORT:g}); "
                "the discretization is too coarse or the penalty too small",
                best=u_next, residual_history=residual_history)
        if conf > MONOTONE_ABORT:
            raise MonotonicityError(
                f"outer sweep {m + 1} left the barrier slab by {conf:.3e}",
                best=u_next, residual_history=residual_history)
        u_prev = u_next
        if step <= cfg.tol_outer:
            converged = True
            break

    if not converged:
        rate = (step_history[-1] / step_history[-2]
                if len(step_history) > 1 and step_history[-2] > 0 else float("nan"))
        raise SolverFailure(
            f"outer iteration did not converge in {cfg.max_outer} sweeps "
            f"(last step {step:.3e}, contraction estimate {rate:.3f})",
            best=u_prev, residual_history=residual_history,
            partial={"mode": mode, "gamma": gamma_eff,
                     "outer_count": len(step_history),
                     "residual_history": residual_history,
                     "step_history": step_history})

    v = u_prev
    final = pmc_residual(grid, v, H, box=box)
    final_residual = float(np.max(np.abs(final.values)))
    bound = cfg.tol_inner + gamma_eff * max(step_history[-1], 0.0)
    grads = node_gradients(grid, v.values)
    theta = 1.0 / np.sqrt(1.0 + sum(g * g for g in grads))
    report = SolveReport(
        converged=True,
        mode=mode,
        gamma=gamma_eff,
        gamma_certificate=gamma_cert,
        cutoff=cut.describe() if cut is not None else None,
        outer_count=len(step_history),
        inner_newton_counts=inner_counts,
        residual_history=residual_history,
        step_history=step_history,
        monotonicity_violations=mono_viol,
        confinement_violations=conf_viol,
        final_residual=final_residual,
        consistency_bound=bound,
        consistency_ok=bool(final_residual <= bound),
        min_theta=float(np.min(theta)),
        sup_abs_u=float(np.max(np.abs(v.values))),
        sup_abs_curvature=float(np.max(np.abs(
            mean_curvature_product_values(grid, v.values)))),
        barrier_check=barrier_check,
        monotone_check=mono,
        box={"z_min": box.z_min, "z_max": box.z_max},
        grid=_grid_meta(grid),
    )
    return v, report


# ---------------------------------------------------------------------------
# barrier construction and the quasi-decreasing frontend


def _with_constant_tilt_term(Fbase, A):
    """Prescription Fbase - A*t, symbolic when possible."""
    if Fbase.ast is not None:
        ast = _sub(Fbase.ast, _mul(Const(float(A)), Var("t")))
        return PMCFunction.from_ast(ast, provenance="expression")
    partials = dict()

    def fn(env):
        return Fbase._fn(env) - float(A) * np.asarray(env["t"], dtype=float)

    for var in ("x1", "x2", "z", "y1", "y2"):
        partials[var] = (lambda v: lambda env: Fbase._partial(v, env))(var)
    partials["t"] = lambda env: Fbase._partial("t", env) - float(A)
    return PMCFunction(fn, partials, provenance="callable")


def barriers_from_phi(grid, Fbase, phi, psi, cfg=None, box=None):
    """Barriers for a prescription perturbed by a bounded term.

    Solves the two auxiliary problems with the perturbation replaced by the
    constant tilt terms -alpha*t and +alpha*t, where alpha is 1.05 times the
    sampled bound of phi over the working box.  The sub-barrier comes from
    -alpha (curvature pushed down), the super-barrier from +alpha, both with
    trace psi.  Fbase must be height-free; dirichlet grids only.
    """
    if cfg is None:
        cfg = SolveConfig()
    if not all(t == "dirichlet" for t in grid.topology):
        raise ValueError("barrier construction needs a dirichlet grid")
    if box is None:
        z0, z1 = float(np.min(psi.values)), float(np.max(psi.values))
        box = WorkingBox.from_grid(grid, (z0 - 1.0, z1 + 1.0))
    env = box.sample_lattice(cfg.samples)
    dz = np.max(np.abs(np.broadcast_to(Fbase._partial("z", env), env["z"].shape)))
    if dz > 1e-12:
        raise ValueError(
            f"base prescription depends on height (sampled slope {dz:.3e}); "
            "the two-constant construction needs a height-free base")
    alpha = 1.05 * float(np.max(np.abs(np.broadcast_to(
        phi.eval(**env), env["z"].shape))))

    if alpha == 0.0:
        u, _ = solve_inner(grid, Fbase, psi, psi, cfg)
        return BarrierPair(u, ScalarField(grid, u.values.copy()), psi)

    u1, _ = solve_inner(grid, _with_constant_tilt_term(Fbase, alpha), psi, psi, cfg)
    u0, _ = solve_inner(grid, _with_constant_tilt_term(Fbase, -alpha), psi, psi, cfg)
    if np.min(u0.values - u1.values) < -1e-12:
        k = int(np.argmin((u0.values - u1.values).reshape(-1)))
        raise ValueError(
            f"auxiliary solutions are not ordered (flat node {k}); "
            "the base problem is inconsistent with the perturbation bound")
    return BarrierPair(u1, u0, psi)


def solve_quasi(D, B, cfg=None):
    """Solve for a split prescription and certify the result is a graph.

    Runs the outer iteration on the composite H1 + t*H2 (the split's height
    monotonicity makes it take the direct path), then attaches the tilt
    certificate: min Theta, the stability-equation residual, the graphical
    flag, and a one-halving refinement comparison of min Theta.
    """
    from .geometry import jacobi_residual
    from .grid import refine_field, refine_grid

    if cfg is None:
        cfg = SolveConfig()
    box = _default_box(B, cfg)
    qcheck = check_quasi_decreasing(D, box, cfg.samples)
    if not qcheck["passed"]:
        raise ValueError(
            "decomposition is not quasi-decreasing (sampled height slope "
            f"{qcheck['worst_value']:.6g} at {qcheck['worst_point']}"
            + ("" if qcheck["h2_height_free"] else "; bounded part depends on height")
            + ")")
    H = D.composite()
    v, report = outer_iterate(H, B, cfg)
    grid = B.grid
    jac = jacobi_residual(grid, v, H)
    report.quasi_check = qcheck
    report.theta_threshold = cfg.theta_threshold
    report.graphical = bool(report.min_theta >= cfg.theta_threshold)
    report.jacobi_sup = float(np.max(np.abs(jac.values)))
    report._extra = report._extra + (
        "quasi_check", "theta_threshold", "graphical", "jacobi_sup", "refinement")

    if cfg.refine_check:
        fine = refine_grid(grid)
        fine_pair = BarrierPair(
            refine_field(B.u1, fine), refine_field(B.u0, fine),
            refine_field(B.psi, fine) if B.psi is not None else None)
        fine_cfg = SolveConfig(
            tol_inner=cfg.tol_inner, tol_outer=cfg.tol_outer,
            max_newton=cfg.max_newton, max_outer=cfg.max_outer,
            armijo_c=cfg.armijo_c, min_step=cfg.min_step, gamma=cfg.gamma,
            samples=cfg.samples, theta_threshold=cfg.theta_threshold,
            allowance_constant=cfg.allowance_constant, box=cfg.box,
            cutoff=cfg.cutoff, refine_check=False)
        try:
            _, fine_report = outer_iterate(H, fine_pair, fine_cfg)
        except (ValueError, SolverFailure) as exc:
            # refined non-flat barriers can fail their own residual check;
            # report the attempt rather than abort the whole solve
            report.refinement = {"min_theta_coarse": report.min_theta,
                                 "error": str(exc), "stable": False}
        else:
            coarse = report.min_theta
            change = abs(fine_report.min_theta - coarse) / max(abs(coarse), 1e-300)
            report.refinement = {
                "min_theta_coarse": coarse,
                "min_theta_fine": fine_report.min_theta,
                "relative_change": change,
                "stable": bool(change <= 0.2),
            }
    else:
        report.refinement = None
    return v, report
