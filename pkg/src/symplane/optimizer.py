"""Bound-constrained derivative-free minimization by quadratic interpolation.

The method keeps an interpolation set of ``2n + 1`` points, fits a quadratic
surrogate through them (minimum-norm coefficients when underdetermined),
minimizes the surrogate inside the intersection of a trust region and the
bounds, and accepts or rejects the step by comparing actual to predicted
reduction.  Rejected steps halve the trust radius; good full steps double it.
The replaced interpolation point is the one with the largest Lagrange-style
weight at the new point, which keeps the set well poised.  Everything is
deterministic for a given starting point.

Parameters are scaled internally so each bound interval maps to [0, 1]; the
``step_tol`` and ``initial_radius`` settings refer to that normalized space.
Evaluated points always satisfy the bounds exactly, including exact equality
when a bound is active.  An objective that raises or returns a non-finite
value has that point rejected (treated as +inf) and the radius shrunk.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

TERM_MAX_ITERATIONS = "max_iterations"
TERM_STEP_TOLERANCE = "step_tolerance"
TERM_VALUE_TOLERANCE = "value_tolerance"


class ObjectiveError(RuntimeError):
    """Raise from an objective to mark a point as infeasible."""


@dataclass(frozen=True)
class Bounds:
    """Componentwise box ``lower <= x <= upper`` with positive widths."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).copy()
        hi = np.asarray(self.upper, dtype=np.float64).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be two equally sized vectors")
        if np.any(hi <= lo):
            raise ValueError("every upper bound must exceed its lower bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 100
    step_tol: float = 1e-4
    value_tol: float = 1e-10
    initial_radius: float = 0.1
    seed: int = 0  # recorded for provenance; the algorithm is deterministic


@dataclass
class OptimizerTrace:
    """Evaluation history: one row per objective call, in call order."""

    rows: list = field(default_factory=list)  # (iteration, x tuple, value)
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    termination: str = TERM_MAX_ITERATIONS

    def record(self, k: int, x: np.ndarray, f: float) -> None:
        self.rows.append((k, tuple(float(v) for v in x), float(f)))

    def write_csv(self, path) -> None:
        n = len(self.rows[0][1]) if self.rows else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration"] + [f"x{i}" for i in range(n)] + ["value"])
            for k, x, f in self.rows:
                w.writerow([k] + [repr(v) for v in x] + [repr(f)])


def _monomials(s: np.ndarray) -> np.ndarray:
    """Quadratic monomial basis [1, s_i, s_i^2 / 2, s_i s_j (i < j)]."""
    n = s.shape[-1]
    cols = [np.ones(s.shape[:-1])]
    for i in range(n):
        cols.append(s[..., i])
    for i in range(n):
        cols.append(0.5 * s[..., i] ** 2)
    for i in range(n):
        for j in range(i + 1, n):
            cols.append(s[..., i] * s[..., j])
    return np.stack(cols, axis=-1)


def _model_from_coeffs(c: np.ndarray, n: int):
    g = c[1 : n + 1].copy()
    H = np.zeros((n, n))
    H[np.diag_indices(n)] = c[n + 1 : 2 * n + 1]
    k = 2 * n + 1
    for i in range(n):
        for j in range(i + 1, n):
            H[i, j] = H[j, i] = c[k]
            k += 1
    return g, H


def _coeffs_from_model(c0: float, g: np.ndarray, H: np.ndarray) -> np.ndarray:
    n = g.size
    c = [c0] + list(g) + list(np.diag(H))
    for i in range(n):
        for j in range(i + 1, n):
            c.append(H[i, j])
    return np.array(c)


def _transport_coeffs(c: np.ndarray, n: int, shift: np.ndarray, ratio: float) -> np.ndarray:
    """Re-express a quadratic in a frame moved by ``shift`` and rescaled.

    If the old frame maps point x to s and the new frame maps it to d, then
    ``s = shift + ratio * d``; the returned coefficients describe the same
    quadratic as a function of d.
    """
    c0 = c[0]
    g, H = _model_from_coeffs(c, n)
    c0_new = c0 + float(g @ shift) + 0.5 * float(shift @ H @ shift)
    g_new = ratio * (g + H @ shift)
    H_new = (ratio * ratio) * H
    return _coeffs_from_model(c0_new, g_new, H_new)


def _least_change_fit(A: np.ndarray, vals: np.ndarray, prior: np.ndarray, n: int) -> np.ndarray:
    """Interpolating quadratic closest to ``prior`` in its curvature part.

    Solves ``min ||c_quad - prior_quad||^2  s.t.  A c = vals`` through the
    KKT system, leaving the constant and linear coefficients free so the
    interpolation conditions determine the local gradient exactly; only the
    second-order terms inherit from the previous model.
    """
    q = A.shape[1]
    m = A.shape[0]
    w = np.full(q, 1e-8)
    w[n + 1 :] = 1.0
    K = np.zeros((q + m, q + m))
    K[:q, :q] = np.diag(w)
    K[:q, q:] = A.T
    K[q:, :q] = A
    rhs = np.concatenate([w * prior, vals])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:q]


def _minimize_quadratic_box(g, H, lo, hi, sweeps: int = 20) -> np.ndarray:
    """Approximately minimize ``g.s + s'Hs/2`` over the box [lo, hi].

    A safeguarded Cauchy step followed by cyclic coordinate descent; each
    coordinate update is the exact one-dimensional minimizer clipped to the
    box, so the model value never increases.  Returns the chosen point.
    """
    n = g.size
    s = np.zeros(n)

    def qval(v):
        return float(g @ v + 0.5 * v @ H @ v)

    d = -g
    if np.any(d != 0.0):
        # largest alpha keeping s = alpha * d inside the box
        with np.errstate(divide="ignore", invalid="ignore"):
            steps = np.where(d > 0, hi / d, np.where(d < 0, lo / d, np.inf))
        alpha_max = float(np.min(steps))
        curv = float(d @ H @ d)
        gd = float(g @ d)
        alpha = alpha_max if curv <= 0 else min(alpha_max, -gd / curv)
        if alpha > 0 and qval(alpha * d) < 0.0:
            s = np.clip(alpha * d, lo, hi)

    for _ in range(sweeps):
        moved = 0.0
        for i in range(n):
            grad_i = g[i] + float(H[i] @ s)
            hii = H[i, i]
            old = s[i]
            if hii > 0.0:
                cand = old - grad_i / hii
                new = min(max(cand, lo[i]), hi[i])
            else:
                # concave or flat along this axis: pick the better endpoint
                s_lo = s.copy()
                s_lo[i] = lo[i]
                s_hi = s.copy()
                s_hi[i] = hi[i]
                new = lo[i] if qval(s_lo) <= qval(s_hi) else hi[i]
                if qval(s) <= min(qval(s_lo), qval(s_hi)):
                    new = old
            if new != old:
                s[i] = new
                moved = max(moved, abs(new - old))
        if moved < 1e-14:
            break
    return s


def minimize(f, x0, bounds: Bounds, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizerTrace:
    """Minimize ``f`` over ``bounds`` starting from ``x0``.

    ``f`` maps a parameter vector to a float; raising :class:`ObjectiveError`
    (or returning inf/nan) rejects that point.  ``x0`` must be feasible and
    must evaluate to a finite value.  Returns the evaluation trace with the
    best point, best value and termination reason; at most
    ``cfg.max_iterations`` objective calls happen after the initial
    ``2n + 1``-point design.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != bounds.lower.shape:
        raise ValueError("x0 and bounds disagree on dimension")
    if not bounds.contains(x0):
        raise ValueError("x0 violates the bounds")
    n = x0.size
    width = bounds.upper - bounds.lower

    def denorm(z):
        x = bounds.lower + z * width
        x = np.minimum(np.maximum(x, bounds.lower), bounds.upper)
        x[z <= 0.0] = bounds.lower[z <= 0.0]
        x[z >= 1.0] = bounds.upper[z >= 1.0]
        return x

    trace = OptimizerTrace()
    calls = 0

    def feval(z, k):
        nonlocal calls
        x = denorm(z)
        try:
            val = float(f(x))
        except ObjectiveError:
            val = math.inf
        if math.isnan(val):
            val = math.inf
        calls += 1
        trace.record(k, x, val)
        return val

    z0 = (x0 - bounds.lower) / width
    radius = min(max(cfg.initial_radius, 4.0 * cfg.step_tol), 0.5)

    # --- initial design: x0 plus two points per axis -----------------------
    pts = [z0.copy()]
    for i in range(n):
        hi_room = 1.0 - z0[i]
        lo_room = z0[i]
        d1 = min(radius, hi_room)
        d2 = min(radius, lo_room)
        if d1 >= radius / 2 and d2 >= radius / 2:
            offs = (d1, -d2)
        elif d1 > d2:  # squeezed against the lower bound
            offs = (d1, min(2 * radius, hi_room))
        else:  # squeezed against the upper bound
            offs = (-d2, -min(2 * radius, lo_room))
        for o in offs:
            p = z0.copy()
            p[i] += o
            pts.append(np.clip(p, 0.0, 1.0))
    pts = np.array(pts)
    vals = np.empty(len(pts))
    for idx in range(len(pts)):
        vals[idx] = feval(pts[idx], idx)
        if idx == 0 and not math.isfinite(vals[0]):
            raise ValueError("objective is not finite at x0")
    # keep the design usable even if some stencil points failed
    worst = vals[np.isfinite(vals)].max()
    vals[~np.isfinite(vals)] = worst + abs(worst) + 1.0

    best = int(np.argmin(vals))
    trace.termination = TERM_MAX_ITERATIONS

    # quadratic model coefficients, kept across iterations in the frame
    # (zb, radius) of the iteration that produced them
    coef = None
    frame = None  # (zb, radius) the coefficients refer to

    for it in range(cfg.max_iterations):
        if radius < cfg.step_tol:
            trace.termination = TERM_STEP_TOLERANCE
            break
        zb = pts[best].copy()
        fb = vals[best]

        s_pts = (pts - zb) / radius
        A = _monomials(s_pts)
        if coef is None:
            prior = np.zeros(A.shape[1])
            prior[0] = fb
        else:
            old_zb, old_r = frame
            prior = _transport_coeffs(coef, n, (zb - old_zb) / old_r, radius / old_r)
        # least-change update: keep the previous curvature except where the
        # current interpolation conditions force a correction
        Apinv = np.linalg.pinv(A, rcond=1e-10)
        coef = _least_change_fit(A, vals, prior, n)
        frame = (zb, radius)
        g, H = _model_from_coeffs(coef, n)

        lo_s = (np.maximum(0.0, zb - radius) - zb) / radius
        hi_s = (np.minimum(1.0, zb + radius) - zb) / radius

        # a point much farther out than the trust region makes the model
        # unreliable; refresh the geometry before trusting ratio tests
        dists = np.max(np.abs(s_pts), axis=1)
        far = int(np.argmax(dists))
        geometry_step = dists[far] > 2.0 and far != best

        if geometry_step:
            # move the far point to where its Lagrange-style weight is
            # largest inside the trust box, keeping the set well poised
            cands = []
            for i in range(n):
                for sgn in (hi_s[i], lo_s[i]):
                    s = np.zeros(n)
                    s[i] = sgn
                    cands.append(s)
            cands.append(np.clip(-np.sign(s_pts[far]) * 0.7, lo_s, hi_s))
            cands = np.array(cands)
            wcand = np.abs((Apinv.T @ _monomials(cands).T)[far])
            s_star = cands[int(np.argmax(wcand))]
            pred = 0.0
        else:
            s_star = _minimize_quadratic_box(g, H, lo_s, hi_s)
            pred = -(float(g @ s_star) + 0.5 * float(s_star @ H @ s_star))
            if pred <= 0.0 or float(np.max(np.abs(s_star))) < 1e-12:
                # nothing to gain according to the model: poll along the
                # axis with the widest room instead of giving up
                ax = int(np.argmax(hi_s - lo_s))
                s_star = np.zeros(n)
                s_star[ax] = hi_s[ax] if hi_s[ax] >= -lo_s[ax] else lo_s[ax]
                pred = 0.0
        step_len = float(np.linalg.norm(s_star, ord=np.inf))
        if step_len < 1e-12:
            radius *= 0.5
            continue

        z_new = np.clip(zb + radius * s_star, np.maximum(0.0, zb - radius),
                        np.minimum(1.0, zb + radius))
        z_new = np.clip(z_new, 0.0, 1.0)
        if np.min(np.max(np.abs(pts - z_new), axis=1)) < 1e-13:
            if geometry_step:
                # far point cannot be improved upon: drop it onto the
                # duplicate and carry on with a smaller region
                pts[far] = z_new
            radius *= 0.5
            continue

        f_new = feval(z_new, len(trace.rows))

        # replace the point with the largest Lagrange-style weight at the
        # new point (the far point on geometry steps), never the best
        if math.isfinite(f_new):
            if geometry_step:
                rep = far
            else:
                wts = Apinv.T @ _monomials((z_new - zb) / radius)
                wts[best] = 0.0
                rep = int(np.argmax(np.abs(wts)))
            pts[rep] = z_new
            vals[rep] = f_new
            best = int(np.argmin(vals))

        if geometry_step:
            continue  # geometry evals do not touch the radius

        if pred > 0.0 and math.isfinite(f_new):
            ratio = (fb - f_new) / pred
        else:
            ratio = -math.inf
        improved = math.isfinite(f_new) and f_new < fb
        if ratio < 0.1:
            # an improving step that merely undershot the model's promise
            # still earns a gentler cut, or repeated small-but-real gains
            # on a shallow slope would spiral the radius to nothing
            radius *= 0.8 if improved else 0.5
        elif ratio > 0.7 and step_len > 0.9:
            radius = min(radius * 2.0, 0.5)
        elif step_len < 0.25:
            # the model wants steps much shorter than the region: zoom in so
            # the interpolation set is rebuilt at the scale that matters
            radius *= 0.5

        if (
            math.isfinite(f_new)
            and pred > 0.0
            and pred < cfg.value_tol
            and abs(fb - f_new) < cfg.value_tol
        ):
            trace.termination = TERM_VALUE_TOLERANCE
            break

    if trace.termination == TERM_MAX_ITERATIONS and radius < cfg.step_tol:
        trace.termination = TERM_STEP_TOLERANCE
    trace.best_x = denorm(pts[best])
    trace.best_f = float(vals[best])
    return trace
