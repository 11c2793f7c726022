"""Short action-minimizing segments and their uniqueness radii.

A segment is the unique action minimizer between two nearby torus points over
a short time interval.  The admissible window (eps0, rho0) comes from the
positivity region of the explicit quadratic defect function

    F(rho, eps) = ell0 - 2 ell1 (sqrt(C/lq) + 1)(rho + eps)
                       - ell1 (C/lq + 1)(rho^2 + eps^2),

with the grid-estimated class constants and C = uq (flat torus, single global
chart).  Positivity of F makes the Dirichlet action Hessian positive definite
on the relevant convex set, hence minimizers in that window are unique.

Segments are solved by damped Newton shooting on the initial velocity, with
the Jacobian taken from the variational flow; a direct piecewise-linear
minimization (16 interior nodes) backs up the rare Newton failure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .flow import Trajectory, integrate_el_batch
from .lagrangian import ClassGrid, derivs_batch, eval_batch, verify_class

__all__ = [
    "UniquenessRadii",
    "Segment",
    "SegmentError",
    "RadiiError",
    "estimate_radii",
    "practical_radii",
    "minimize_segment",
    "solve_segments_batch",
    "segment_action_gradient",
    "minimal_lift",
]

RHO_CAP = 0.25  # quarter of the unit cell keeps minimal lifts unambiguous


class SegmentError(RuntimeError):
    """Endpoints out of range or both solver paths failed."""


class RadiiError(RuntimeError):
    """The positivity probe for F failed everywhere (badly scaled constants)."""


def minimal_lift(d):
    """Componentwise representative of d in [-1/2, 1/2)."""
    d = np.asarray(d, dtype=float)
    return d - np.round(d)


@dataclass(frozen=True)
class UniquenessRadii:
    """Certified (or caller-supplied) uniqueness window for short minimizers."""

    eps0: float
    rho0: float
    margin: float
    constants: dict = field(default_factory=dict)
    certified: bool = True
    cap_active: bool = False

    def f_value(self, rho, eps):
        c = self.constants
        ratio = c["C"] / c["ell_lower"]
        a = 2.0 * c["ell1"] * (np.sqrt(ratio) + 1.0)
        b = c["ell1"] * (ratio + 1.0)
        return c["ell0"] - a * (rho + eps) - b * (rho**2 + eps**2)


def _bisect_positive_root(f, hi_start=1.0, iters=60):
    """Largest x with f positive on (0, x], assuming f decreasing from f(0+)>0."""
    lo = 0.0
    hi = hi_start
    while f(hi) > 0.0 and hi < 1e6:
        hi *= 2.0
    if f(hi) > 0.0:
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def estimate_radii(spec, grid=None, class_report=None):
    """Uniqueness radii (eps0, rho0) from the positivity of F, halved for margin.

    The largest per-axis extents with F > 0 are found by bisection, both are
    halved as a safety factor against grid-estimated constants, and rho0 is
    additionally capped at 1/4 so that minimal lifts stay unambiguous.
    """
    report = class_report or verify_class(spec, grid or ClassGrid())
    constants = {
        "ell0": report.ell0,
        "ell1": report.ell1,
        "ell_lower": report.lower_quadratic,
        "ell_upper": report.upper_quadratic,
        "C": report.c_constant,
        "shift": report.normalization_shift,
    }
    probe = UniquenessRadii(eps0=0.0, rho0=0.0, margin=0.0, constants=constants)
    if probe.f_value(1e-9, 1e-9) <= 0.0:
        raise RadiiError(
            "F(rho, eps) <= 0 everywhere on the probe grid; the class constants "
            "are badly scaled -- rescale the Lagrangian"
        )
    r_rho = _bisect_positive_root(lambda x: probe.f_value(x, 0.0))
    r_eps = _bisect_positive_root(lambda x: probe.f_value(0.0, x))
    eps0 = 0.5 * r_eps
    rho0 = 0.5 * r_rho
    cap_active = rho0 > RHO_CAP
    rho0 = min(rho0, RHO_CAP)
    rhos = np.linspace(rho0 / 17.0, rho0, 17)
    epss = np.linspace(eps0 / 17.0, eps0, 17)
    margin = min(probe.f_value(r, e) for r in rhos for e in epss)
    if margin <= 0.0:
        raise RadiiError(f"halved radii still leave F non-positive (margin {margin:.3e})")
    return UniquenessRadii(
        eps0=float(eps0),
        rho0=float(rho0),
        margin=float(margin),
        constants=constants,
        certified=True,
        cap_active=bool(cap_active),
    )


def practical_radii(eps0, rho0=RHO_CAP, constants=None):
    """Caller-chosen operating radii (e.g. to run at a prescribed k).

    The certified radii from estimate_radii are often far smaller than what
    the segment solver handles in practice; these carry certified=False.
    rho0 may go up to (but not reach) 1/2, where minimal lifts on the torus
    become ambiguous.
    """
    if not 0.0 < rho0 < 0.5:
        raise ValueError("rho0 must lie in (0, 1/2) for unambiguous minimal lifts")
    return UniquenessRadii(
        eps0=float(eps0),
        rho0=float(rho0),
        margin=0.0,
        constants=dict(constants or {}),
        certified=False,
        cap_active=rho0 >= RHO_CAP,
    )


@dataclass
class Segment:
    """Unique short action minimizer between lifted endpoints."""

    t0: float
    t1: float
    q0: np.ndarray
    q1: np.ndarray            # lifted endpoint actually connected
    v0: np.ndarray
    v1: np.ndarray
    p0: np.ndarray            # d_v L at the start
    p1: np.ndarray            # d_v L at the end
    action: float
    ts: np.ndarray
    qs: np.ndarray
    vs: np.ndarray
    dphi: np.ndarray          # variational flow over the segment, (2N, 2N)
    disconjugate: bool
    residual: float

    @property
    def trajectory(self):
        return Trajectory(t0=self.t0, t1=self.t1, ts=self.ts, qs=self.qs, vs=self.vs)


def _simpson_weights(m):
    if m % 2 == 0:
        raise ValueError("Simpson rule needs an odd number of samples")
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _segment_actions(spec, t0s, dt, qs, vs):
    """Composite Simpson action of batched sampled arcs (M, B, N)."""
    m, bsz, _ = qs.shape
    h = dt / (m - 1)
    w = _simpson_weights(m)
    ts = t0s[None, :] + h * np.arange(m)[:, None]
    vals = eval_batch(spec, ts.reshape(-1), qs.reshape(m * bsz, -1), vs.reshape(m * bsz, -1))
    vals = vals.reshape(m, bsz)
    return h * np.einsum("m,mb->b", w, vals)


def solve_segments_batch(
    spec,
    t0s,
    dt,
    q0s,
    q1s,
    steps=32,
    tol=1e-11,
    max_iter=40,
    v0_init=None,
):
    """Damped-Newton shooting for B segments at once.

    q1s must already be lifted relative to q0s.  Returns a dict of batched
    results; entries that failed Newton are flagged in ``converged`` and are
    the caller's responsibility (see minimize_segment for the fallback).
    """
    q0s = np.atleast_2d(np.asarray(q0s, dtype=float))
    q1s = np.atleast_2d(np.asarray(q1s, dtype=float))
    bsz, n = q0s.shape
    t0s = np.broadcast_to(np.asarray(t0s, dtype=float), (bsz,)).copy()
    if steps % 2:
        steps += 1
    v = (q1s - q0s) / dt if v0_init is None else np.atleast_2d(np.asarray(v0_init, float)).copy()
    lam = np.ones(bsz)

    for _ in range(max_iter):
        qs, vs, gamma = integrate_el_batch(spec, q0s, v, t0s, dt, steps, with_variational=True)
        res = qs[-1] - q1s
        rnorm = np.linalg.norm(res, axis=-1)
        if rnorm.max() < tol:
            break
        a0 = derivs_batch(spec, t0s, q0s, v, names=("d_vv",))["d_vv"]
        jac = np.einsum("bij,bjk->bik", gamma[:, :n, n:], a0)
        try:
            step = np.linalg.solve(jac, res[..., None])[..., 0]
        except np.linalg.LinAlgError:
            reg = jac + 1e-10 * np.eye(n)[None, :, :]
            step = np.linalg.solve(reg, res[..., None])[..., 0]
        active = rnorm >= tol
        v_trial = v - lam[:, None] * step * active[:, None]
        qs_t, _, _ = integrate_el_batch(spec, q0s, v_trial, t0s, dt, steps, with_variational=False)
        r_trial = np.linalg.norm(qs_t[-1] - q1s, axis=-1)
        improved = r_trial <= (1.0 - 1e-4 * lam) * rnorm + 1e-15
        take = active & improved
        v = np.where(take[:, None], v_trial, v)
        lam = np.where(take, np.minimum(1.0, lam * 2.0), np.where(active, lam * 0.5, lam))
        lam = np.maximum(lam, 1e-6)

    qs, vs, gammas = _integrate_recording(spec, q0s, v, t0s, dt, steps)
    res = np.linalg.norm(qs[-1] - q1s, axis=-1)
    actions = _segment_actions(spec, t0s, dt, qs, vs)
    der0 = derivs_batch(spec, t0s, q0s, v, names=("d_v",))
    der1 = derivs_batch(spec, t0s + dt, qs[-1], vs[-1], names=("d_v",))
    # Jacobi disconjugacy: det of the dq/dp0 block stays positive after start
    b_dets = np.linalg.det(gammas[1:, :, :n, n:])
    disconjugate = np.all(b_dets > 0.0, axis=0)
    return {
        "v0": v,
        "v1": vs[-1],
        "p0": der0["d_v"],
        "p1": der1["d_v"],
        "action": actions,
        "qs": qs,
        "vs": vs,
        "dphi": gammas[-1],
        "residual": res,
        "converged": res < 1e-8,
        "disconjugate": disconjugate,
    }


def _integrate_recording(spec, q0s, v0s, t0s, dt, steps):
    """Final integration pass that also records the variational flow samples."""
    bsz, n = q0s.shape
    gammas = np.empty((steps + 1, bsz, 2 * n, 2 * n))
    qs = np.empty((steps + 1, bsz, n))
    vs = np.empty((steps + 1, bsz, n))
    qs_all, vs_all, gamma = integrate_el_batch(
        spec, q0s, v0s, t0s, dt, steps, with_variational=True, gamma_record=gammas
    )
    qs[:], vs[:] = qs_all, vs_all
    return qs, vs, gammas


def _direct_pl_minimization(spec, t0, t1, q0, q1, interior=16, quad=6):
    """Fallback: minimize the action over piecewise-linear paths.

    Gradient computed by Gauss-Legendre quadrature of the first variation on
    each linear piece.  Returns the refined initial-slope guess for Newton.
    """
    n = len(q0)
    m = interior + 2
    ts = np.linspace(t0, t1, m)
    h = ts[1] - ts[0]
    base = np.linspace(0.0, 1.0, m)[:, None] * (q1 - q0)[None, :] + q0[None, :]
    nodes_g, weights_g = np.polynomial.legendre.leggauss(quad)
    nodes_g = 0.5 * (nodes_g + 1.0)
    weights_g = 0.5 * weights_g

    def unpack(x):
        pts = base.copy()
        pts[1:-1] = x.reshape(interior, n)
        return pts

    def action_grad(x):
        pts = unpack(x)
        vels = (pts[1:] - pts[:-1]) / h
        tq = ts[:-1, None] + h * nodes_g[None, :]
        qq = pts[:-1, None, :] + (pts[1:] - pts[:-1])[:, None, :] * nodes_g[None, :, None]
        vv = np.broadcast_to(vels[:, None, :], qq.shape)
        flat_t = tq.reshape(-1)
        flat_q = qq.reshape(-1, n)
        flat_v = vv.reshape(-1, n)
        vals = eval_batch(spec, flat_t, flat_q, flat_v).reshape(m - 1, quad)
        der = derivs_batch(spec, flat_t, flat_q, flat_v, names=("d_v", "d_q"))
        lq = der["d_q"].reshape(m - 1, quad, n)
        lv = der["d_v"].reshape(m - 1, quad, n)
        act = h * np.einsum("eq,q->", vals, weights_g)
        # d(edge e)/d(node i): q-coupling via the hat functions, v-coupling via 1/h
        g = np.zeros((m, n))
        wq = weights_g[None, :, None]
        g_right = h * np.sum(lq * wq * nodes_g[None, :, None], axis=1) + np.sum(lv * wq, axis=1)
        g_left = h * np.sum(lq * wq * (1.0 - nodes_g)[None, :, None], axis=1) - np.sum(lv * wq, axis=1)
        g[1:] += g_right
        g[:-1] += g_left
        return act, g[1:-1].reshape(-1)

    x0 = base[1:-1].reshape(-1)
    out = optimize.minimize(action_grad, x0, jac=True, method="L-BFGS-B", options={"maxiter": 400})
    pts = unpack(out.x)
    return (pts[1] - pts[0]) / h


def minimize_segment(spec, t0, t1, q0, q1, radii, steps=32, tol=1e-11, v0_init=None):
    """Unique short action minimizer from (t0, q0) to (t1, q1).

    q1 may be any torus representative; the minimal lift relative to q0 is
    connected.  Newton shooting first, then the piecewise-linear fallback
    with Newton polish.  The returned segment carries the variational flow
    over the arc and a disconjugacy flag from the positive-definite check.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dt = t1 - t0
    if not 0.0 < dt <= radii.eps0 * (1.0 + 1e-12):
        raise SegmentError(f"interval length {dt} outside (0, eps0={radii.eps0}]")
    dq = minimal_lift(q1 - q0)
    if np.linalg.norm(dq) >= radii.rho0:
        raise SegmentError(
            f"endpoint distance {np.linalg.norm(dq):.4g} >= rho0 = {radii.rho0:.4g}"
        )
    q1_lift = q0 + dq
    res = solve_segments_batch(
        spec, [t0], dt, q0[None, :], q1_lift[None, :], steps=steps, tol=tol, v0_init=v0_init
    )
    if not res["converged"][0]:
        v_guess = _direct_pl_minimization(spec, t0, t1, q0, q1_lift)
        res = solve_segments_batch(
            spec, [t0], dt, q0[None, :], q1_lift[None, :], steps=steps, tol=tol,
            v0_init=v_guess[None, :],
        )
        if not res["converged"][0]:
            raise SegmentError(
                f"segment solver failed: Newton residual {res['residual'][0]:.3e} "
                f"after direct-minimization fallback (t0={t0}, q0={q0}, q1={q1_lift})"
            )
    return _segment_from_batch(spec, res, 0, t0, t1)


def _segment_from_batch(spec, res, i, t0, t1):
    qs = res["qs"][:, i, :]
    vs = res["vs"][:, i, :]
    m = qs.shape[0]
    ts = np.linspace(t0, t1, m)
    gamma = res["dphi"][i]
    disconjugate = bool(res["disconjugate"][i])
    return Segment(
        t0=t0,
        t1=t1,
        q0=qs[0].copy(),
        q1=qs[-1].copy(),
        v0=res["v0"][i].copy(),
        v1=res["v1"][i].copy(),
        p0=res["p0"][i].copy(),
        p1=res["p1"][i].copy(),
        action=float(res["action"][i]),
        ts=ts,
        qs=qs.copy(),
        vs=vs.copy(),
        dphi=gamma.copy(),
        disconjugate=disconjugate,
        residual=float(res["residual"][i]),
    )


def segment_action_gradient(spec, seg):
    """Endpoint derivatives of the minimal action: (-p0, p1)."""
    return -seg.p0.copy(), seg.p1.copy()
