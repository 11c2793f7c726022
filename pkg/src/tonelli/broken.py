"""The k-broken Euler-Lagrange loop space and its discrete action.

A broken loop in integer period tau is a cyclic chain of tau*k short action
minimizers, one per interval [i/k, (i+1)/k], determined by its node points.
The mean discrete action, its exact gradient (the momentum jump at each
node), and its Hessian (assembled from the variational flow of each segment
through the generating-function identities) live here, together with the
critical-point search and the Morse index / nullity computation via matrix
inertia.

Node coordinates are the chart: gradients and Hessians below are exact
derivatives of the mean action with respect to the nodes, not finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .flow import Trajectory
from .segment import SegmentError, minimal_lift, minimize_segment, solve_segments_batch

__all__ = [
    "BrokenLoop",
    "CriticalPointReport",
    "SolverParams",
    "LoopSpacingError",
    "from_nodes",
    "discrete_gradient",
    "jump_covectors",
    "discrete_hessian",
    "hessian_inertia",
    "find_critical",
    "refine",
    "iterate_loop",
    "glue_trajectory",
    "loop_to_json",
    "loop_from_json",
]


class LoopSpacingError(ValueError):
    """Consecutive nodes exceed the admissible spacing rho0."""


@dataclass
class BrokenLoop:
    """A point of the broken loop space: nodes plus solved segments."""

    spec: object
    radii: object
    period: int
    k: int
    nodes: np.ndarray          # (tau*k, N)
    seg_qs: np.ndarray         # (steps+1, tau*k, N), segment i lifted from nodes[i]
    seg_vs: np.ndarray
    v0s: np.ndarray            # (tau*k, N)
    v1s: np.ndarray
    p0s: np.ndarray
    p1s: np.ndarray
    actions: np.ndarray        # (tau*k,)
    dphis: np.ndarray          # (tau*k, 2N, 2N)
    winding: np.ndarray        # integer homotopy data of the node chain
    steps_per_segment: int

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def mean_action(self):
        return float(self.actions.sum() / self.period)

    def node_times(self):
        return np.arange(self.n_nodes) / self.k

    def max_speed(self):
        return float(np.linalg.norm(self.seg_vs, axis=-1).max())

    def segment(self, i):
        from .segment import Segment

        m = self.seg_qs.shape[0]
        t0 = i / self.k
        ts = np.linspace(t0, t0 + 1.0 / self.k, m)
        return Segment(
            t0=t0,
            t1=t0 + 1.0 / self.k,
            q0=self.seg_qs[0, i].copy(),
            q1=self.seg_qs[-1, i].copy(),
            v0=self.v0s[i].copy(),
            v1=self.v1s[i].copy(),
            p0=self.p0s[i].copy(),
            p1=self.p1s[i].copy(),
            action=float(self.actions[i]),
            ts=ts,
            qs=self.seg_qs[:, i].copy(),
            vs=self.seg_vs[:, i].copy(),
            dphi=self.dphis[i].copy(),
            disconjugate=True,
            residual=0.0,
        )


def _spacing_check(nodes, rho0):
    diffs = minimal_lift(np.roll(nodes, -1, axis=0) - nodes)
    dists = np.linalg.norm(diffs, axis=-1)
    worst = int(np.argmax(dists))
    if dists[worst] >= rho0:
        raise LoopSpacingError(
            f"node spacing {dists[worst]:.4g} >= rho0 = {rho0:.4g} "
            f"between nodes {worst} and {(worst + 1) % len(nodes)}"
        )
    return diffs


def from_nodes(spec, radii, period, k, nodes, steps_per_segment=32, v0_init=None):
    """Build the broken loop through the given nodes.

    nodes: (period*k, N) torus representatives, node i at time i/k.  Each
    consecutive pair must be closer than rho0 in the minimal lift, and k
    must satisfy 1/k <= eps0.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    period = int(period)
    k = int(k)
    if nodes.shape[0] != period * k:
        raise ValueError(f"expected {period * k} nodes, got {nodes.shape[0]}")
    if 1.0 / k > radii.eps0 * (1.0 + 1e-12):
        raise LoopSpacingError(f"1/k = {1.0 / k:.4g} exceeds eps0 = {radii.eps0:.4g}")
    diffs = _spacing_check(nodes, radii.rho0)
    q1s = nodes + diffs
    t0s = np.arange(period * k) / k
    out = solve_segments_batch(
        spec, t0s, 1.0 / k, nodes, q1s, steps=steps_per_segment, v0_init=v0_init
    )
    if not out["converged"].all():
        # per-segment fallback through the robust single solver
        bad = np.flatnonzero(~out["converged"])
        for i in bad:
            seg = minimize_segment(
                spec, t0s[i], t0s[i] + 1.0 / k, nodes[i], q1s[i], radii,
                steps=steps_per_segment,
            )
            out["v0"][i] = seg.v0
            out["v1"][i] = seg.v1
            out["p0"][i] = seg.p0
            out["p1"][i] = seg.p1
            out["action"][i] = seg.action
            out["qs"][:, i] = seg.qs
            out["vs"][:, i] = seg.vs
            out["dphi"][i] = seg.dphi
    winding = np.round(diffs.sum(axis=0)).astype(int)
    return BrokenLoop(
        spec=spec,
        radii=radii,
        period=period,
        k=k,
        nodes=nodes.copy(),
        seg_qs=out["qs"],
        seg_vs=out["vs"],
        v0s=out["v0"],
        v1s=out["v1"],
        p0s=out["p0"],
        p1s=out["p1"],
        actions=out["action"],
        dphis=out["dphi"],
        winding=winding,
        steps_per_segment=steps_per_segment,
    )


def discrete_gradient(loop):
    """Gradient of the mean action in node coordinates.

    Node h receives (1/tau) [d_v L(... incoming) - d_v L(... outgoing)],
    the momentum jump across the node scaled for the mean action.
    """
    incoming = np.roll(loop.p1s, 1, axis=0)
    return (incoming - loop.p0s) / loop.period


def jump_covectors(loop):
    """Momentum jumps at the nodes (the mean-metric gradient, tau-free)."""
    return np.roll(loop.p1s, 1, axis=0) - loop.p0s


def discrete_hessian(loop, asym_tol=1e-7):
    """Hessian of the mean action in node coordinates.

    Cyclic block-tridiagonal, assembled from the variational flow of each
    segment via the generating-function blocks
        d2 S / dq0 dq0 =  b^-1 a,
        d2 S / dq0 dq1 = -b^-1,
        d2 S / dq1 dq1 =  d b^-1,
    then symmetrized; the asymmetry must stay below asym_tol relatively.
    """
    n = loop.dim
    m = loop.n_nodes
    a = loop.dphis[:, :n, :n]
    b = loop.dphis[:, :n, n:]
    d = loop.dphis[:, n:, n:]
    b_inv = np.linalg.inv(b)
    e_blk = np.einsum("sij,sjk->sik", b_inv, a)       # d2S_i/dq0^2
    f_blk = np.einsum("sij,sjk->sik", d, b_inv)       # d2S_i/dq1^2
    g_blk = -b_inv                                    # d2S_i/dq0 dq1
    h = np.zeros((m * n, m * n))
    for i in range(m):
        j = (i + 1) % m
        h[i * n : (i + 1) * n, i * n : (i + 1) * n] += e_blk[i] + f_blk[i - 1]
        h[i * n : (i + 1) * n, j * n : (j + 1) * n] += g_blk[i]
        h[j * n : (j + 1) * n, i * n : (i + 1) * n] += g_blk[i].T
    h /= loop.period
    asym = np.abs(h - h.T).max()
    scale = max(np.abs(h).max(), 1e-30)
    if asym / scale > asym_tol:
        raise RuntimeError(f"Hessian asymmetry {asym / scale:.3e} exceeds {asym_tol:g}")
    return 0.5 * (h + h.T)


def _ldl_negative_count(mat):
    """Number of negative eigenvalues via LDL^T with symmetric pivoting."""
    _, d, _ = sla.ldl(mat, lower=True)
    count = 0
    i = 0
    m = d.shape[0]
    while i < m:
        if i + 1 < m and (d[i, i + 1] != 0.0 or d[i + 1, i] != 0.0):
            ev = np.linalg.eigvalsh(d[i : i + 2, i : i + 2])
            count += int((ev < 0.0).sum())
            i += 2
        else:
            if d[i, i] < 0.0:
                count += 1
            i += 1
    return count


def hessian_inertia(h, null_tol=None):
    """(morse_index, nullity, eigen_gap, condition) of a symmetric matrix.

    Eigenvalues within +/- null_tol of zero count as null; the default
    threshold is 1e-7 * ||H||.  Index and nullity come from LDL^T inertia of
    the shifted matrices H +/- null_tol I (exact by Sylvester's law); the
    eigenvalue solve provides the gap report and a consistency cross-check.
    """
    evals = np.linalg.eigvalsh(h)
    scale = max(abs(evals[0]), abs(evals[-1]), 1e-300)
    tol = null_tol if null_tol is not None else 1e-7 * scale
    m = h.shape[0]
    index = _ldl_negative_count(h + tol * np.eye(m))
    below = _ldl_negative_count(h - tol * np.eye(m))
    nullity = below - index
    eig_index = int((evals < -tol).sum())
    eig_null = int((np.abs(evals) <= tol).sum())
    if (eig_index, eig_null) != (index, nullity):
        raise RuntimeError(
            f"inertia is threshold-sensitive: LDL gives ({index}, {nullity}), "
            f"eigenvalues give ({eig_index}, {eig_null}); no clean gap at {tol:.3e}"
        )
    inside = np.abs(evals) <= tol
    gap_out = np.abs(evals[~inside]).min() if (~inside).any() else np.inf
    gap_in = np.abs(evals[inside]).max() if inside.any() else 0.0
    cond = scale / max(gap_out if np.isfinite(gap_out) else scale, 1e-300)
    return index, nullity, float(gap_out - gap_in), float(cond)


@dataclass
class SolverParams:
    gtol: float = 1e-9
    max_iter: int = 80
    steps_per_segment: int = 32
    max_spacing_rejects: int = 12
    null_tol_factor: float = 1e-7


@dataclass
class CriticalPointReport:
    loop: BrokenLoop
    gradient_norm: float
    morse_index: int
    nullity: int
    hessian_condition: float
    el_residual: float
    eigen_gap: float
    converged: bool
    iterations: int
    message: str = ""

    def pair(self):
        return (self.morse_index, self.nullity)


def find_critical(spec, radii, seed_loop, solver_params=None):
    """Damped Newton on the node coordinates toward grad A_k = 0.

    Levenberg regularization doubles as the trust-region fallback: as the
    damping parameter grows the step turns into scaled gradient descent.
    Steps that would leave the broken loop space (node spacing >= rho0) are
    backtracked; persistent rejection is reported instead of forced.
    """
    params = solver_params or SolverParams()
    loop = seed_loop
    grad = discrete_gradient(loop)
    gnorm = float(np.linalg.norm(grad))
    mu = 0.0
    spacing_rejects = 0
    message = ""
    it = 0
    for it in range(1, params.max_iter + 1):
        if gnorm < params.gtol:
            break
        hess = discrete_hessian(loop)
        accepted = False
        mu_try = mu
        for _ in range(14):
            try:
                step = np.linalg.solve(
                    hess + mu_try * np.eye(hess.shape[0]), -grad.reshape(-1)
                ).reshape(grad.shape)
            except np.linalg.LinAlgError:
                mu_try = max(10.0 * mu_try, 1e-8)
                continue
            try:
                trial = from_nodes(
                    spec, radii, loop.period, loop.k, loop.nodes + step,
                    steps_per_segment=params.steps_per_segment, v0_init=loop.v0s,
                )
            except (LoopSpacingError, SegmentError):
                spacing_rejects += 1
                mu_try = max(10.0 * mu_try, 1e-8)
                if spacing_rejects > params.max_spacing_rejects:
                    message = (
                        "persistently leaving the broken loop space (spacing bound); "
                        "sublevel compactness suggests no nearby critical point"
                    )
                    break
                continue
            g_trial = discrete_gradient(trial)
            gn_trial = float(np.linalg.norm(g_trial))
            if gn_trial < gnorm * (1.0 - 1e-6) or gn_trial < params.gtol:
                loop, grad, gnorm = trial, g_trial, gn_trial
                mu = mu_try / 3.0 if mu_try > 1e-12 else 0.0
                accepted = True
                break
            mu_try = max(10.0 * mu_try, 1e-8)
        if not accepted:
            if not message:
                message = f"stalled at gradient norm {gnorm:.3e}"
            break

    converged = gnorm < params.gtol
    hess = discrete_hessian(loop)
    scale = np.abs(np.linalg.eigvalsh(hess)).max()
    index, nullity, gap, cond = hessian_inertia(hess, params.null_tol_factor * scale)
    glued = glue_trajectory(loop)
    from .flow import el_residual

    resid = el_residual(spec, glued) if converged else float("nan")
    return CriticalPointReport(
        loop=loop,
        gradient_norm=gnorm,
        morse_index=index,
        nullity=nullity,
        hessian_condition=cond,
        el_residual=resid,
        eigen_gap=gap,
        converged=converged,
        iterations=it,
        message=message,
    )


def glue_trajectory(loop):
    """Concatenate the segment samples into one continuous lifted trajectory."""
    m, s, n = loop.seg_qs.shape
    total = (m - 1) * s + 1
    ts = np.empty(total)
    qs = np.empty((total, n))
    vs = np.empty((total, n))
    offset = np.zeros(n)
    prev_end = loop.seg_qs[0, 0]
    pos = 0
    dt = (1.0 / loop.k) / (m - 1)
    for i in range(s):
        t0 = i / loop.k
        if i > 0:
            offset = prev_end - loop.seg_qs[0, i]
        take = m - 1 if i < s - 1 else m
        ts[pos : pos + take] = t0 + dt * np.arange(take)
        qs[pos : pos + take] = loop.seg_qs[:take, i] + offset
        vs[pos : pos + take] = loop.seg_vs[:take, i]
        prev_end = loop.seg_qs[-1, i] + offset
        pos += take
    return Trajectory(t0=0.0, t1=loop.period, ts=ts, qs=qs, vs=vs)


def refine(loop, factor):
    """Resample each segment at factor-times as many nodes: same curve in
    Lambda_{factor k}; mean action preserved to solver tolerance."""
    factor = int(factor)
    if factor < 2:
        raise ValueError("factor must be an integer >= 2")
    steps = loop.steps_per_segment
    if steps % factor != 0:
        new_steps = factor * ((steps + factor - 1) // factor)
        loop = from_nodes(
            loop.spec, loop.radii, loop.period, loop.k, loop.nodes,
            steps_per_segment=new_steps, v0_init=loop.v0s,
        )
        steps = new_steps
    stride = steps // factor
    new_nodes = np.concatenate(
        [loop.seg_qs[stride * j, :, :][:, None, :] for j in range(factor)], axis=1
    ).reshape(loop.n_nodes * factor, loop.dim)
    v_guess = np.concatenate(
        [loop.seg_vs[stride * j, :, :][:, None, :] for j in range(factor)], axis=1
    ).reshape(loop.n_nodes * factor, loop.dim)
    return from_nodes(
        loop.spec, loop.radii, loop.period, loop.k * factor, new_nodes,
        steps_per_segment=max(8, steps // factor), v0_init=v_guess,
    )


def iterate_loop(loop, n):
    """The n-th iterate: the same node chain repeated n times in period n*tau."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return loop
    tiled = np.tile(loop.nodes, (n, 1))
    v_guess = np.tile(loop.v0s, (n, 1))
    return from_nodes(
        loop.spec, loop.radii, loop.period * n, loop.k, tiled,
        steps_per_segment=loop.steps_per_segment, v0_init=v_guess,
    )


def loop_to_json(loop):
    return json.dumps(
        {
            "schema": 1,
            "period": loop.period,
            "k": loop.k,
            "dim": loop.dim,
            "nodes": [float(x) for x in loop.nodes.reshape(-1)],
            "mean_action": loop.mean_action,
        },
        sort_keys=True,
    )


def loop_from_json(spec, radii, text, steps_per_segment=32):
    d = json.loads(text)
    if d.get("schema") != 1:
        raise ValueError(f"unknown loop schema {d.get('schema')!r}")
    nodes = np.asarray(d["nodes"], dtype=float).reshape(-1, d["dim"])
    loop = from_nodes(spec, radii, d["period"], d["k"], nodes, steps_per_segment=steps_per_segment)
    stored = d.get("mean_action")
    if stored is not None and abs(stored - loop.mean_action) > 1e-9 * (1 + abs(stored)):
        raise ValueError(
            f"stored mean action {stored} disagrees with rebuilt value {loop.mean_action}"
        )
    return loop
