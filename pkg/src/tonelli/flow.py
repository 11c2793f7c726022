"""Euler-Lagrange flow, its Hamiltonian linearization, and orbit quality.

Fixed-step classical RK4 throughout: deterministic endpoint maps are what the
shooting and continuation layers differentiate through.  The variational flow
is propagated in Hamiltonian coordinates (dq, dp); on the flat torus the
vertical-preserving trivialization is the constant standard one, so the
resulting matrix path is directly the symplectic path used by the index code.

State batching: every routine has a batched core acting on arrays shaped
(B, N) so that many segments integrate simultaneously.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lagrangian import derivs_batch

__all__ = [
    "PhaseState",
    "Trajectory",
    "SymplecticPath",
    "FlowError",
    "integrate_el",
    "integrate_el_batch",
    "integrate_linearized",
    "el_residual",
    "standard_j",
]

BLOWUP_GUARD = 1e6


class FlowError(RuntimeError):
    """Blow-up guard exceeded or a singular fiberwise Hessian solve."""


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v))):
            raise FlowError("non-finite phase state")


@dataclass
class Trajectory:
    """Sampled solution arc of the Euler-Lagrange system."""

    t0: float
    t1: float
    ts: np.ndarray      # (M,)
    qs: np.ndarray      # (M, N)
    vs: np.ndarray      # (M, N)

    @property
    def step_count(self):
        return len(self.ts) - 1

    @property
    def start(self):
        return PhaseState(self.qs[0], self.vs[0])

    @property
    def end(self):
        return PhaseState(self.qs[-1], self.vs[-1])

    def max_speed(self):
        return float(np.linalg.norm(self.vs, axis=-1).max())

    def to_csv(self, path):
        n = self.qs.shape[1]
        header = "t," + ",".join(f"q_{i+1}" for i in range(n)) + "," + ",".join(
            f"v_{i+1}" for i in range(n)
        )
        data = np.column_stack([self.ts, self.qs, self.vs])
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def standard_j(n):
    """Standard symplectic form matrix on R^{2n} in (q, p) block order."""
    j = np.zeros((2 * n, 2 * n))
    j[:n, n:] = np.eye(n)
    j[n:, :n] = -np.eye(n)
    return j


@dataclass
class SymplecticPath:
    """Path in Sp(2N) from the linearized Hamiltonian flow, starting at I.

    Also carries the quadratic Hamiltonian coefficient S(t) at each sample
    (the Hessian of H along the orbit) and the orbit states, so crossing
    searches can re-evaluate the path inside a sample interval.
    """

    dim: int                    # 2N
    ts: np.ndarray              # (M,)
    mats: np.ndarray            # (M, 2N, 2N)
    s_mats: np.ndarray          # (M, 2N, 2N)
    orbit_qs: np.ndarray        # (M, N)
    orbit_vs: np.ndarray        # (M, N)
    spec: object = None

    @property
    def tau(self):
        return float(self.ts[-1] - self.ts[0])

    def symplectic_defect(self):
        j = standard_j(self.dim // 2)
        errs = np.einsum("mji,jk,mkl->mil", self.mats, j, self.mats) - j
        return float(np.abs(errs).max())

    def eval(self, t, nsub=24):
        """Gamma(t) and S(t) at an off-sample time, by windowed re-integration."""
        ts = self.ts
        if t <= ts[0]:
            return self.mats[0].copy(), self.s_mats[0].copy()
        i = int(np.searchsorted(ts, t, side="right") - 1)
        i = min(max(i, 0), len(ts) - 2)
        if t == ts[i]:
            return self.mats[i].copy(), self.s_mats[i].copy()
        q = self.orbit_qs[i][None, :]
        v = self.orbit_vs[i][None, :]
        g_rel = np.eye(self.dim)[None, :, :]
        qs, vs, gs, s_last = _combined_rk4(self.spec, float(ts[i]), float(t), q, v, g_rel, nsub)
        return gs[0] @ self.mats[i], s_last[0]


def _el_rhs(spec, t, q, v):
    der = derivs_batch(spec, t, q, v, names=("d_q", "d_vv", "d_vq", "d_vt"))
    force = der["d_q"] - np.einsum("...ij,...j->...i", der["d_vq"], v) - der["d_vt"]
    try:
        acc = np.linalg.solve(der["d_vv"], force[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise FlowError(f"singular fiberwise Hessian at t={t}") from exc
    return v, acc


def _hamiltonian_s(spec, t, q, v):
    """Hessian of the dual Hamiltonian along the Legendre lift, in (q, p)."""
    der = derivs_batch(spec, t, q, v, names=("d_vv", "d_vq", "d_qq"))
    a = der["d_vv"]
    b = der["d_vq"]          # b[i, j] = d2 L / dv_i dq_j
    c = der["d_qq"]
    a_inv = np.linalg.inv(a)
    h_pp = a_inv
    h_pq = -np.einsum("...ij,...jk->...ik", a_inv, b)
    h_qp = np.swapaxes(h_pq, -1, -2)
    h_qq = -c + np.einsum("...ji,...jk,...kl->...il", b, a_inv, b)
    n = a.shape[-1]
    s = np.zeros(a.shape[:-2] + (2 * n, 2 * n))
    s[..., :n, :n] = h_qq
    s[..., :n, n:] = h_qp
    s[..., n:, :n] = h_pq
    s[..., n:, n:] = h_pp
    return 0.5 * (s + np.swapaxes(s, -1, -2))


def _combined_rk4(spec, t0, t1, q, v, gamma, steps, guard=BLOWUP_GUARD, record=None):
    """RK4 on the combined (q, v, Gamma) system; Gamma' = J S(t, q, v) Gamma.

    q, v: (B, N); gamma: (B, 2N, 2N) or None to skip the variational part.
    ``record(i, t, q, v, gamma, s)`` is called after each accepted step.
    """
    n = q.shape[-1]
    j = standard_j(n)
    h = (t1 - t0) / steps
    t = t0
    s_last = None

    def full_rhs(t, q, v, g):
        vq, acc = _el_rhs(spec, t, q, v)
        if g is None:
            return vq, acc, None, None
        s = _hamiltonian_s(spec, t, q, v)
        dg = np.einsum("ij,...jk,...kl->...il", j, s, g)
        return vq, acc, dg, s

    for i in range(steps):
        tb = np.full(q.shape[0], t)
        k1q, k1v, k1g, s_val = full_rhs(tb, q, v, gamma)
        tb2 = tb + 0.5 * h
        k2q, k2v, k2g, _ = full_rhs(
            tb2, q + 0.5 * h * k1q, v + 0.5 * h * k1v, None if gamma is None else gamma + 0.5 * h * k1g
        )
        k3q, k3v, k3g, _ = full_rhs(
            tb2, q + 0.5 * h * k2q, v + 0.5 * h * k2v, None if gamma is None else gamma + 0.5 * h * k2g
        )
        tb3 = tb + h
        k4q, k4v, k4g, _ = full_rhs(
            tb3, q + h * k3q, v + h * k3v, None if gamma is None else gamma + h * k3g
        )
        q = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if gamma is not None:
            gamma = gamma + (h / 6.0) * (k1g + 2 * k2g + 2 * k3g + k4g)
        t = t0 + (i + 1) * h
        if np.linalg.norm(v, axis=-1).max() > guard or not np.all(np.isfinite(v)):
            raise FlowError(
                f"blow-up guard |v| <= {guard:g} exceeded at t={t:.6g} "
                "(global-flow hypothesis suspect on this arc)"
            )
        if record is not None:
            record(i, t, q, v, gamma)
        s_last = s_val
    if gamma is not None:
        tb = np.full(q.shape[0], t)
        s_last = _hamiltonian_s(spec, tb, q, v)
    return q, v, gamma, s_last


def integrate_el(spec, state, t0, t1, steps, guard=BLOWUP_GUARD):
    """Integrate the Euler-Lagrange system from (q, v) over [t0, t1]."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = state if isinstance(state, PhaseState) else PhaseState(*state)
    q = state.q[None, :].copy()
    v = state.v[None, :].copy()
    n = q.shape[-1]
    m = steps + 1
    ts = np.linspace(t0, t1, m)
    qs = np.empty((m, n))
    vs = np.empty((m, n))
    qs[0], vs[0] = q[0], v[0]

    def rec(i, t, qq, vv, _g):
        qs[i + 1] = qq[0]
        vs[i + 1] = vv[0]

    _combined_rk4(spec, t0, t1, q, v, None, steps, guard=guard, record=rec)
    return Trajectory(t0=t0, t1=t1, ts=ts, qs=qs, vs=vs)


def integrate_el_batch(
    spec, q0, v0, t0s, dt, steps, guard=BLOWUP_GUARD, with_variational=True, gamma_record=None
):
    """Batched arcs: B initial states, common duration dt, per-arc start times.

    All arcs share the step size dt/steps but start at different absolute
    times t0s (B,).  Returns sample arrays (steps+1, B, N) plus, optionally,
    the variational flow (B, 2N, 2N) over each arc; pass a preallocated
    (steps+1, B, 2N, 2N) array as gamma_record to keep every sample of it.

    The per-arc time offsets ride through the derivative callables as a batch
    of absolute times.
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    bsz, n = q0.shape
    t0s = np.broadcast_to(np.asarray(t0s, dtype=float), (bsz,)).copy()
    h = dt / steps
    j = standard_j(n)
    qs = np.empty((steps + 1, bsz, n))
    vs = np.empty((steps + 1, bsz, n))
    qs[0], vs[0] = q0, v0
    gamma = np.broadcast_to(np.eye(2 * n), (bsz, 2 * n, 2 * n)).copy() if with_variational else None
    if gamma_record is not None:
        gamma_record[0] = gamma

    q, v = q0.copy(), v0.copy()
    for i in range(steps):
        t = t0s + i * h

        def rhs(tb, qq, vv, gg):
            vq, acc = _el_rhs(spec, tb, qq, vv)
            if gg is None:
                return vq, acc, None
            s = _hamiltonian_s(spec, tb, qq, vv)
            return vq, acc, np.einsum("ij,...jk,...kl->...il", j, s, gg)

        k1q, k1v, k1g = rhs(t, q, v, gamma)
        k2q, k2v, k2g = rhs(
            t + 0.5 * h, q + 0.5 * h * k1q, v + 0.5 * h * k1v, None if gamma is None else gamma + 0.5 * h * k1g
        )
        k3q, k3v, k3g = rhs(
            t + 0.5 * h, q + 0.5 * h * k2q, v + 0.5 * h * k2v, None if gamma is None else gamma + 0.5 * h * k2g
        )
        k4q, k4v, k4g = rhs(
            t + h, q + h * k3q, v + h * k3v, None if gamma is None else gamma + h * k3g
        )
        q = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if gamma is not None:
            gamma = gamma + (h / 6.0) * (k1g + 2 * k2g + 2 * k3g + k4g)
        if np.linalg.norm(v, axis=-1).max() > guard or not np.all(np.isfinite(v)):
            raise FlowError(f"blow-up guard exceeded in batched arc at step {i}")
        qs[i + 1], vs[i + 1] = q, v
        if gamma_record is not None:
            gamma_record[i + 1] = gamma
    return qs, vs, gamma


def integrate_linearized(spec, orbit, steps=None, drift_tol=1e-5, end_tol=1e-4):
    """Symplectic path of the linearized Hamiltonian flow along an orbit.

    Re-integrates the orbit from its initial state together with the
    variational equation, so the matrix path and the orbit samples share one
    grid.  Aborts if the symplecticity defect exceeds drift_tol, or if the
    re-integrated endpoint strays from the given arc by more than end_tol
    (solver-tolerance node jumps amplified along unstable orbits produce
    small but nonzero drift, hence the loose default).
    """
    steps = steps or max(orbit.step_count, 256)
    n = orbit.qs.shape[1]
    q = orbit.qs[0][None, :].copy()
    v = orbit.vs[0][None, :].copy()
    gamma0 = np.eye(2 * n)[None, :, :]
    m = steps + 1
    ts = np.linspace(orbit.t0, orbit.t1, m)
    mats = np.empty((m, 2 * n, 2 * n))
    s_mats = np.empty((m, 2 * n, 2 * n))
    oq = np.empty((m, n))
    ov = np.empty((m, n))
    mats[0] = np.eye(2 * n)
    tb0 = np.full(1, orbit.t0)
    s_mats[0] = _hamiltonian_s(spec, tb0, q, v)[0]
    oq[0], ov[0] = q[0], v[0]

    def rec(i, t, qq, vv, gg):
        mats[i + 1] = gg[0]
        oq[i + 1], ov[i + 1] = qq[0], vv[0]
        tb = np.full(1, t)
        s_mats[i + 1] = _hamiltonian_s(spec, tb, qq, vv)[0]

    _combined_rk4(spec, orbit.t0, orbit.t1, q, v, gamma0, steps, record=rec)
    path = SymplecticPath(dim=2 * n, ts=ts, mats=mats, s_mats=s_mats, orbit_qs=oq, orbit_vs=ov, spec=spec)
    defect = path.symplectic_defect()
    if defect > drift_tol:
        raise FlowError(
            f"symplecticity drift {defect:.3e} > {drift_tol:g}; increase the step count"
        )
    end_gap = max(
        float(np.linalg.norm(oq[-1] - orbit.qs[-1])), float(np.linalg.norm(ov[-1] - orbit.vs[-1]))
    )
    if end_gap > end_tol:
        raise FlowError(
            f"orbit re-integration deviates from the given trajectory by {end_gap:.3e}; "
            "the input arc does not solve the EL system at this resolution"
        )
    return path


def el_residual(spec, trajectory):
    """Max interior defect of d/dt(d_v L) - d_q L along sampled data.

    Uses 4th-order central differences of the sampled momentum; needs at
    least 5 samples and a uniform grid.
    """
    ts, qs, vs = trajectory.ts, trajectory.qs, trajectory.vs
    m = len(ts)
    if m < 5:
        raise ValueError("need at least 5 samples")
    h = ts[1] - ts[0]
    der = derivs_batch(spec, ts, qs, vs, names=("d_v", "d_q"))
    p = der["d_v"]
    dq = der["d_q"]
    dp = (p[:-4] - 8 * p[1:-3] + 8 * p[3:-1] - p[4:]) / (12.0 * h)
    defect = dp - dq[2:-2]
    return float(np.abs(defect).max())
