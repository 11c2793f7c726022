"""Shortening retraction onto the broken loop space and Bangert homotopies.

Loops here are uniform samples of W^{1,2} representatives, interpreted as
piecewise-linear tracks in a continuous lift; actions are per-edge
Gauss-Legendre integrals with the edge's constant finite-difference
velocity.  The homotopy constructions concatenate and reparametrize loops,
which node-based broken loops cannot express mid-homotopy, so sampled loops
are the working type and shorten() bridges back to the broken space.

Time allocation in the Bangert construction: each fixed loop copy spends
one unit of time; the moving pieces (the traveling loop and the horizontal
broken geodesics) share the one remaining unit proportionally to their
original parametrizations (loops have unit duration, geodesic pieces the
extent of their parameter interval).  This proportional-duration rule is
recorded in the result metadata; alternatives would change the pulling-loop
constant but not the 1/n structure of the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .broken import BrokenLoop, from_nodes
from .lagrangian import eval_batch
from .segment import minimal_lift, minimize_segment

__all__ = [
    "SampledLoop",
    "LoopPath",
    "BangertResult",
    "HomotopyError",
    "shorten",
    "shorten_homotopy",
    "bangert",
    "w1inf_bound",
    "sample_broken_loop",
]

_GAUSS_N, _GAUSS_W = np.polynomial.legendre.leggauss(5)
_GAUSS_N = 0.5 * (_GAUSS_N + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


class HomotopyError(RuntimeError):
    """Spacing/continuity preconditions of a homotopy construction failed."""


def _polyline_action(spec, ts, qs):
    """Gauss-Legendre action of a piecewise-linear track (lifted coords)."""
    ts = np.asarray(ts, dtype=float)
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    dt = np.diff(ts)
    keep = dt > 1e-15
    if not keep.any():
        return 0.0
    a = qs[:-1][keep]
    b = qs[1:][keep]
    t0 = ts[:-1][keep]
    h = dt[keep]
    vel = (b - a) / h[:, None]
    tq = t0[:, None] + h[:, None] * _GAUSS_N[None, :]
    qq = a[:, None, :] + (b - a)[:, None, :] * _GAUSS_N[None, :, None]
    vv = np.broadcast_to(vel[:, None, :], qq.shape)
    flat = eval_batch(spec, tq.reshape(-1), qq.reshape(-1, qs.shape[1]), vv.reshape(-1, qs.shape[1]))
    vals = flat.reshape(len(h), len(_GAUSS_N))
    return float(np.einsum("e,eg,g->", h, vals, _GAUSS_W))


@dataclass
class SampledLoop:
    """Uniformly sampled loop in a continuous lift; closes onto samples[0]."""

    period: int
    samples: np.ndarray           # (m, N) lifted positions at times j*period/m
    spec: object = None
    action: float = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.action is None:
            if self.spec is None:
                raise ValueError("need a spec to compute the loop action")
            ts, qs = self.closed_polyline()
            self.action = _polyline_action(self.spec, ts, qs) / self.period

    @property
    def m(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def closed_polyline(self):
        ts = np.linspace(0.0, self.period, self.m + 1)
        qs = np.vstack([self.samples, self.samples[0]])
        return ts, qs

    def value_at(self, t):
        """Linear interpolation on the closed polyline, t in [0, period]."""
        ts, qs = self.closed_polyline()
        t = np.clip(t, 0.0, self.period)
        i = min(int(t / self.period * self.m), self.m - 1)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1.0 - w) * qs[i] + w * qs[i + 1]

    def max_speed(self):
        ts, qs = self.closed_polyline()
        return float(np.linalg.norm(np.diff(qs, axis=0), axis=1).max() * self.m / self.period)


@dataclass
class LoopPath:
    """A sampled one-parameter family x -> loop, all of common period."""

    x0: float
    x1: float
    loops: list                   # SampledLoop at uniform x grid incl. endpoints

    def __post_init__(self):
        if len(self.loops) < 2:
            raise ValueError("need at least the two endpoint loops")
        periods = {lp.period for lp in self.loops}
        if len(periods) != 1:
            raise ValueError("all loops in a path must share the period")

    @property
    def xs(self):
        return np.linspace(self.x0, self.x1, len(self.loops))

    def endpoint_actions(self):
        return self.loops[0].action, self.loops[-1].action


def sample_broken_loop(loop: BrokenLoop, m=None):
    """Uniform samples of a broken loop's glued trajectory as a SampledLoop."""
    from .broken import glue_trajectory

    m = m or 16 * loop.k * loop.period
    traj = glue_trajectory(loop)
    ts = np.linspace(0.0, loop.period, m, endpoint=False)
    idx = np.clip(np.searchsorted(traj.ts, ts, side="right") - 1, 0, len(traj.ts) - 2)
    w = ((ts - traj.ts[idx]) / (traj.ts[idx + 1] - traj.ts[idx]))[:, None]
    samples = (1.0 - w) * traj.qs[idx] + w * traj.qs[idx + 1]
    return SampledLoop(period=loop.period, samples=samples, spec=loop.spec)


def shorten(spec, radii, loop: SampledLoop, k):
    """Retraction r: replace the loop by the broken loop through its i/k values.

    Monotone: each segment is the action minimizer between its endpoints, so
    the result's action does not exceed the loop's beyond quadrature slack.
    """
    tau = loop.period
    nodes = np.stack([loop.value_at(i / k) for i in range(tau * k)])
    gaps = np.linalg.norm(minimal_lift(np.roll(nodes, -1, axis=0) - nodes), axis=1)
    if gaps.max() >= radii.rho0:
        c_norm = loop.action + radii.constants.get("shift", 0.0)
        ell_lower = radii.constants.get("ell_lower", 0.5)
        eps_bar = radii.rho0**2 * ell_lower / max(c_norm, 1e-12)
        k_req = int(np.ceil(1.0 / min(eps_bar, radii.eps0)))
        raise HomotopyError(
            f"sample spacing {gaps.max():.4g} >= rho0 = {radii.rho0:.4g}; "
            f"the sublevel estimate requires k >= {k_req}"
        )
    return from_nodes(spec, radii, tau, k, nodes)


def shorten_homotopy(spec, radii, loop: SampledLoop, k, s):
    """The deformation R(s, .) from the loop to its shortening.

    For s in [i/k, (i+1)/k] (scaled to the loop period): broken arcs up to
    i/k, the minimizer from the loop's i/k value to its value at s, and the
    untouched tail.  Returns a SampledLoop carrying the composite action.
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    tau = loop.period
    u = s * tau * k  # progress measured in segment counts
    i_full = int(np.floor(u + 1e-12))
    ts_parts = []
    qs_parts = []
    action = 0.0
    for i in range(min(i_full, tau * k)):
        seg = minimize_segment(
            spec, i / k, (i + 1) / k, loop.value_at(i / k), loop.value_at((i + 1) / k), radii
        )
        ts_parts.append(seg.ts[:-1])
        qs_parts.append(seg.qs[:-1])
        action += seg.action
    t_mid = u / k
    if i_full < tau * k and t_mid > i_full / k + 1e-12:
        seg = minimize_segment(
            spec, i_full / k, t_mid, loop.value_at(i_full / k), loop.value_at(t_mid), radii
        )
        ts_parts.append(seg.ts[:-1])
        qs_parts.append(seg.qs[:-1])
        action += seg.action
    if t_mid < tau - 1e-12:
        # untouched tail of the original polyline
        mt, mq = loop.closed_polyline()
        inside = (mt > t_mid + 1e-12) & (mt < tau - 1e-12)
        tail_t = np.concatenate([[t_mid], mt[inside], [tau]])
        tail_q = np.vstack([loop.value_at(t_mid), mq[inside], mq[-1]])
        action += _polyline_action(spec, tail_t, tail_q)
        ts_parts.append(tail_t[:-1])
        qs_parts.append(tail_q[:-1])
    track_t = np.concatenate(ts_parts + [[tau]])
    track_q = np.vstack(qs_parts + [qs_parts[0][0][None, :] + _closure_offset(qs_parts)])
    # lift continuity: successive parts already share endpoints by construction
    out_samples = _resample_track(track_t, track_q, loop.m, tau)
    return SampledLoop(period=tau, samples=out_samples, spec=spec, action=action / tau)


def _closure_offset(qs_parts):
    # closing vertex equals the starting one: the construction never changes
    # the lift class of the loop
    return np.zeros_like(qs_parts[0][0])


def _resample_track(ts, qs, m, period):
    out_t = np.linspace(0.0, period, m, endpoint=False)
    idx = np.clip(np.searchsorted(ts, out_t, side="right") - 1, 0, len(ts) - 2)
    span = ts[idx + 1] - ts[idx]
    span = np.where(span > 1e-15, span, 1.0)
    w = ((out_t - ts[idx]) / span)[:, None]
    return (1.0 - w) * qs[idx] + w * qs[idx + 1]


# ---------------------------------------------------------------------------
# Bangert homotopy for one-parameter families


@dataclass
class BangertResult:
    n: int
    path: LoopPath
    x_points: np.ndarray
    mean_actions: np.ndarray      # mean action of theta^((n)) at each x point
    pulling_actions: np.ndarray   # action of the pulling loop at each x point
    c_theta: float
    endpoint_actions: tuple
    slack: np.ndarray             # bound minus value, per x point
    bound_slack: float
    tracks: list = field(repr=False, default_factory=list)
    metadata: dict = field(default_factory=dict)

    def homotopy_eval(self, s, x, m=None):
        """Slice B(s, x) as a period-n SampledLoop (snapped to the lattice)."""
        spec = self.metadata["spec"]
        sub = _subpath(self.path, s)
        if sub is None or x > sub.x1 + 1e-12:
            base = _nearest_loop(self.path, x)
            track_t, track_q = _iterate_track(base, self.n)
        else:
            xx, (track_t, track_q), _, _ = _siter_slice(spec, sub, self.n, _snap(sub, x))
        m = m or self.path.loops[0].m * self.n
        samples = _resample_track(track_t, track_q, m, self.n)
        return SampledLoop(period=self.n, samples=samples, spec=spec)


def _snap(path, x):
    xs = path.xs
    return float(xs[int(np.argmin(np.abs(xs - x)))])


def _nearest_loop(path, x):
    xs = path.xs
    return path.loops[int(np.argmin(np.abs(xs - x)))]


def _subpath(path, s):
    """The restriction of the path to [x0, x0 + s (x1 - x0)], on-grid."""
    if s <= 1e-12:
        return None
    count = len(path.loops)
    j = int(round(s * (count - 1)))
    if j < 1:
        return None
    return LoopPath(x0=path.x0, x1=path.xs[j], loops=path.loops[: j + 1])


def _iterate_track(loop: SampledLoop, n):
    ts, qs = loop.closed_polyline()
    parts_t = [ts[:-1] + j * loop.period for j in range(n)]
    parts_q = [qs[:-1]] * n
    track_t = np.concatenate(parts_t + [[n * loop.period]])
    track_q = np.vstack(parts_q + [qs[0][None, :]])
    return track_t, track_q


def _horizontal_vertices(path: LoopPath, x_from, x_to, stride):
    """Vertices (x values and points) of the horizontal broken geodesic."""
    xs = path.xs
    i_from = int(np.argmin(np.abs(xs - x_from)))
    i_to = int(np.argmin(np.abs(xs - x_to)))
    step = stride if i_to >= i_from else -stride
    idx = list(range(i_from, i_to, step)) + [i_to]
    pts = [path.loops[i].samples[0] for i in idx]
    verts = [pts[0]]
    for p in pts[1:]:
        verts.append(verts[-1] + minimal_lift(p - verts[-1]))
    return np.array([xs[i] for i in idx]), np.vstack(verts)


class _TrackBuilder:
    """Accumulates contiguous pieces into one lifted polyline."""

    def __init__(self, start_point):
        self.ts = [np.array([0.0])]
        self.qs = [np.atleast_2d(start_point)]
        self.t = 0.0

    def add(self, verts_t, verts_q, duration):
        """Append a piece; descending vertex times mean a reversed traversal."""
        verts_t = np.asarray(verts_t, dtype=float)
        verts_q = np.atleast_2d(np.asarray(verts_q, dtype=float))
        if duration <= 1e-15:
            return
        span = verts_t[-1] - verts_t[0]
        if abs(span) <= 1e-15:
            return
        local = (verts_t - verts_t[0]) / span * duration
        # lift continuity: shift the piece so it starts at the current end
        offset = self.qs[-1][-1] - verts_q[0]
        self.ts.append(self.t + local[1:])
        self.qs.append(verts_q[1:] + offset)
        self.t += duration

    def add_loop(self, loop: SampledLoop, duration):
        ts, qs = loop.closed_polyline()
        self.add(ts, qs, duration)

    def finish(self):
        return np.concatenate(self.ts), np.vstack(self.qs)


def _siter_slice(spec, path: LoopPath, n, x, stride=1):
    """One slice of theta^((n)) at parameter x, returned as a lifted track.

    Returns (x, (track_t, track_q), pulling_track, window_index).
    """
    x0, x1 = path.x0, path.x1
    span = x1 - x0
    if span <= 1e-15:
        loop = path.loops[0]
        return x, _iterate_track(loop, n), _degenerate_pulling(loop), 0
    w = span / n
    j = min(int((x - x0) / w + 1e-12), n - 1)
    y = x - x0 - j * w
    xp = _snap(path, x0 + n * y)
    loop0, loop1 = path.loops[0], path.loops[-1]
    loop_p = _nearest_loop(path, xp)

    def build(include_fixed):
        tb = _TrackBuilder(loop_p.samples[0] if j == n - 1 else loop0.samples[0])
        if j == 0:
            out_x, out_q = _horizontal_vertices(path, x0, xp, stride)
            d = 1.0 + 2.0 * (xp - x0)
            if include_fixed:
                for _ in range(n - 1):
                    tb.add_loop(loop0, 1.0)
            tb.add(out_x, out_q, (xp - x0) / d)
            tb.add_loop(loop_p, 1.0 / d)
            tb.add(out_x[::-1], out_q[::-1], (xp - x0) / d)
            return tb
        if j < n - 1:
            out_x, out_q = _horizontal_vertices(path, x0, xp, stride)
            mid_x, mid_q = _horizontal_vertices(path, xp, x1, stride)
            back_x, back_q = _horizontal_vertices(path, x0, x1, stride)
            d = 1.0 + 2.0 * span
            if include_fixed:
                for _ in range(n - j - 1):
                    tb.add_loop(loop0, 1.0)
            tb.add(out_x, out_q, (xp - x0) / d)
            tb.add_loop(loop_p, 1.0 / d)
            tb.add(mid_x, mid_q, (x1 - xp) / d)
            if include_fixed:
                for _ in range(j):
                    tb.add_loop(loop1, 1.0)
            tb.add(back_x[::-1], back_q[::-1], span / d)
            return tb
        mid_x, mid_q = _horizontal_vertices(path, xp, x1, stride)
        d = 1.0 + 2.0 * (x1 - xp)
        tb.add_loop(loop_p, 1.0 / d)
        tb.add(mid_x, mid_q, (x1 - xp) / d)
        if include_fixed:
            for _ in range(n - 1):
                tb.add_loop(loop1, 1.0)
        tb.add(mid_x[::-1], mid_q[::-1], (x1 - xp) / d)
        return tb

    track = build(include_fixed=True).finish()
    pull = build(include_fixed=False).finish()
    return x, track, pull, j


def _degenerate_pulling(loop: SampledLoop):
    ts, qs = loop.closed_polyline()
    return ts.copy(), qs.copy()


def bangert(spec, path: LoopPath, n, max_ev_step=0.45):
    """The Bangert construction theta^((n)) for a one-parameter loop family.

    Verifies, at every induced x sample, the mean-action estimate

        a^n(theta^((n))(x)) <= max{A(theta(x0)), A(theta(x1))} + C(theta)/n

    with C(theta) the maximal pulling-loop action, and records the slack.
    The initial-point curve must move slowly enough along the sampled grid
    for horizontal geodesics to use unambiguous minimal lifts.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if path.loops[0].period != 1:
        raise ValueError("the construction expects a family of 1-periodic loops")
    ev_pts = np.stack([lp.samples[0] for lp in path.loops])
    steps = np.linalg.norm(minimal_lift(np.diff(ev_pts, axis=0)), axis=1)
    if len(steps) and steps.max() >= max_ev_step:
        raise HomotopyError(
            f"initial-point curve moves {steps.max():.3g} >= {max_ev_step} between "
            "x samples; refine the x-sampling of the path"
        )

    xs = path.xs
    span = path.x1 - path.x0
    induced = set()
    w = span / n if n > 0 else 0.0
    for j in range(n):
        for xg in xs:
            x = path.x0 + j * w + (xg - path.x0) / n
            induced.add(round(float(x), 12))
    x_points = np.array(sorted(induced))

    mean_actions = np.empty(len(x_points))
    pulling_actions = np.empty(len(x_points))
    tracks = []
    for i, x in enumerate(x_points):
        _, track, pull, _ = _siter_slice(spec, path, n, x)
        mean_actions[i] = _polyline_action(spec, track[0], track[1]) / n
        pulling_actions[i] = _polyline_action(spec, pull[0], pull[1])
        tracks.append(track)

    c_theta = float(pulling_actions.max())
    a0, a1 = path.endpoint_actions()
    bound = max(a0, a1) + c_theta / n
    slack = bound - mean_actions
    return BangertResult(
        n=n,
        path=path,
        x_points=x_points,
        mean_actions=mean_actions,
        pulling_actions=pulling_actions,
        c_theta=c_theta,
        endpoint_actions=(a0, a1),
        slack=slack,
        bound_slack=float(slack.min()),
        tracks=tracks,
        metadata={
            "spec": spec,
            "allocation": "fixed copies keep unit time; moving pieces share one "
            "unit proportionally to their original durations",
        },
    )


def w1inf_bound(result: BangertResult):
    """Max finite-difference speed over all stored homotopy slices."""
    worst = 0.0
    for track_t, track_q in result.tracks:
        dt = np.diff(track_t)
        keep = dt > 1e-15
        if not keep.any():
            continue
        speed = np.linalg.norm(np.diff(track_q, axis=0)[keep], axis=1) / dt[keep]
        worst = max(worst, float(speed.max()))
    return worst
