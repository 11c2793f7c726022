"""Conley-Zehnder-Long index pair of a periodic orbit's symplectic path.

The index is a Maslov-type crossing count.  For a path Gamma: [0, tau] ->
Sp(2N) with Gamma(0) = I generated by Gamma' = J S(t) Gamma, and a small
rotation e^{-eps J}, the crossings are the zeros of

    g_eps(t) = det(e^{-eps J} Gamma(t) - I)   on (0, tau],

each counted with the signature of the crossing form, i.e. of S_eps(t*)
restricted to the kernel of (e^{-eps J} Gamma(t*) - I), where
S_eps = R S R^T.  The index is

    iota = -N + lim_{eps -> 0+} sum of crossing signatures,

the limit taken along a decreasing eps sequence until the integer
stabilizes.  This normalization gives the small positive/negative rotation
paths index +1 / -1, reproduces the Morse index of the discrete action on
every calibration system, and resolves degenerate endpoints the way a
negative rotation of the target eigenvalue does (iterates of a full
elliptic turn pick up the lower count).

The nullity is the geometric multiplicity of eigenvalue 1 of Gamma(tau),
computed from a singular-value threshold on Gamma(tau) - I.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .flow import SymplecticPath, integrate_linearized, standard_j

__all__ = [
    "IndexPair",
    "IterationProfile",
    "PathEvaluator",
    "AnalyticPath",
    "CrossingClusterError",
    "IndexMismatchError",
    "IterationInequalityError",
    "cz_index",
    "index_of_orbit",
    "iteration_profile",
]

EPS_SEQUENCE = (1e-3, 5e-4, 2.5e-4, 1.25e-4, 6.25e-5, 3.125e-5)


class CrossingClusterError(RuntimeError):
    """Two crossings within bracketing resolution; a finer path is needed."""


class IndexMismatchError(RuntimeError):
    """Symplectic-path index disagrees with the discrete Hessian inertia."""


class IterationInequalityError(RuntimeError):
    """An iteration inequality failed; signals an index computation bug."""


@dataclass(frozen=True)
class IndexPair:
    iota: int
    nu: int

    def as_tuple(self):
        return (self.iota, self.nu)


def _rotation(eps, n):
    j = standard_j(n)
    return np.cos(eps) * np.eye(2 * n) + np.sin(eps) * (-j)


class PathEvaluator:
    """Dense evaluation of a (possibly iterated) symplectic path.

    Off-sample values come from two RK4 steps of the linear equation
    Gamma' = J S(t) Gamma with S linearly interpolated between samples:
    cheap, and accurate to far below the crossing scales.  Iterates use the
    periodicity Gamma(t + m tau) = Gamma(t) Gamma(tau)^m of the linearized
    flow along a periodic orbit.
    """

    def __init__(self, ts, mats, s_mats, n_periods=1, mp_horizon=1e10):
        self.ts = np.asarray(ts, dtype=float)
        self.base_mats = np.asarray(mats, dtype=float)
        self.s_mats = np.asarray(s_mats, dtype=float)
        self.dim = self.base_mats.shape[-1]
        self.n = self.dim // 2
        self.tau = float(self.ts[-1] - self.ts[0])
        self.n_periods = int(n_periods)
        self._j = standard_j(self.n)
        self.monodromy = self.base_mats[-1]
        self.powers = [np.eye(self.dim)]
        for _ in range(self.n_periods):
            self.powers.append(self.powers[-1] @ self.monodromy)
        # strongly hyperbolic iterates exceed the float64 cancellation
        # horizon: det(RGamma - I) with ||Gamma|| = K carries absolute noise
        # ~1e-16 K^2, so beyond K ~ 1e10 the anchors switch to big floats
        norm_m = float(np.linalg.norm(self.monodromy, 2))
        self.growth = norm_m ** max(self.n_periods - 1, 0)
        self.use_mp = self.growth > mp_horizon
        self.powers_mp = None
        if self.use_mp:
            import mpmath

            digits = int(self.n_periods * max(np.log10(max(norm_m, 1.0)), 0.0)) + 40
            self._mp = mpmath.mp.clone()
            self._mp.dps = digits
            eye = _mp_eye(self._mp, self.dim)
            mono = _to_mp(self._mp, self.monodromy)
            self.powers_mp = [eye]
            for _ in range(self.n_periods):
                self.powers_mp.append(_mp_matmul(self.powers_mp[-1], mono))

    @classmethod
    def from_path(cls, path: SymplecticPath, n_periods=1):
        return cls(path.ts, path.mats, path.s_mats, n_periods=n_periods)

    @property
    def total_tau(self):
        return self.tau * self.n_periods

    def full_grid(self):
        """Sample times and matrices over all periods, endpoint included."""
        m = len(self.ts)
        ts_all = [self.ts[:-1] + p * self.tau for p in range(self.n_periods)]
        ts_all = np.concatenate(ts_all + [np.array([self.total_tau])])
        mats_all = np.concatenate(
            [
                np.einsum("mij,jk->mik", self.base_mats[:-1], self.powers[p])
                for p in range(self.n_periods)
            ]
            + [self.powers[self.n_periods][None, :, :]]
        )
        return ts_all, mats_all

    def s_at(self, t):
        """S(t) by periodic linear interpolation of the samples."""
        s = np.mod(np.asarray(t, dtype=float) - self.ts[0], self.tau) + self.ts[0]
        idx = np.clip(np.searchsorted(self.ts, s, side="right") - 1, 0, len(self.ts) - 2)
        w = (s - self.ts[idx]) / (self.ts[idx + 1] - self.ts[idx])
        return (1.0 - w)[..., None, None] * self.s_mats[idx] + w[..., None, None] * self.s_mats[
            idx + 1
        ]

    def eval_many(self, t):
        """Gamma(t) for an array of times in [0, n_periods * tau]."""
        t = np.asarray(t, dtype=float)
        period_idx = np.clip((t - self.ts[0]) // self.tau, 0, self.n_periods - 1).astype(int)
        s = t - period_idx * self.tau
        idx = np.clip(np.searchsorted(self.ts, s, side="right") - 1, 0, len(self.ts) - 2)
        base_t = self.ts[idx]
        delta = s - base_t
        gam = self.base_mats[idx].copy()
        # two RK4 steps of Gamma' = J S Gamma with S interpolated linearly
        h = delta / 2.0
        cur_t = base_t.copy()
        for _ in range(2):
            k1 = self._rhs(cur_t, gam)
            k2 = self._rhs(cur_t + 0.5 * h, gam + 0.5 * h[..., None, None] * k1)
            k3 = self._rhs(cur_t + 0.5 * h, gam + 0.5 * h[..., None, None] * k2)
            k4 = self._rhs(cur_t + h, gam + h[..., None, None] * k3)
            gam = gam + (h[..., None, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            cur_t = cur_t + h
        out = np.einsum("bij,bjk->bik", gam, np.stack([self.powers[p] for p in period_idx]))
        return out

    def _rhs(self, t, gam):
        s = self.s_at(t)
        return np.einsum("ij,bjk,bkl->bil", self._j, s, gam)


    # -- determinant and kernel access, float or big-float backed ------------

    def det_grid(self, rot):
        """(times, det(rot Gamma - I)) over the full iterated sample grid."""
        if not self.use_mp:
            ts_all, mats_all = self.full_grid()
            return ts_all, _dets_eig1(mats_all, rot)
        m = len(self.ts)
        ts_all = np.concatenate(
            [self.ts[:-1] + p * self.tau for p in range(self.n_periods)]
            + [np.array([self.total_tau])]
        )
        rb = np.einsum("ij,mjk->mik", rot, self.base_mats[:-1])
        dets = np.empty(len(ts_all))
        pos = 0
        for p in range(self.n_periods):
            anchor = self.powers_mp[p]
            for i in range(m - 1):
                dets[pos] = _mp_det_shift(self._mp, rb[i], anchor, self.dim)
                pos += 1
        final = _mp_matmul(_to_mp(self._mp, rot), self.powers_mp[self.n_periods])
        dets[pos] = float(_mp_det(self._mp, _mp_sub_eye(final, self.dim), self.dim))
        return ts_all, dets

    def det_at(self, t, rot):
        if not self.use_mp:
            return float(_dets_eig1(self.eval_many(np.array([t])), rot)[0])
        gam_rel, p = self._eval_rel(t)
        rb = rot @ gam_rel
        return _mp_det_shift(self._mp, rb, self.powers_mp[p], self.dim)

    def det_many(self, t, rot):
        if not self.use_mp:
            return _dets_eig1(self.eval_many(np.asarray(t, dtype=float)), rot)
        return np.array([self.det_at(float(x), rot) for x in np.asarray(t, dtype=float)])

    def kernel_svd_at(self, t, rot):
        """Singular values and right vectors of (rot Gamma(t) - I).

        Beyond the float horizon the matrix is built in big floats and
        row-rescaled before the SVD: row scaling leaves the right kernel
        unchanged while bringing huge hyperbolic rows down to unit size, so
        the crossing directions stay resolvable.
        """
        if not self.use_mp:
            m = rot @ self.eval_many(np.array([t]))[0] - np.eye(self.dim)
        else:
            gam_rel, p = self._eval_rel(t)
            full = _mp_matmul(_to_mp(self._mp, rot @ gam_rel), self.powers_mp[p])
            m = _mp_balanced_float(self._mp, _mp_sub_eye(full, self.dim), self.dim)
        _, sig, vt = np.linalg.svd(m)
        return sig, vt

    def _eval_rel(self, t):
        """Float continuation Gamma_rel with Gamma(t) = Gamma_rel powers[p]."""
        t = float(t)
        p = int(np.clip((t - self.ts[0]) // self.tau, 0, self.n_periods - 1))
        s = t - p * self.tau
        gam = self.eval_base(np.array([s]))[0]
        return gam, p

    def eval_base(self, t):
        """Gamma over the base period only (no anchors), batched."""
        saved = self.n_periods
        # restrict the lookup to the base period; anchors applied by callers
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0, len(self.ts) - 2)
        base_t = self.ts[idx]
        delta = t - base_t
        gam = self.base_mats[idx].copy()
        h = delta / 2.0
        cur_t = base_t.copy()
        for _ in range(2):
            k1 = self._rhs(cur_t, gam)
            k2 = self._rhs(cur_t + 0.5 * h, gam + 0.5 * h[..., None, None] * k1)
            k3 = self._rhs(cur_t + 0.5 * h, gam + 0.5 * h[..., None, None] * k2)
            k4 = self._rhs(cur_t + h, gam + h[..., None, None] * k3)
            gam = gam + (h[..., None, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            cur_t = cur_t + h
        assert saved == self.n_periods
        return gam

    def nu_of_power(self, n_iter, nu_tol=1e-6):
        """Geometric multiplicity of eigenvalue 1 of the n-th monodromy power.

        n = 1 uses the singular-value rank of Gamma(tau) - I directly.  For
        iterates the same rank is read off the spectral structure of the
        single-period monodromy M (dim ker(M^n - I) counts the unit-circle
        eigenvalue clusters of M whose angle is a multiple of 2 pi / n, each
        with its geometric multiplicity), which stays well conditioned where
        forming M^n itself would drown eigenvalue 1 in the hyperbolic growth.
        """
        if n_iter == 1:
            return _nu_of(self.monodromy, nu_tol)
        m = self.monodromy
        evals = np.linalg.eig(m)[0]
        norm_scale = max(np.linalg.norm(m, 2), 1.0)
        done = np.zeros(len(evals), dtype=bool)
        total = 0
        for i, mu in enumerate(evals):
            if done[i] or abs(abs(mu) - 1.0) > 1e-6:
                continue
            cluster = np.abs(evals - mu) < 1e-6 * norm_scale
            conj_cluster = np.abs(evals - np.conj(mu)) < 1e-6 * norm_scale
            done |= cluster | conj_cluster
            if abs(mu**n_iter - 1.0) > 1e-6:
                continue
            sig = np.linalg.svd(m - mu * np.eye(self.dim), compute_uv=False)
            geo = int((sig < nu_tol * norm_scale).sum())
            real_like = abs(mu.imag) < 1e-6
            total += geo if real_like else 2 * geo
        return total


class AnalyticPath(PathEvaluator):
    """Evaluator built from closed-form Gamma(t) and S(t) callables (tests)."""

    def __init__(self, gamma_fn, s_fn, tau, dim, samples=2000, n_periods=1):
        ts = np.linspace(0.0, tau, samples + 1)
        mats = np.stack([gamma_fn(t) for t in ts])
        s_mats = np.stack([s_fn(t) for t in ts])
        super().__init__(ts, mats, s_mats, n_periods=n_periods)


def _dets_eig1(mats, rot):
    return np.linalg.det(np.einsum("ij,bjk->bik", rot, mats) - np.eye(mats.shape[-1]))


# -- small big-float matrix helpers (lists of lists of mpf) -----------------


def _to_mp(ctx, a):
    return [[ctx.mpf(float(x)) for x in row] for row in a]


def _mp_eye(ctx, n):
    return [[ctx.mpf(1) if i == j else ctx.mpf(0) for j in range(n)] for i in range(n)]


def _mp_matmul(a, b):
    n = len(a)
    m = len(b[0])
    inner = len(b)
    return [[sum(a[i][k] * b[k][j] for k in range(inner)) for j in range(m)] for i in range(n)]


def _mp_sub_eye(a, n):
    return [[a[i][j] - (1 if i == j else 0) for j in range(n)] for i in range(n)]


def _mp_det(ctx, a, n):
    a = [row[:] for row in a]
    det = ctx.mpf(1)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(a[r][col]))
        if a[piv][col] == 0:
            return ctx.mpf(0)
        if piv != col:
            a[col], a[piv] = a[piv], a[col]
            det = -det
        det *= a[col][col]
        inv = 1 / a[col][col]
        for r in range(col + 1, n):
            f = a[r][col] * inv
            if f == 0:
                continue
            for c in range(col + 1, n):
                a[r][c] -= f * a[col][c]
    return det


def _mp_det_shift(ctx, float_prefix, anchor, n):
    """float(det(float_prefix . anchor - I)) in big-float arithmetic."""
    pref = _to_mp(ctx, float_prefix)
    prod = _mp_matmul(pref, anchor)
    return float(_mp_det(ctx, _mp_sub_eye(prod, n), n))


def _mp_balanced_float(ctx, a, n):
    """Row-rescaled float image of an mp matrix (kernel-preserving)."""
    out = np.empty((n, n))
    for i in range(n):
        row_max = max(abs(x) for x in a[i])
        if row_max == 0:
            out[i] = 0.0
            continue
        inv = 1 / row_max
        out[i] = [float(x * inv) for x in a[i]]
    return out


def _form_signature(ev, rot, eps, t_star, basis, cluster_tol=1e-8):
    s_eps = rot @ ev.s_at(np.array([t_star]))[0] @ rot.T
    scale = max(np.abs(s_eps).max(), 1e-30)
    q = basis.T @ s_eps @ basis
    evals = np.linalg.eigvalsh(q)
    if np.any(np.abs(evals) < cluster_tol * scale):
        raise CrossingClusterError(
            f"degenerate crossing form at t={t_star:.6g} (eps={eps:g}); "
            "re-run with a finer path sampling"
        )
    return int((evals > 0).sum()) - int((evals < 0).sum())


def _crossing_contribution(ev, rot, eps, t_star):
    """Signature contribution of a single sign-change root (always odd, +/-1).

    When a second singular direction is nearly as small as the kernel one
    (a barely-resolved pair), the computed kernel vector may mix the two
    branches; that is harmless exactly when the crossing form is definite
    on their span, so the definite case keeps its sign and the indefinite
    case is refused as an unresolvable cluster.
    """
    sig, vt = ev.kernel_svd_at(t_star, rot)
    smax = max(sig[0], 1.0)
    ambiguous = sig[-2] < max(10.0 * sig[-1], 1e-11 * smax)
    if not ambiguous:
        return _form_signature(ev, rot, eps, t_star, vt[-1:].T)
    basis = vt[-2:].T
    pair_sig = _form_signature(ev, rot, eps, t_star, basis)
    if abs(pair_sig) != 2:
        raise CrossingClusterError(
            f"indefinite crossing pair at t={t_star:.6g} (eps={eps:g}); "
            "re-run with a finer path sampling"
        )
    return pair_sig // 2


def _scan_crossings(ev, eps):
    """All crossings of det(e^{-eps J} Gamma(t) - I) on (0, total_tau].

    Returns a list of (t_star, signature).  Sign changes of the determinant
    on the base grid are bracketed and bisected.  Additionally, any base
    interval where |g| is small relative to its local variation could hide a
    root (or a root pair) between samples, so those stretches are re-sampled
    at a step proportional to eps, the scale on which resolving a degenerate
    time separates crossing pairs.
    """
    rot = _rotation(eps, ev.n)
    ts, g = ev.det_grid(rot)
    g[g == 0.0] = 1e-300  # measure-zero grid hit; resolved by refinement
    h = ts[1] - ts[0]

    variation = np.abs(np.diff(g))
    small = np.minimum(np.abs(g[:-1]), np.abs(g[1:]))
    suspicious = small < 6.0 * variation
    flips = g[:-1] * g[1:] < 0.0
    intervals = np.flatnonzero(suspicious | flips)

    windows = []
    for i in intervals:
        if windows and i <= windows[-1][1] + 1:
            windows[-1] = (windows[-1][0], int(i) + 1)
        else:
            windows.append((int(i), int(i) + 1))

    crossings = []
    for a, b in windows:
        t_lo = ts[a] if a > 0 else 0.0
        t_hi = ts[b]
        step = min(h, eps / 25.0)
        count = max(int(np.ceil((t_hi - t_lo) / step)), 8)
        count = min(count, 40000)
        fine_t = np.linspace(t_lo, t_hi, count + 1)
        fine_g = ev.det_many(fine_t, rot)
        # g(0) = det(e^{-eps J} - I) > 0, so every bracketed root is interior
        flip_idx = np.flatnonzero(fine_g[:-1] * fine_g[1:] < 0.0)
        for j in flip_idx:
            t_star = _bisect_root(ev, rot, fine_t[j], fine_t[j + 1], fine_g[j])
            crossings.append((t_star, _crossing_contribution(ev, rot, eps, t_star)))
        crossings.extend(_dip_crossings(ev, rot, eps, fine_t, fine_g))
    return sorted(crossings)


def _bisect_root(ev, rot, lo, hi, g_lo, iters=48):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        g_mid = ev.det_at(mid, rot)
        if g_mid == 0.0:
            return mid
        if g_lo * g_mid < 0.0:
            hi = mid
        else:
            lo, g_lo = mid, g_mid
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _dip_crossings(ev, rot, eps, fine_t, fine_g):
    """Roots that leave no sign change at the window resolution.

    A pair of transversal crossings separated by less than the grid step, or
    an exactly tangential double root, shows up as a deep positive dip of
    |g|.  Candidate dips are clustered, each cluster re-sampled on a
    micro-grid; pairs that resolve become ordinary sign-change roots.  An
    unresolved cluster is classified through the subspace of singular
    directions that can reach the crossing locus inside the bracket: a
    definite restricted crossing form there means monotone eigenvalue
    branches, which cross exactly once each, so the cluster contributes the
    form's signature; an indefinite form is refused as unresolvable.
    """
    out = []
    absg = np.abs(fine_g)
    window_scale = max(absg.max(), 1e-300)
    local_min = (absg[1:-1] < absg[:-2]) & (absg[1:-1] <= absg[2:])
    no_flip = (fine_g[:-2] * fine_g[1:-1] > 0.0) & (fine_g[1:-1] * fine_g[2:] > 0.0)
    deep = absg[1:-1] <= 1e-6 * window_scale
    minima = list(np.flatnonzero(local_min & no_flip & deep) + 1)
    if not minima:
        return out

    clusters = [[minima[0]]]
    for j in minima[1:]:
        if j - clusters[-1][-1] <= 6:
            clusters[-1].append(j)
        else:
            clusters.append([j])

    for cluster in clusters:
        lo = fine_t[max(cluster[0] - 1, 0)]
        hi = fine_t[min(cluster[-1] + 1, len(fine_t) - 1)]
        micro_t = np.linspace(lo, hi, 801)
        micro_g = ev.det_many(micro_t, rot)
        flips = np.flatnonzero(micro_g[:-1] * micro_g[1:] < 0.0)
        if len(flips):
            for i in flips:
                t_star = _bisect_root(ev, rot, micro_t[i], micro_t[i + 1], micro_g[i])
                out.append((t_star, _crossing_contribution(ev, rot, eps, t_star)))
            continue
        t_min = _ternary_min(ev, rot, lo, hi)
        sig, vt = ev.kernel_svd_at(t_min, rot)
        s_here = ev.s_at(np.array([t_min]))[0]
        smax = max(sig[0], 1.0)
        # how far a branch can move toward the crossing locus inside [lo, hi]
        reach = np.linalg.norm(s_here, 2) * smax * (hi - lo)
        if sig[-1] > 1e-6 * smax:
            continue  # no branch actually reaches the crossing locus
        kdim = max(int((sig < 3.0 * reach).sum()), 1)
        if kdim == 1:
            continue  # a lone branch cannot cross twice without a sign change
        basis = vt[-kdim:].T
        contribution = _form_signature(ev, rot, eps, t_min, basis)
        if abs(contribution) != kdim:
            raise CrossingClusterError(
                f"indefinite crossing cluster at t={t_min:.6g} (eps={eps:g}); "
                "re-run with a finer path sampling"
            )
        out.append((t_min, contribution))
    return out


def _ternary_min(ev, rot, lo, hi, iters=70):
    for _ in range(iters):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if abs(ev.det_at(m1, rot)) < abs(ev.det_at(m2, rot)):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def _nu_of(mat, nu_tol=1e-6):
    m = mat - np.eye(mat.shape[0])
    sig = np.linalg.svd(m, compute_uv=False)
    return int((sig < nu_tol * max(sig[0], 1.0)).sum())


def _as_evaluator(path, n_periods=1):
    if isinstance(path, PathEvaluator):
        return path
    if isinstance(path, SymplecticPath):
        defect = path.symplectic_defect()
        if defect > 1e-6:
            raise ValueError(f"path violates symplecticity: defect {defect:.3e}")
        if np.abs(path.mats[0] - np.eye(path.dim)).max() > 1e-12:
            raise ValueError("path must start at the identity")
        return PathEvaluator.from_path(path, n_periods=n_periods)
    raise TypeError(f"cannot evaluate {type(path).__name__} as a symplectic path")


def _stabilized_counts(ev, n_values, eps_values):
    """Index counts for each requested iterate, stabilized over eps."""
    results = None
    prev = None
    for eps in eps_values:
        crossings = _scan_crossings(ev, eps)
        counts = {}
        for n in n_values:
            t_cut = n * ev.tau * (1.0 + 1e-12)
            counts[n] = sum(s for (t, s) in crossings if t <= t_cut)
        if prev is not None and prev == counts:
            return counts
        prev, results = counts, counts
    raise CrossingClusterError(
        f"crossing count failed to stabilize over eps sequence {eps_values}; "
        "re-run with a finer path sampling"
    )


def cz_index(path, eps_values=None, nu_tol=1e-6):
    """Conley-Zehnder-Long index pair (iota, nu) of a symplectic path."""
    ev = _as_evaluator(path)
    eps_values = eps_values or EPS_SEQUENCE
    counts = _stabilized_counts(ev, [ev.n_periods], eps_values)
    iota = -ev.n + counts[ev.n_periods]
    nu = ev.nu_of_power(ev.n_periods, nu_tol)
    return IndexPair(iota=int(iota), nu=int(nu))


def index_of_orbit(spec, critical_report, steps=None, eps_values=None):
    """Index pair of a found orbit, cross-checked against Hessian inertia.

    Glues the broken-loop trajectory, integrates the linearized Hamiltonian
    flow, and runs the crossing count; disagreement with the discrete Morse
    data is an error (under-resolved path or too-coarse k), never silently
    resolved.
    """
    from .broken import glue_trajectory

    loop = critical_report.loop
    glued = glue_trajectory(loop)
    steps = steps or max(1500 * loop.period, 40 * loop.steps_per_segment * loop.k * loop.period // 32)
    path = integrate_linearized(spec, glued, steps=steps)
    pair = cz_index(path, eps_values=eps_values)
    morse = (critical_report.morse_index, critical_report.nullity)
    if pair.as_tuple() != morse:
        raise IndexMismatchError(
            f"CZ pair {pair.as_tuple()} != Hessian inertia {morse}; "
            "remedies: increase the linearized path resolution (steps), or "
            "increase k so the discrete Hessian resolves the orbit"
        )
    return pair


@dataclass
class IterationProfile:
    base_pair: IndexPair
    pairs: dict            # n -> IndexPair
    mean_index: float
    mean_index_naive: float
    richardson_gap: float
    margins: dict = field(default_factory=dict)  # n -> (lower margin, upper margin)

    def to_json(self):
        return json.dumps(
            {
                "iota": self.base_pair.iota,
                "nu": self.base_pair.nu,
                "mean_index": self.mean_index,
                "per_n": {
                    str(n): {
                        "iota": p.iota,
                        "nu": p.nu,
                        "lower_margin": self.margins[n][0],
                        "upper_margin": self.margins[n][1],
                    }
                    for n, p in sorted(self.pairs.items())
                },
            },
            sort_keys=True,
        )


def iteration_profile(spec, critical_report, n_list, steps=None, eps_values=None, nu_tol=1e-6):
    """Index pairs of the iterates gamma^n with the iteration inequalities.

    The symplectic path is extended over [0, n tau] through the periodicity
    of the linearized flow, and every crossing is re-examined there; no
    Bott-type shortcut is used.  The mean index comes from the difference
    quotient (iota(n_max) - iota(n_max/2)) / (n_max/2), which cancels the
    bounded periodic correction; the naive quotient is kept as a check.
    """
    from .broken import glue_trajectory

    n_list = sorted(set(int(n) for n in n_list))
    if n_list[0] < 1:
        raise ValueError("iterates must have n >= 1")
    n_max = n_list[-1]
    if n_max % 2 != 0 or n_max < 4:
        n_max_eff = max(4, 2 * n_max)
        if n_max_eff not in n_list:
            n_list = sorted(set(n_list + [n_max_eff, n_max_eff // 2]))
            n_max = n_max_eff
    if n_max // 2 not in n_list:
        n_list = sorted(set(n_list + [n_max // 2]))

    loop = critical_report.loop
    glued = glue_trajectory(loop)
    steps = steps or max(1500 * loop.period, 256)
    path = integrate_linearized(spec, glued, steps=steps)
    ev = PathEvaluator.from_path(path, n_periods=n_max)
    eps_values = eps_values or EPS_SEQUENCE
    counts = _stabilized_counts(ev, n_list, eps_values)

    pairs = {}
    for n in n_list:
        iota_n = -ev.n + counts[n]
        nu_n = ev.nu_of_power(n, nu_tol)
        pairs[n] = IndexPair(iota=int(iota_n), nu=int(nu_n))

    # Every computed pair pins the true mean index inside
    # [(iota + nu - N)/n, (iota + N)/n]; the intersection of these intervals
    # is a rigorous enclosure.  The Richardson difference quotient
    # (iota(n_max) - iota(n_max/2)) / (n_max/2) cancels the bounded periodic
    # correction and is exact for resonant rotation numbers; it is kept
    # whenever it falls inside the enclosure, otherwise the midpoint is
    # reported.  An empty enclosure means the index data itself violates the
    # iteration inequalities, which is a hard failure.
    half = n_max // 2
    rich = (pairs[n_max].iota - pairs[half].iota) / float(half)
    naive = pairs[n_max].iota / float(n_max)
    lo = max((p.iota + p.nu - ev.n) / n for n, p in pairs.items())
    hi = min((p.iota + ev.n) / n for n, p in pairs.items())
    if lo > hi + 1e-12:
        raise IterationInequalityError(
            f"iteration inequalities are inconsistent: the mean-index enclosure "
            f"[{lo:.6g}, {hi:.6g}] is empty"
        )
    mean_index = rich if lo - 1e-12 <= rich <= hi + 1e-12 else 0.5 * (lo + hi)
    margins = {}
    for n, p in pairs.items():
        lower = p.iota - (n * mean_index - ev.n)
        upper = (n * mean_index + ev.n) - (p.iota + p.nu)
        margins[n] = (float(lower), float(upper))
        if lower < -1e-9 or upper < -1e-9:
            raise IterationInequalityError(
                f"iteration inequality violated at n={n}: iota={p.iota}, nu={p.nu}, "
                f"mean={mean_index}, margins=({lower:.3g}, {upper:.3g})"
            )
    return IterationProfile(
        base_pair=pairs[min(n_list)],
        pairs=pairs,
        mean_index=float(mean_index),
        mean_index_naive=float(naive),
        richardson_gap=float(abs(rich - naive)),
        margins=margins,
    )
