"""Lagrangian systems on the flat torus T^N = R^N / Z^N.

Provides the derivative data of 1-periodic Lagrangians L(t, q, v), Legendre
duality, sampling certificates for the Tonelli / convex quadratic-growth
classes, and convex quadratic modifications that freeze L outside a velocity
ball while keeping exact equality inside it.

Conventions used throughout the package:

* q lives on the torus; callables accept any real representative and are
  1-periodic in each coordinate of q and in t.
* ``d_vq(t, q, v)[i, j]`` is the mixed derivative d^2 L / (dv_i dq_j).
* mechanical Lagrangians are kinetic-minus-potential, L = |v|^2/2 - V(t, q);
  the fiberwise-quadratic family is L = <A(q) v, v> + V(t, q).
* all derivative callables broadcast over a leading batch axis when the
  spec is flagged ``vectorized`` (t: (B,), q, v: (B, N)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import hyperdual as hd

__all__ = [
    "LagrangianSpec",
    "ClassGrid",
    "ClassReport",
    "ModifiedLagrangian",
    "FamilyError",
    "ClassError",
    "ModificationError",
    "LegendreError",
    "build_family",
    "verify_class",
    "legendre",
    "inverse_legendre",
    "dual_hamiltonian",
    "c_of_l",
    "make_modification",
    "check_derivatives",
    "eval_batch",
    "derivs_batch",
]


class FamilyError(ValueError):
    """Raised when family parameters are invalid (non-SPD A, aperiodic V, ...)."""


class ClassError(ValueError):
    """Raised when a spec fails the convexity certificate, with a witness point."""


class ModificationError(ValueError):
    """Raised when a requested modification radius is too small to blend convexly."""


class LegendreError(RuntimeError):
    """Raised when the fiberwise Newton solve for the inverse Legendre map stalls."""


@dataclass(frozen=True)
class LagrangianSpec:
    """A 1-periodic Lagrangian on T^N with exact derivative maps."""

    dim: int
    eval: Callable
    d_v: Callable
    d_q: Callable
    d_vv: Callable
    d_vq: Callable
    d_qq: Callable
    d_vt: Callable
    family_tag: str = "custom"
    autonomous: bool = False
    vectorized: bool = False
    meta: dict = field(default_factory=dict)

    def __repr__(self):
        return f"LagrangianSpec(dim={self.dim}, family={self.family_tag!r})"


@dataclass(frozen=True)
class ModifiedLagrangian(LagrangianSpec):
    """Convex quadratic R-modification L_R of a Tonelli base Lagrangian."""

    base: Optional[LagrangianSpec] = None
    radius: float = 0.0
    blend_band: tuple = (0.0, 0.0)
    outer_quadratic: dict = field(default_factory=dict)
    c_of_l: float = 0.0

    def __repr__(self):
        return f"ModifiedLagrangian(dim={self.dim}, base={self.base.family_tag!r}, R={self.radius})"


# ---------------------------------------------------------------------------
# batched evaluation helpers


def _loop_batch(fn, t, q, v):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    tb = np.broadcast_to(t, (max(len(t), len(q)),))
    out = [fn(float(tb[i]), q[i % len(q)], v[i % len(v)]) for i in range(len(tb))]
    return np.asarray(out)


def eval_batch(spec, t, q, v):
    if spec.vectorized:
        return np.asarray(spec.eval(t, q, v))
    return _loop_batch(spec.eval, t, q, v)


def derivs_batch(spec, t, q, v, names=("d_v", "d_q", "d_vv", "d_vq", "d_qq", "d_vt")):
    """Evaluate several derivative maps at a batch of points, as a dict."""
    out = {}
    for name in names:
        fn = getattr(spec, name)
        out[name] = np.asarray(fn(t, q, v)) if spec.vectorized else _loop_batch(fn, t, q, v)
    return out


# ---------------------------------------------------------------------------
# potentials


class ZeroPotential:
    autonomous = True

    def val(self, t, q):
        return np.zeros(np.shape(q)[:-1])

    def d_q(self, t, q):
        return np.zeros(np.shape(q))

    def d_qq(self, t, q):
        n = np.shape(q)[-1]
        return np.zeros(np.shape(q)[:-1] + (n, n))

    def val_generic(self, t, q):
        return hd.lift(0.0)

    def params(self):
        return {"kind": "zero"}


class CosineSeriesPotential:
    """V(t, q) = sum_k c_k cos(2 pi w_k . q + phi_k) (1 + f_k cos(2 pi t + psi_k)).

    Integer wave vectors w_k keep V 1-periodic on the torus; f_k modulates in
    time with period 1.
    """

    def __init__(self, terms):
        # terms: list of (coeff, wave(N,), forcing, qphase, tphase)
        self.terms = [
            (float(c), np.asarray(w, dtype=float), float(f), float(qp), float(tp))
            for (c, w, f, qp, tp) in terms
        ]
        self.autonomous = all(f == 0.0 for (_, _, f, _, _) in self.terms)

    def _tq(self, t, q, w, f, qp, tp):
        phase = 2.0 * np.pi * (q @ w) + qp
        gate = 1.0 + f * np.cos(2.0 * np.pi * np.asarray(t, dtype=float) + tp)
        return phase, gate

    def val(self, t, q):
        q = np.asarray(q, dtype=float)
        total = np.zeros(np.shape(q)[:-1])
        for c, w, f, qp, tp in self.terms:
            phase, gate = self._tq(t, q, w, f, qp, tp)
            total = total + c * np.cos(phase) * gate
        return total

    def d_q(self, t, q):
        q = np.asarray(q, dtype=float)
        total = np.zeros(np.shape(q))
        for c, w, f, qp, tp in self.terms:
            phase, gate = self._tq(t, q, w, f, qp, tp)
            total = total + (-2.0 * np.pi * c) * np.asarray(np.sin(phase) * gate)[..., None] * w
        return total

    def d_qq(self, t, q):
        q = np.asarray(q, dtype=float)
        n = q.shape[-1]
        total = np.zeros(np.shape(q)[:-1] + (n, n))
        for c, w, f, qp, tp in self.terms:
            phase, gate = self._tq(t, q, w, f, qp, tp)
            ww = np.outer(w, w)
            total = total + (-((2.0 * np.pi) ** 2) * c) * np.asarray(np.cos(phase) * gate)[..., None, None] * ww
        return total

    def val_generic(self, t, q):
        total = hd.lift(0.0)
        for c, w, f, qp, tp in self.terms:
            phase = hd.lift(qp)
            for wi, qi in zip(w, q):
                phase = phase + (2.0 * np.pi * wi) * qi
            gate = 1.0 + f * hd.cos(2.0 * np.pi * hd.lift(t) + tp)
            total = total + c * hd.cos(phase) * gate
        return total

    def params(self):
        return {
            "kind": "cosine-series",
            "terms": [
                {"coeff": c, "wave": list(w), "forcing": f, "qphase": qp, "tphase": tp}
                for (c, w, f, qp, tp) in self.terms
            ],
        }


def _potential_from_params(dim, pot):
    if pot is None:
        return ZeroPotential()
    if isinstance(pot, (ZeroPotential, CosineSeriesPotential)):
        return pot
    if isinstance(pot, dict):
        kind = pot.get("kind", "cosine")
        if kind == "zero":
            return ZeroPotential()
        if kind == "cosine":
            wave = pot.get("wave", [1] + [0] * (dim - 1))
            term = (
                pot["coeff"],
                wave,
                pot.get("forcing", 0.0),
                pot.get("qphase", 0.0),
                pot.get("tphase", 0.0),
            )
            return CosineSeriesPotential([term])
        if kind == "cosine-series":
            return CosineSeriesPotential(
                [
                    (
                        trm["coeff"],
                        trm.get("wave", [1] + [0] * (dim - 1)),
                        trm.get("forcing", 0.0),
                        trm.get("qphase", 0.0),
                        trm.get("tphase", 0.0),
                    )
                    for trm in pot["terms"]
                ]
            )
        raise FamilyError(f"unknown potential kind {kind!r}")
    raise FamilyError("potential must be None, a dict, or a potential object")


# ---------------------------------------------------------------------------
# families


def _mechanical(dim, potential):
    pot = _potential_from_params(dim, potential)
    eye = np.eye(dim)

    def ev(t, q, v):
        v = np.asarray(v, dtype=float)
        return 0.5 * np.sum(v * v, axis=-1) - pot.val(t, q)

    def d_v(t, q, v):
        return np.asarray(v, dtype=float).copy()

    def d_q(t, q, v):
        return -pot.d_q(t, q)

    def d_vv(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(eye, np.shape(v)[:-1] + (dim, dim)).copy()

    def d_vq(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.zeros(np.shape(v)[:-1] + (dim, dim))

    def d_qq(t, q, v):
        return -pot.d_qq(t, q)

    def d_vt(t, q, v):
        return np.zeros(np.shape(np.asarray(v, dtype=float)))

    return LagrangianSpec(
        dim=dim,
        eval=ev,
        d_v=d_v,
        d_q=d_q,
        d_vv=d_vv,
        d_vq=d_vq,
        d_qq=d_qq,
        d_vt=d_vt,
        family_tag="mechanical",
        autonomous=pot.autonomous,
        vectorized=True,
        meta={"potential": pot.params()},
    )


def _fiberwise_quadratic(dim, a_matrix, potential):
    pot = _potential_from_params(dim, potential)
    A = np.asarray(a_matrix, dtype=float)
    if A.shape != (dim, dim):
        raise FamilyError(f"A must be {dim}x{dim}, got {A.shape}")
    A = 0.5 * (A + A.T)
    if np.min(np.linalg.eigvalsh(A)) <= 0.0:
        raise FamilyError("A is not positive definite")

    def ev(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.einsum("...i,ij,...j->...", v, A, v) + pot.val(t, q)

    def d_v(t, q, v):
        return 2.0 * np.asarray(v, dtype=float) @ A

    def d_q(t, q, v):
        return pot.d_q(t, q)

    def d_vv(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.broadcast_to(2.0 * A, np.shape(v)[:-1] + (dim, dim)).copy()

    def d_vq(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.zeros(np.shape(v)[:-1] + (dim, dim))

    def d_qq(t, q, v):
        return pot.d_qq(t, q)

    def d_vt(t, q, v):
        return np.zeros(np.shape(np.asarray(v, dtype=float)))

    return LagrangianSpec(
        dim=dim,
        eval=ev,
        d_v=d_v,
        d_q=d_q,
        d_vv=d_vv,
        d_vq=d_vq,
        d_qq=d_qq,
        d_vt=d_vt,
        family_tag="fiberwise-quadratic",
        autonomous=pot.autonomous,
        vectorized=True,
        meta={"A": A.tolist(), "potential": pot.params()},
    )


def _quartic_tonelli(dim, scale, potential):
    pot = _potential_from_params(dim, potential)
    c0 = float(scale)
    if c0 <= 0.0:
        raise FamilyError("quartic scale must be positive")
    eye = np.eye(dim)

    def ev(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        return c0 * (1.0 + u) ** 2 - pot.val(t, q)

    def d_v(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        return (4.0 * c0) * np.asarray(1.0 + u)[..., None] * v

    def d_q(t, q, v):
        return -pot.d_q(t, q)

    def d_vv(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        outer = v[..., :, None] * v[..., None, :]
        return (4.0 * c0) * (np.asarray(1.0 + u)[..., None, None] * eye + 2.0 * outer)

    def d_vq(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.zeros(np.shape(v)[:-1] + (dim, dim))

    def d_qq(t, q, v):
        return -pot.d_qq(t, q)

    def d_vt(t, q, v):
        return np.zeros(np.shape(np.asarray(v, dtype=float)))

    return LagrangianSpec(
        dim=dim,
        eval=ev,
        d_v=d_v,
        d_q=d_q,
        d_vv=d_vv,
        d_vq=d_vq,
        d_qq=d_qq,
        d_vt=d_vt,
        family_tag="quartic-tonelli",
        autonomous=pot.autonomous,
        vectorized=True,
        meta={"scale": c0, "potential": pot.params()},
    )


def _custom(dim, eval_generic, autonomous=False):
    """Spec from a scalar eval written with hyperdual-friendly operations.

    ``eval_generic(t, q_list, v_list)`` must accept Dual2 entries.  All
    derivative maps come from second-order forward differentiation.
    """

    def ev(t, q, v):
        out = eval_generic(hd.lift(float(t)), [hd.lift(x) for x in q], [hd.lift(x) for x in v])
        return float(out.a) if isinstance(out, hd.Dual2) else float(out)

    def _vgh(t, q, v):
        def f(x):
            return hd.lift(eval_generic(x[0], x[1 : 1 + dim], x[1 + dim :]))

        x = np.concatenate(([t], q, v))
        return hd.value_grad_hess(f, x)

    def d_v(t, q, v):
        _, g, _ = _vgh(t, q, v)
        return g[1 + dim :]

    def d_q(t, q, v):
        _, g, _ = _vgh(t, q, v)
        return g[1 : 1 + dim]

    def d_vv(t, q, v):
        _, _, h = _vgh(t, q, v)
        return h[1 + dim :, 1 + dim :]

    def d_vq(t, q, v):
        _, _, h = _vgh(t, q, v)
        return h[1 + dim :, 1 : 1 + dim]

    def d_qq(t, q, v):
        _, _, h = _vgh(t, q, v)
        return h[1 : 1 + dim, 1 : 1 + dim]

    def d_vt(t, q, v):
        _, _, h = _vgh(t, q, v)
        return h[1 + dim :, 0]

    return LagrangianSpec(
        dim=dim,
        eval=ev,
        d_v=d_v,
        d_q=d_q,
        d_vv=d_vv,
        d_vq=d_vq,
        d_qq=d_qq,
        d_vt=d_vt,
        family_tag="custom",
        autonomous=autonomous,
        vectorized=False,
        meta={},
    )


def _check_periodicity(spec, rng=None, n=24, tol=1e-9):
    rng = rng or np.random.default_rng(0)
    n_dim = spec.dim
    for _ in range(n):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, n_dim)
        v = rng.uniform(-2, 2, n_dim)
        base = spec.eval(t, q, v)
        if abs(spec.eval(t + 1.0, q, v) - base) > tol * (1.0 + abs(base)):
            raise FamilyError(f"not 1-periodic in t at t={t}")
        for i in range(n_dim):
            shifted = q.copy()
            shifted[i] += 1.0
            if abs(spec.eval(t, shifted, v) - base) > tol * (1.0 + abs(base)):
                raise FamilyError(f"not 1-periodic in q_{i} at q={q}")


def build_family(family_tag, params):
    """Construct a LagrangianSpec for one of the built-in families.

    ``params`` keys by family:
      mechanical          dim, potential
      fiberwise-quadratic dim, A (SPD matrix), potential
      quartic-tonelli     dim, scale, potential
      custom              dim, eval (Dual2-generic callable), autonomous
    """
    params = dict(params)
    dim = int(params.pop("dim", 1))
    if dim < 1:
        raise FamilyError("dim must be a positive integer")
    if family_tag == "mechanical":
        spec = _mechanical(dim, params.pop("potential", None))
    elif family_tag == "fiberwise-quadratic":
        spec = _fiberwise_quadratic(dim, params.pop("A"), params.pop("potential", None))
    elif family_tag == "quartic-tonelli":
        spec = _quartic_tonelli(dim, params.pop("scale", 1.0), params.pop("potential", None))
    elif family_tag == "custom":
        spec = _custom(dim, params.pop("eval"), params.pop("autonomous", False))
    else:
        raise FamilyError(f"unknown family {family_tag!r}")
    if params:
        raise FamilyError(f"unused parameters: {sorted(params)}")
    _check_periodicity(spec)
    return spec


# ---------------------------------------------------------------------------
# class verification


@dataclass(frozen=True)
class ClassGrid:
    """Sampling grid for fiberwise class certificates.

    v_points is odd so that v = 0, +/- v_max/2 and +/- v_max are grid points.
    """

    t_points: int = 32
    q_points: int = 32
    v_points: int = 33
    v_max: float = 10.0

    def describe(self):
        return (
            f"t:{self.t_points} x q:{self.q_points}/dim x v:{self.v_points}/dim, "
            f"|v| <= {self.v_max}"
        )


@dataclass
class ClassReport:
    """Grid-sampled estimates of the class constants of a Lagrangian.

    lower_quadratic / upper_quadratic are the two-sided quadratic envelope
    constants of the additively normalized Lagrangian (shifted so its grid
    minimum is 1), so that  lq |v|^2 <= L + shift <= uq (|v|^2 + 1)  on the
    grid.  c_constant is the sublevel constant uq (flat metric, mu = 1).
    """

    q1_lower_bound: float
    q2_bounds: tuple
    superlinearity_margin: float
    lower_quadratic: float
    upper_quadratic: float
    normalization_shift: float
    c_constant: float
    tonelli_only: bool
    sample_grid: str
    q1_witness: tuple = ()

    @property
    def ell0(self):
        return self.q1_lower_bound

    @property
    def ell1(self):
        return max(self.q2_bounds)


def _grid_points(spec, grid):
    n = spec.dim
    ts = np.linspace(0.0, 1.0, grid.t_points, endpoint=False)
    qs_1d = np.linspace(0.0, 1.0, grid.q_points, endpoint=False)
    vs_1d = np.linspace(-grid.v_max, grid.v_max, grid.v_points)
    q_mesh = np.stack(np.meshgrid(*([qs_1d] * n), indexing="ij"), axis=-1).reshape(-1, n)
    v_mesh = np.stack(np.meshgrid(*([vs_1d] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return ts, q_mesh, v_mesh


def verify_class(spec, grid=None):
    """Sampling certificate for (Q1)/(Q2); flags tonelli-only growth.

    Raises ClassError with the witnessing grid point if the fiberwise Hessian
    fails to be positive definite somewhere on the grid.
    """
    grid = grid or ClassGrid()
    ts, q_mesh, v_mesh = _grid_points(spec, grid)

    ell0 = np.inf
    q1_witness = ()
    sup_vv_inner = 0.0
    sup_vv_outer = 0.0
    q2 = [0.0, 0.0, 0.0]
    l_min = np.inf
    speed_ratio_mid = np.inf
    speed_ratio_full = np.inf

    vnorm = np.linalg.norm(v_mesh, axis=-1)
    inner_mask = vnorm <= 0.5 * grid.v_max
    mid_shell = np.abs(vnorm - 0.5 * grid.v_max) <= 0.2 * grid.v_max
    full_shell = vnorm >= 0.9 * grid.v_max
    sampled = []

    for t in ts:
        for qi in range(len(q_mesh)):
            q = q_mesh[qi]
            B = len(v_mesh)
            tb = np.full(B, t)
            qb = np.broadcast_to(q, (B, spec.dim))
            Ls = eval_batch(spec, tb, qb, v_mesh)
            der = derivs_batch(spec, tb, qb, v_mesh, names=("d_vv", "d_vq", "d_qq"))
            lam = np.linalg.eigvalsh(der["d_vv"]).min(axis=-1)
            i_min = int(np.argmin(lam))
            if lam[i_min] < ell0:
                ell0 = float(lam[i_min])
                q1_witness = (float(t), q.copy(), v_mesh[i_min].copy())
            abs_vv = np.abs(der["d_vv"]).max(axis=(-1, -2))
            sup_vv_inner = max(sup_vv_inner, float(abs_vv[inner_mask].max()))
            if (~inner_mask).any():
                sup_vv_outer = max(sup_vv_outer, float(abs_vv[~inner_mask].max()))
            q2[0] = max(q2[0], float(abs_vv.max()))
            q2[1] = max(q2[1], float((np.abs(der["d_vq"]).max(axis=(-1, -2)) / (1.0 + vnorm)).max()))
            q2[2] = max(q2[2], float((np.abs(der["d_qq"]).max(axis=(-1, -2)) / (1.0 + vnorm * vnorm)).max()))
            l_min = min(l_min, float(Ls.min()))
            sampled.append((Ls, vnorm))
            per_speed = Ls / np.maximum(vnorm, 1e-12)
            if mid_shell.any():
                speed_ratio_mid = min(speed_ratio_mid, float(per_speed[mid_shell].min()))
            if full_shell.any():
                speed_ratio_full = min(speed_ratio_full, float(per_speed[full_shell].min()))

    if ell0 <= 0.0:
        t_w, q_w, v_w = q1_witness
        raise ClassError(
            f"Q1 violated: fiberwise Hessian eigenvalue {ell0:.3e} <= 0 "
            f"at t={t_w}, q={q_w}, v={v_w}"
        )

    shift = 1.0 - l_min
    lower = ell0 / 2.0
    upper = 0.0
    for Ls, vn in sampled:
        normed = Ls + shift
        upper = max(upper, float((normed / (1.0 + vn * vn)).max()))
        pos = vn > 1e-9
        if pos.any():
            lower = min(lower, float((normed[pos] / (vn[pos] ** 2)).min()))

    margin = speed_ratio_full - speed_ratio_mid
    tonelli_only = sup_vv_outer > 1.25 * sup_vv_inner

    return ClassReport(
        q1_lower_bound=ell0,
        q2_bounds=tuple(q2),
        superlinearity_margin=float(margin),
        lower_quadratic=float(lower),
        upper_quadratic=float(upper),
        normalization_shift=float(shift),
        c_constant=float(upper),
        tonelli_only=bool(tonelli_only),
        sample_grid=grid.describe(),
        q1_witness=q1_witness,
    )


# ---------------------------------------------------------------------------
# Legendre duality


def legendre(spec, t, q, v):
    """Fiberwise momentum p = d_v L(t, q, v)."""
    return np.asarray(spec.d_v(float(t), np.asarray(q, float), np.asarray(v, float)), dtype=float)


def inverse_legendre(spec, t, q, p, v0=None, tol=1e-11, max_iter=60):
    """Unique v with d_v L(t, q, v) = p, by damped Newton on the fiber."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    v = np.array(v0, dtype=float) if v0 is not None else p.astype(float).copy()
    res = spec.d_v(t, q, v) - p
    for _ in range(max_iter):
        nrm = np.linalg.norm(res)
        if nrm < tol:
            return v
        step = np.linalg.solve(spec.d_vv(t, q, v), res)
        lam = 1.0
        for _ in range(40):
            v_new = v - lam * step
            res_new = spec.d_v(t, q, v_new) - p
            if np.linalg.norm(res_new) < nrm:
                v, res = v_new, res_new
                break
            lam *= 0.5
        else:
            raise LegendreError(f"inverse Legendre stalled at residual {nrm:.3e} (T1/T2 suspect)")
    raise LegendreError(f"inverse Legendre did not converge (residual {np.linalg.norm(res):.3e})")


def dual_hamiltonian(spec, t, q, p, v0=None):
    """H(t, q, p) = p.v* - L(t, q, v*) with v* = inverse Legendre of p."""
    v = inverse_legendre(spec, t, q, p, v0=v0)
    return float(np.dot(np.asarray(p, float), v) - spec.eval(t, np.asarray(q, float), v))


def _unit_directions(n, count=16):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    axes = np.concatenate([np.eye(n), -np.eye(n)])
    return np.concatenate([axes, dirs])


def c_of_l(spec, t_points=16, q_points=16, p_dirs=None):
    """C(L) = max of the dual Hamiltonian over the unit momentum ball.

    H is convex in p, so the maximum over |p| <= 1 is attained on the unit
    sphere; we scan sphere directions over a (t, q) grid.
    """
    n = spec.dim
    dirs = p_dirs if p_dirs is not None else _unit_directions(n)
    ts = np.linspace(0.0, 1.0, t_points, endpoint=False)
    qs_1d = np.linspace(0.0, 1.0, q_points, endpoint=False)
    q_mesh = np.stack(np.meshgrid(*([qs_1d] * n), indexing="ij"), axis=-1).reshape(-1, n)
    best = -np.inf
    for t in ts:
        for q in q_mesh:
            v_guess = None
            for p in dirs:
                h = dual_hamiltonian(spec, float(t), q, p, v0=v_guess)
                best = max(best, h)
    return float(best)


# ---------------------------------------------------------------------------
# convex quadratic R-modification


def _smoothstep5(s):
    """C^2 quintic step: 0 for s<=0, 1 for s>=1, zero 1st/2nd derivatives at ends."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def _smoothstep5_d1(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


def _smoothstep5_d2(s):
    inside = (s > 0.0) & (s < 1.0)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s), 0.0)


def _radial_quartic_modification(spec, R, c_L):
    """Modification of the isotropic quartic family.

    The radial profile f(u) = scale (1+u)^2, u = |v|^2, keeps its curvature
    inside |v| <= R; over the band R <= |v| <= 2R the fiberwise curvature is
    cut off by the quintic step, f_R''(u) = f''(u) (1 - psi(|v|)), and
    integrated twice from the data frozen at |v| = R.  Beyond 2R the profile
    is exactly linear in u, i.e. fiberwise quadratic.  Curvature cutoff
    (rather than value blending, whose gap to the tangent quadratic grows
    with the band and destroys convexity) keeps f_R'' >= 0 and f_R' > 0, so
    Q1 holds on the band by construction.  The potential enters additively,
    so q-derivatives are untouched.
    """
    from numpy.polynomial import polynomial as npoly

    scale = float(spec.meta["scale"])
    dim = spec.dim
    R2 = R * R
    # psi(s) = 10 s^3 - 15 s^4 + 6 s^5 on s = (r - R)/R in [0, 1]
    psi_c = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
    one_plus_s = np.array([1.0, 1.0])
    # A(s) = int_0^s psi (1+sigma) dsigma ;  B(s) = int_0^s A (1+sigma) dsigma
    a_poly = npoly.polyint(npoly.polymul(psi_c, one_plus_s))
    b_poly = npoly.polyint(npoly.polymul(a_poly, one_plus_s))
    a1 = npoly.polyval(1.0, a_poly)
    b1 = npoly.polyval(1.0, b_poly)
    fpR = 2.0 * scale * (1.0 + R2)    # f'(R^2)
    fR = scale * (1.0 + R2) ** 2      # f(R^2)
    fpp = 2.0 * scale                 # constant quartic curvature in u
    # outer linear profile F(u) = alpha u + beta for u >= 4 R^2
    alpha = fpR + fpp * (3.0 * R2 - 2.0 * R2 * a1)
    f4 = fR + fpR * 3.0 * R2 + fpp * (4.5 * R2 * R2 - 4.0 * R2 * R2 * b1)
    beta = f4 - alpha * 4.0 * R2
    # M2 needs the radial slope at R to dominate unit speed growth
    if 2.0 * R * fpR < 1.0:
        r_min = _bisect_m2_radius(scale)
        raise ModificationError(
            f"R = {R} too small for the superlinear floor (radial slope "
            f"{2.0 * R * fpR:.3g} < 1); minimal admissible R found by "
            f"bisection: {r_min:.4g}"
        )
    eye = np.eye(dim)

    def _profile(u):
        """F, F', F'' of the modified radial profile at u = |v|^2 (batched)."""
        u = np.asarray(u, dtype=float)
        r = np.sqrt(np.maximum(u, 0.0))
        s = np.clip((r - R) / R, 0.0, 1.0)
        inside = u <= R2
        outside = u >= 4.0 * R2
        band = ~inside & ~outside
        F = np.where(inside, scale * (1.0 + u) ** 2, 0.0)
        Fp = np.where(inside, 2.0 * scale * (1.0 + u), 0.0)
        Fpp = np.where(inside, fpp, 0.0)
        if band.any():
            sa = npoly.polyval(s, a_poly)
            sb = npoly.polyval(s, b_poly)
            du = u - R2
            Fp_band = fpR + fpp * (du - 2.0 * R2 * sa)
            F_band = fR + fpR * du + fpp * (0.5 * du * du - 4.0 * R2 * R2 * sb)
            Fpp_band = fpp * (1.0 - npoly.polyval(s, psi_c))
            F = np.where(band, F_band, F)
            Fp = np.where(band, Fp_band, Fp)
            Fpp = np.where(band, Fpp_band, Fpp)
        F = np.where(outside, alpha * u + beta, F)
        Fp = np.where(outside, alpha, Fp)
        return F, Fp, Fpp

    def ev(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        F, _, _ = _profile(u)
        out = np.asarray(F - _pot_val(spec, t, q))
        # bitwise equality with the base Lagrangian inside the ball (M1)
        return np.where(u <= R2, spec.eval(t, q, v), out)

    def d_v(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        _, Fp, _ = _profile(u)
        out = 2.0 * np.asarray(Fp)[..., None] * v
        return np.where(np.asarray(u <= R2)[..., None], spec.d_v(t, q, v), out)

    def d_vv(t, q, v):
        v = np.asarray(v, dtype=float)
        u = np.sum(v * v, axis=-1)
        _, Fp, Fpp = _profile(u)
        outer = v[..., :, None] * v[..., None, :]
        out = 2.0 * np.asarray(Fp)[..., None, None] * eye + 4.0 * np.asarray(Fpp)[..., None, None] * outer
        return np.where(np.asarray(u <= R2)[..., None, None], spec.d_vv(t, q, v), out)

    def d_q(t, q, v):
        return -_pot_dq(spec, t, q)

    def d_vq(t, q, v):
        v = np.asarray(v, dtype=float)
        return np.zeros(np.shape(v)[:-1] + (dim, dim))

    def d_qq(t, q, v):
        return -_pot_dqq(spec, t, q)

    def d_vt(t, q, v):
        return np.zeros(np.shape(np.asarray(v, dtype=float)))

    outer = {
        "a": float(alpha),
        "c": float(beta),
        "form": "a*|v|^2 + c - V(t,q) beyond |v| = 2R",
        "curvature_cutoff": "quintic in |v| over [R, 2R]",
    }
    return ev, d_v, d_q, d_vv, d_vq, d_qq, d_vt, outer


def _bisect_m2_radius(scale):
    lo, hi = 0.0, 1.0
    while 2.0 * hi * 2.0 * scale * (1.0 + hi * hi) < 1.0:
        hi *= 2.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if 2.0 * mid * 2.0 * scale * (1.0 + mid * mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return hi


def _pot_val(spec, t, q):
    # built-in families store the potential contribution inside eval; recover
    # the (t, q)-only part by evaluating at v = 0 against the radial profile
    scale = spec.meta["scale"]
    q = np.asarray(q, dtype=float)
    base = spec.eval(t, q, np.zeros(np.shape(q)))
    return scale - base


def _pot_dq(spec, t, q):
    q = np.asarray(q, dtype=float)
    return -np.asarray(spec.d_q(t, q, np.zeros(np.shape(q))))


def _pot_dqq(spec, t, q):
    q = np.asarray(q, dtype=float)
    return -np.asarray(spec.d_qq(t, q, np.zeros(np.shape(q))))


def _check_band_convexity(spec_like, R, v_max, t_points=8, q_points=8, v_points=33):
    ts = np.linspace(0.0, 1.0, t_points, endpoint=False)
    qs_1d = np.linspace(0.0, 1.0, q_points, endpoint=False)
    n = spec_like.dim
    q_mesh = np.stack(np.meshgrid(*([qs_1d] * n), indexing="ij"), axis=-1).reshape(-1, n)
    dirs = _unit_directions(n)
    radii = np.linspace(0.5 * R, v_max, v_points)
    worst = np.inf
    for t in ts:
        for q in q_mesh:
            for u in dirs:
                vs = radii[:, None] * u[None, :]
                tb = np.full(len(vs), t)
                qb = np.broadcast_to(q, (len(vs), n))
                hv = derivs_batch(spec_like, tb, qb, vs, names=("d_vv",))["d_vv"]
                worst = min(worst, float(np.linalg.eigvalsh(hv).min()))
    return worst


def make_modification(spec, R, *, c_L=None, v_check_max=None):
    """Convex quadratic R-modification L_R of a Tonelli spec.

    Exact equality with L on |v| <= R; fiberwise-quadratic outside |v| >= 2R
    with coefficients frozen at |v| = R and floor-lifted so L_R >= |v| - C(L);
    quintic C^2 blend on the band.  Fiberwise-quadratic and mechanical specs
    are already convex quadratic-growth and are returned unchanged (L_R = L).
    """
    R = float(R)
    if R <= 0.0:
        raise ModificationError("R must be positive")
    if c_L is None:
        c_L = c_of_l(spec, t_points=8, q_points=12)
    if spec.family_tag in ("mechanical", "fiberwise-quadratic"):
        if spec.family_tag == "mechanical":
            outer = {"a": 0.5, "c": 0.0, "form": "|v|^2/2 - V(t,q)", "identity": True}
        else:
            outer = {"A": spec.meta["A"], "form": "<A v, v> + V(t,q)", "identity": True}
        return ModifiedLagrangian(
            dim=spec.dim,
            eval=spec.eval,
            d_v=spec.d_v,
            d_q=spec.d_q,
            d_vv=spec.d_vv,
            d_vq=spec.d_vq,
            d_qq=spec.d_qq,
            d_vt=spec.d_vt,
            family_tag=spec.family_tag,
            autonomous=spec.autonomous,
            vectorized=spec.vectorized,
            meta=dict(spec.meta),
            base=spec,
            radius=R,
            blend_band=(R, 2.0 * R),
            outer_quadratic=outer,
            c_of_l=float(c_L),
        )
    if spec.family_tag != "quartic-tonelli":
        raise ModificationError(
            "modification is implemented for the built-in families; wrap custom "
            "specs in an isotropic radial profile first"
        )

    ev, d_v, d_q, d_vv, d_vq, d_qq, d_vt, outer = _radial_quartic_modification(spec, R, c_L)
    mod = ModifiedLagrangian(
        dim=spec.dim,
        eval=ev,
        d_v=d_v,
        d_q=d_q,
        d_vv=d_vv,
        d_vq=d_vq,
        d_qq=d_qq,
        d_vt=d_vt,
        family_tag="modified-quartic",
        autonomous=spec.autonomous,
        vectorized=True,
        meta=dict(spec.meta),
        base=spec,
        radius=R,
        blend_band=(R, 2.0 * R),
        outer_quadratic=outer,
        c_of_l=float(c_L),
    )
    v_max = v_check_max if v_check_max is not None else 3.0 * R
    worst = _check_band_convexity(mod, R, v_max)
    if worst <= 0.0:
        raise ModificationError(
            f"blend violates Q1 on the band (min Hessian eigenvalue {worst:.3e}); "
            "the curvature-cutoff construction guarantees this never happens, "
            "so the base spec's own convexity is suspect"
        )
    return mod


# ---------------------------------------------------------------------------
# derivative self-check


def check_derivatives(spec, rng=None, n_points=200, tol=1e-6, h=1e-5, v_scale=2.0):
    """Compare analytic derivative maps against central differences of eval.

    Returns the worst relative error found; raises AssertionError beyond tol.
    """
    rng = rng or np.random.default_rng(7)
    n = spec.dim
    worst = 0.0
    for _ in range(n_points):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, n)
        v = rng.uniform(-v_scale, v_scale, n)
        scale = 1.0 + abs(spec.eval(t, q, v))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd_v = (spec.eval(t, q, v + e) - spec.eval(t, q, v - e)) / (2 * h)
            fd_q = (spec.eval(t, q + e, v) - spec.eval(t, q - e, v)) / (2 * h)
            worst = max(worst, abs(fd_v - spec.d_v(t, q, v)[i]) / scale)
            worst = max(worst, abs(fd_q - spec.d_q(t, q, v)[i]) / scale)
            fd_vv = (np.asarray(spec.d_v(t, q, v + e)) - spec.d_v(t, q, v - e)) / (2 * h)
            fd_vq = (np.asarray(spec.d_v(t, q + e, v)) - spec.d_v(t, q - e, v)) / (2 * h)
            fd_qq = (np.asarray(spec.d_q(t, q + e, v)) - spec.d_q(t, q - e, v)) / (2 * h)
            worst = max(worst, np.max(np.abs(fd_vv - spec.d_vv(t, q, v)[:, i])) / scale)
            worst = max(worst, np.max(np.abs(fd_vq - spec.d_vq(t, q, v)[:, i])) / scale)
            worst = max(worst, np.max(np.abs(fd_qq - spec.d_qq(t, q, v)[:, i])) / scale)
        fd_vt = (np.asarray(spec.d_v(t + h, q, v)) - spec.d_v(t - h, q, v)) / (2 * h)
        worst = max(worst, np.max(np.abs(fd_vt - spec.d_vt(t, q, v))) / scale)
    if worst > tol:
        raise AssertionError(f"derivative check failed: worst relative error {worst:.3e} > {tol}")
    return worst
