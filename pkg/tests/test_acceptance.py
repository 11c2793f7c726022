"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with  pytest tests/test_acceptance.py -s  to see the per-criterion lines.
The calibration suite consists of the free-particle constant loop, the two
pendulum equilibria, and a nonconstant forced-pendulum orbit (the
period-two oscillation that the resonant forcing splits off the elliptic
equilibrium).
"""

import functools
import time

import numpy as np
import pytest

from tonelli import broken as bk
from tonelli import homotopy as ho
from tonelli import lagrangian as lg
from tonelli import orbits as ob
from tonelli import segment as sg
from tonelli.index import cz_index, index_of_orbit, iteration_profile
from tonelli.flow import integrate_linearized
from tonelli.search import CampaignConfig, run_search

PEND_POT = {"kind": "cosine", "coeff": -0.25, "wave": [1]}
FORCED_POT = {"kind": "cosine", "coeff": -0.25, "wave": [1], "forcing": 0.5}


@functools.lru_cache(maxsize=None)
def specs():
    return {
        "free": lg.build_family("mechanical", {"dim": 1}),
        "pend": lg.build_family("mechanical", {"dim": 1, "potential": dict(PEND_POT)}),
        "forced": lg.build_family("mechanical", {"dim": 1, "potential": dict(FORCED_POT)}),
        "quartic": lg.build_family(
            "quartic-tonelli", {"dim": 1, "scale": 0.25, "potential": dict(PEND_POT)}
        ),
    }


@functools.lru_cache(maxsize=None)
def suite(k):
    """The four calibration orbits as converged critical-point reports."""
    sp = specs()
    radii = sg.practical_radii(1.0 / k, 0.25)
    out = {}
    out["free-constant"] = (
        sp["free"],
        bk.find_critical(sp["free"], radii, bk.from_nodes(sp["free"], radii, 1, k, np.full((k, 1), 0.3))),
    )
    out["pendulum-elliptic"] = (
        sp["pend"],
        bk.find_critical(sp["pend"], radii, bk.from_nodes(sp["pend"], radii, 1, k, np.zeros((k, 1)))),
    )
    out["pendulum-hyperbolic"] = (
        sp["pend"],
        bk.find_critical(sp["pend"], radii, bk.from_nodes(sp["pend"], radii, 1, k, np.full((k, 1), 0.5))),
    )
    ts = np.arange(2 * k) / k
    seed = bk.from_nodes(sp["forced"], radii, 2, k, (0.15 * np.sin(np.pi * ts + np.pi / 2))[:, None])
    rep = bk.find_critical(sp["forced"], radii, seed)
    assert np.ptp(rep.loop.nodes) > 1e-2, "forced seed collapsed to a constant loop"
    out["forced-subharmonic"] = (sp["forced"], rep)
    return out


def report_line(num, name, t0, detail=""):
    print(f"[criterion {num:2d}] PASS  {name}  ({time.perf_counter() - t0:.1f}s)  {detail}")


EXPECTED_PAIRS = {
    "free-constant": (0, 1),
    "pendulum-elliptic": (1, 0),
    "pendulum-hyperbolic": (0, 0),
    "forced-subharmonic": (1, 0),
}


def test_criterion_1_index_identification():
    t0 = time.perf_counter()
    for k in (16, 32):
        for name, (spec, rep) in suite(k).items():
            assert rep.converged and rep.gradient_norm < 1e-9
            pair = index_of_orbit(spec, rep)  # raises on any disagreement
            assert pair.as_tuple() == (rep.morse_index, rep.nullity)
            assert pair.as_tuple() == EXPECTED_PAIRS[name], (k, name)
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"criterion 1 runtime {elapsed:.1f}s exceeds 1 min"
    report_line(1, "CZ-Long pair equals Hessian inertia at k=16 and k=32", t0)


@functools.lru_cache(maxsize=None)
def profiles_n32():
    out = {}
    for name, (spec, rep) in suite(16).items():
        out[name] = iteration_profile(spec, rep, list(range(1, 33)))
    return out


def test_criterion_2_iteration_inequalities():
    t0 = time.perf_counter()
    profs = profiles_n32()
    for name, prof in profs.items():
        for n in range(1, 33):
            lower, upper = prof.margins[n]
            assert lower >= -1e-9, (name, n, lower)
            assert upper >= -1e-9, (name, n, upper)
        assert prof.richardson_gap < 0.5 + 1e-9
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0, f"criterion 2 runtime {elapsed:.1f}s exceeds 2 min"
    report_line(2, "both iteration inequalities hold for all n <= 32", t0,
                detail=f"mean indices: { {k: p.mean_index for k, p in profs.items()} }")


def test_criterion_3_elliptic_iterate_profile():
    t0 = time.perf_counter()
    prof = profiles_n32()["pendulum-elliptic"]
    for n in range(1, 33):
        expected = (2 * (n // 2) + 1, 0) if n % 2 else (n - 1, 2)
        assert prof.pairs[n].as_tuple() == expected, (n, prof.pairs[n])
    assert prof.mean_index == 1.0
    report_line(3, "elliptic profile matches the Fourier oracle exactly, mean index 1", t0)


def test_criterion_4_discretization_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    for name, (spec, rep) in suite(16).items():
        refined = bk.refine(rep.loop, 2)
        pair_ref = bk.hessian_inertia(bk.discrete_hessian(refined))[:2]
        assert pair_ref == rep.pair(), (name, rep.pair(), pair_ref)

    # gradient / Hessian against finite differences on a generic loop
    sp = specs()["pend"]
    radii = sg.practical_radii(1.0 / 16, 0.25)
    nodes = 0.3 + 0.03 * rng.standard_normal((16, 1))
    loop = bk.from_nodes(sp, radii, 1, 16, nodes)
    grad = bk.discrete_gradient(loop)
    hess = bk.discrete_hessian(loop)
    h = 1e-6
    for i in (1, 6, 13):
        plus, minus = nodes.copy(), nodes.copy()
        plus[i, 0] += h
        minus[i, 0] -= h
        fd = (
            bk.from_nodes(sp, radii, 1, 16, plus).mean_action
            - bk.from_nodes(sp, radii, 1, 16, minus).mean_action
        ) / (2 * h)
        assert abs(grad[i, 0] - fd) / max(abs(fd), 1e-10) < 1e-5
        fd_col = (
            bk.discrete_gradient(bk.from_nodes(sp, radii, 1, 16, plus))
            - bk.discrete_gradient(bk.from_nodes(sp, radii, 1, 16, minus))
        ).reshape(-1) / (2 * h)
        scale = max(np.abs(fd_col).max(), 1e-10)
        assert np.abs(hess[:, i] - fd_col).max() / scale < 1e-4
    report_line(4, "(iota, nu) invariant under refine(., 2); gradient/Hessian match FD", t0)


def test_criterion_5_iteration_map_identities():
    t0 = time.perf_counter()
    sp = specs()["pend"]
    radii = sg.practical_radii(1.0 / 16, 0.25)
    rng = np.random.default_rng(11)
    worst_action, worst_grad = 0.0, 0.0
    for _ in range(20):
        nodes = rng.uniform(0, 1, (1, 1)) + 0.04 * rng.standard_normal((16, 1))
        loop = bk.from_nodes(sp, radii, 1, 16, nodes)
        jumps = bk.jump_covectors(loop)
        for n in (2, 3, 4):
            it = bk.iterate_loop(loop, n)
            worst_action = max(worst_action, abs(it.mean_action - loop.mean_action))
            worst_grad = max(worst_grad, float(np.abs(np.tile(jumps, (n, 1)) - bk.jump_covectors(it)).max()))
    assert worst_action < 1e-12, worst_action
    assert worst_grad < 1e-10, worst_grad
    report_line(5, "mean action and gradient commute with iteration", t0,
                detail=f"worst action drift {worst_action:.1e}, gradient drift {worst_grad:.1e}")


def test_criterion_6_short_minimizer_uniqueness():
    t0 = time.perf_counter()
    sp = specs()["pend"]
    rad = sg.estimate_radii(sp, lg.ClassGrid(t_points=4, q_points=24))
    assert rad.eps0 > 0 and rad.rho0 > 0
    assert rad.margin > 0
    rng = np.random.default_rng(3)
    worst_spread = 0.0
    for _ in range(50):
        q0 = rng.uniform(0, 1, 1)
        q1 = q0 + rng.uniform(-0.9, 0.9, 1) * rad.rho0
        dt = float(rng.uniform(0.4, 1.0)) * rad.eps0
        v0s = []
        for _ in range(10):
            guess = rng.normal(0.0, 2.0, 1)
            seg = sg.minimize_segment(sp, 0.0, dt, q0, q1, rad, v0_init=guess)
            v0s.append(seg.v0[0])
        worst_spread = max(worst_spread, float(np.ptp(v0s)))
    assert worst_spread < 1e-7, worst_spread
    report_line(6, "50 endpoint pairs x 10 starts converge to one segment each", t0,
                detail=f"F-margin {rad.margin:.4f}, worst v0 spread {worst_spread:.1e}")


def test_criterion_7_shortening_monotonicity():
    t0 = time.perf_counter()
    sp = specs()["pend"]
    radii = sg.practical_radii(1.0 / 8, 0.25)
    rng = np.random.default_rng(5)
    k, m = 8, 96
    ts = np.arange(m) / m
    for trial in range(20):
        center = rng.uniform(0, 1)
        a1, a2 = 0.06 * rng.uniform(0.3, 1), 0.03 * rng.uniform(0, 1)
        ph1, ph2 = rng.uniform(0, 2 * np.pi, 2)
        samples = (center + a1 * np.sin(2 * np.pi * ts + ph1) + a2 * np.sin(4 * np.pi * ts + ph2))[:, None]
        loop = ho.SampledLoop(period=1, samples=samples, spec=sp)
        acts = [ho.shorten_homotopy(sp, radii, loop, k, s).action for s in np.linspace(0, 1, 9)]
        assert all(acts[i + 1] <= acts[i] + 1e-9 for i in range(8)), (trial, acts)
        short = ho.shorten(sp, radii, loop, k)
        assert abs(acts[-1] - short.mean_action) < 1e-9  # R(1, .) lands in the broken space
    # fixed points of the broken space stay fixed
    short = ho.shorten(sp, radii, ho.SampledLoop(period=1, samples=(0.05 * np.sin(2 * np.pi * ts))[:, None], spec=sp), k)
    resampled = ho.sample_broken_loop(short, m=m)
    for s in (0.25, 0.75):
        moved = ho.shorten_homotopy(sp, radii, resampled, k, s)
        assert abs(moved.action - short.mean_action) < 1e-5
    report_line(7, "action non-increasing along R(s, .) for 20 loops; projection fixed points", t0)


def test_criterion_8_bangert_bound():
    t0 = time.perf_counter()
    sp_free = specs()["free"]
    nonneg = lg.build_family(
        "mechanical",
        {"dim": 1, "potential": {"kind": "cosine-series",
                                 "terms": [{"coeff": -0.25, "wave": [1]}, {"coeff": -0.25, "wave": [0]}]}},
    )
    m, nx = 64, 9
    ts = np.arange(m) / m
    demos = {
        "moving-point": (sp_free, [np.full((m, 1), 0.2 * x) for x in np.linspace(0, 1, nx)]),
        "pendulum-wave": (nonneg, [(0.3 * x + 0.05 * x * np.sin(2 * np.pi * ts))[:, None]
                                   for x in np.linspace(0, 1, nx)]),
    }
    details = []
    for name, (sp, samples) in demos.items():
        path = ho.LoopPath(x0=0.0, x1=1.0, loops=[ho.SampledLoop(period=1, samples=s, spec=sp) for s in samples])
        w_ref = None
        for n in (2, 4, 8, 16, 32):
            res = ho.bangert(sp, path, n)
            assert res.bound_slack >= -1e-9, (name, n, res.bound_slack)
            w = ho.w1inf_bound(res)
            w_ref = w if w_ref is None else w_ref
            assert abs(w - w_ref) <= 0.05 * w_ref, (name, n, w, w_ref)
        details.append(f"{name}: C={res.c_theta:.4f}, w1inf={w_ref:.3f}")
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0, f"criterion 8 runtime {elapsed:.1f}s exceeds 5 min"
    report_line(8, "pulled-iterate estimate holds with slack >= -1e-9 for n in {2..32}", t0,
                detail="; ".join(details))


def test_criterion_9_a_priori_rail():
    t0 = time.perf_counter()
    cfg = CampaignConfig.from_dict({
        "lagrangian": {"family": "quartic-tonelli", "dim": 1, "scale": 0.25,
                       "potential": dict(PEND_POT)},
        "prime": 2, "max_power": 1, "k": 16,
        "action_bound": 0.9,
        "seeds": {"count": 2, "rng_seed": 0},
        "modification": {"policy": "fixed", "radius": 3.0},
    })
    report, registry = run_search(cfg, "/tmp/tonelli-accept-rail")
    assert cfg.mod_radius == 3.0
    assert not report["rail_violations"], report["rail_violations"]
    assert len(registry) >= 2
    from tonelli.flow import el_residual

    for rec in registry.records:
        assert rec.action <= 0.9
        assert rec.max_speed <= 0.95 * cfg.mod_radius, (rec.id, rec.max_speed)
        glued = bk.glue_trajectory(rec.loop)
        assert el_residual(cfg.spec, glued) < 1e-6  # the original Tonelli system
    report_line(9, "modified-search orbits stay inside 0.95 R and solve the original system", t0,
                detail=f"{len(registry)} orbits, max speed {max(r.max_speed for r in registry.records):.3f} vs R=3")


def test_criterion_10_orbit_multiplicity():
    t0 = time.perf_counter()
    counts = {}
    registries = {}
    for seed in (0, 1):
        cfg = CampaignConfig.from_dict({
            "lagrangian": {"family": "mechanical", "dim": 1, "potential": dict(FORCED_POT)},
            "prime": 2, "max_power": 2, "k": 16,
            "action_bound": 0.6,
            "seeds": {"count": 4, "rng_seed": seed},
        })
        report, registry = run_search(cfg, f"/tmp/tonelli-accept-mult-{seed}")
        counts[seed] = len(registry)
        registries[seed] = registry
        assert len(registry) >= 3, f"seed {seed}: only {len(registry)} orbits"
        assert all(rec.action < 0.6 for rec in registry.records)
        periods = sorted({rec.period for rec in registry.records})
        assert periods[0] == 1 and len(periods) >= 2  # genuine prime-power spread
    assert counts[0] == counts[1], counts
    # registry deduplication: re-admitting everything changes nothing
    reg = registries[0]
    size = len(reg)
    for rec in list(reg.records):
        decision = reg.admit(rec)
        assert not decision.admitted
    assert len(reg) == size
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"criterion 10 runtime {elapsed:.1f}s exceeds 10 min"
    report_line(10, "forced-pendulum campaign admits >= 3 distinct orbits, both RNG seeds", t0,
                detail=f"{counts[0]} orbits per run")
