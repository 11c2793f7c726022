"""Campaign driver: orbit searches over prime-power periodsplus verification.

A campaign fixes one Lagrangian, a prime p and a list of periods p^0..p^m,
and runs multi-start critical-point searches per period, feeding iterates of
earlier finds forward as continuation seeds.  Searches on non-quadratic
families run against a convex quadratic modification; every admitted orbit
is then checked against the a priori rail (bounded-action critical points of
the modified action must stay strictly inside the modification radius and
solve the unmodified system).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import broken as bk
from . import homotopy as ho
from . import lagrangian as lg
from . import orbits as ob
from . import segment as sg
from .flow import el_residual, integrate_el, PhaseState, integrate_linearized
from .index import IndexMismatchError, index_of_orbit, iteration_profile

__all__ = ["CampaignConfig", "ConfigError", "run_search", "run_verify", "run_bangert_demo", "DEFAULT_CONFIG"]


class ConfigError(ValueError):
    """Invalid campaign configuration."""


DEFAULT_CONFIG = {
    "lagrangian": {
        "family": "mechanical",
        "dim": 1,
        "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1], "forcing": 0.5},
    },
    "prime": 2,
    "max_power": 2,
    "k": 16,
    "steps_per_segment": 32,
    "rho0": 0.25,
    "action_bound": "auto",
    "action_bound_margin": 0.35,
    "modification": {"policy": "auto", "radius": 4.0},
    "seeds": {"count": 6, "rng_seed": 0, "amplitudes": [0.15, 0.3]},
    "solver": {"gtol": 1e-9, "max_iter": 80},
    "index_n_max": 32,
    "el_residual_tol": 1e-6,
    "verify_grid": {"t_points": 8, "q_points": 16, "v_points": 33, "v_max": 6.0},
    "bangert": {"demo": "moving-point", "n_values": [2, 4, 8, 16, 32], "x_samples": 9, "loop_samples": 64},
    "jobs": 1,
}


@dataclass
class CampaignConfig:
    raw: dict
    spec: object
    periods: list
    k: int
    steps_per_segment: int
    radii: object
    bound_a: float
    bound_const: float
    mod_radius: float          # 0 means no modification
    search_spec: object
    seeds: dict
    solver: bk.SolverParams
    index_n_max: int
    el_residual_tol: float
    jobs: int = 1

    @classmethod
    def from_dict(cls, raw):
        cfg = json.loads(json.dumps(DEFAULT_CONFIG))
        _deep_update(cfg, raw or {})
        try:
            lag = dict(cfg["lagrangian"])
            family = lag.pop("family")
            spec = lg.build_family(family, lag)
        except (KeyError, lg.FamilyError) as exc:
            raise ConfigError(f"bad lagrangian block: {exc}") from exc
        p = int(cfg["prime"])
        if p < 2:
            raise ConfigError("prime must be >= 2")
        periods = [p**j for j in range(int(cfg["max_power"]) + 1)]
        k = int(cfg["k"])
        if k < 2:
            raise ConfigError("k must be >= 2")
        radii = sg.practical_radii(1.0 / k, float(cfg["rho0"]))
        bound_const, _ = ob.constant_action_bound(spec)
        if cfg["action_bound"] == "auto":
            bound_a = bound_const + float(cfg["action_bound_margin"])
        else:
            bound_a = float(cfg["action_bound"])
            if bound_a <= bound_const:
                raise ConfigError(
                    f"action bound {bound_a} must exceed the constant-loop "
                    f"action maximum {bound_const:.6g}"
                )
        policy = cfg["modification"]["policy"]
        needs_mod = spec.family_tag in ("quartic-tonelli", "custom")
        if policy == "none" or (policy == "auto" and not needs_mod):
            mod_radius = 0.0
            search_spec = spec
        else:
            mod_radius = float(cfg["modification"]["radius"])
            search_spec = lg.make_modification(spec, mod_radius)
        solver = bk.SolverParams(
            gtol=float(cfg["solver"]["gtol"]),
            max_iter=int(cfg["solver"]["max_iter"]),
            steps_per_segment=int(cfg["steps_per_segment"]),
        )
        return cls(
            raw=cfg,
            spec=spec,
            periods=periods,
            k=k,
            steps_per_segment=int(cfg["steps_per_segment"]),
            radii=radii,
            bound_a=bound_a,
            bound_const=bound_const,
            mod_radius=mod_radius,
            search_spec=search_spec,
            seeds=cfg["seeds"],
            solver=solver,
            index_n_max=int(cfg["index_n_max"]),
            el_residual_tol=float(cfg["el_residual_tol"]),
            jobs=int(cfg.get("jobs", 1)),
        )


def _deep_update(base, overlay):
    for key, val in overlay.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val


def _seed_nodes(config, tau, registry, rng):
    """Deterministic seed list for one period: constants, waves, continuations."""
    n = config.spec.dim
    k = config.k
    count = tau * k
    ts = np.arange(count) / k
    out = []
    for c in _centers(n):
        out.append(("const", np.tile(c, (count, 1))))
    amps = config.seeds.get("amplitudes", [0.15, 0.3])
    wave_centers = config.seeds.get("wave_centers", [0.0])
    for m_wave in range(1, min(tau, 2) + 1):
        for amp in amps:
            for phase in (0.0, 0.5 * np.pi):
                for c0 in wave_centers:
                    wave = amp * np.sin(2.0 * np.pi * m_wave * ts / tau + phase)
                    nodes = np.zeros((count, n))
                    nodes[:, 0] = c0 + wave
                    out.append((f"wave-m{m_wave}-a{amp}-p{phase:.2f}-c{c0}", nodes))
    for rec in registry.records:
        if tau % rec.period == 0 and tau > rec.period:
            m = tau // rec.period
            tiled = np.tile(rec.loop.nodes, (m, 1))
            out.append((f"iterate-of-{rec.id}", tiled.copy()))
            bump = 0.05 * rng.standard_normal(tiled.shape)
            out.append((f"perturbed-iterate-of-{rec.id}", tiled + bump))
    for j in range(int(config.seeds.get("count", 6))):
        base = rng.uniform(0.0, 1.0, (1, n))
        wiggle = 0.08 * rng.standard_normal((count, n))
        out.append((f"random-{j}", np.tile(base, (count, 1)) + wiggle))
    return out


def _centers(n):
    grids = np.stack(np.meshgrid(*([np.array([0.0, 0.5])] * n), indexing="ij"), axis=-1)
    return grids.reshape(-1, n)


def _solve_seed(config, tau, label, nodes):
    try:
        seed = bk.from_nodes(
            config.search_spec, config.radii, tau, config.k, nodes,
            steps_per_segment=config.steps_per_segment,
        )
    except (bk.LoopSpacingError, sg.SegmentError) as exc:
        return {"label": label, "status": "seed-rejected", "detail": str(exc)}
    try:
        report = bk.find_critical(config.search_spec, config.radii, seed, config.solver)
    except (bk.LoopSpacingError, sg.SegmentError, RuntimeError) as exc:
        return {"label": label, "status": "solver-error", "detail": str(exc)}
    if not report.converged:
        return {"label": label, "status": "not-converged", "detail": report.message}
    return {"label": label, "status": "converged", "report": report}


def run_search(config, out_dir, progress=None):
    """Execute the campaign; returns the report dict and writes artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(config.seeds.get("rng_seed", 0)))
    registry = ob.Registry(
        config.bound_a, symmetric_dims=ob.symmetric_translation_dims(config.spec)
    )
    t_start = time.time()
    per_period = {}
    rail_violations = []
    flags = []

    for tau in config.periods:
        seeds = _seed_nodes(config, tau, registry, rng)
        results = []
        if config.jobs > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                futures = [pool.submit(_solve_seed, config, tau, lab, nd) for lab, nd in seeds]
                results = [f.result() for f in futures]
        else:
            results = [_solve_seed(config, tau, lab, nd) for lab, nd in seeds]

        admitted_here = 0
        for res in results:
            if progress:
                progress(tau, res["label"], res["status"])
            if res["status"] != "converged":
                continue
            report = res["report"]
            if report.loop.mean_action >= config.bound_a:
                continue
            ok, notes = _post_checks(config, report, rail_violations)
            if not ok:
                flags.extend(notes)
                continue
            # dedupe on the cheap Hessian data before running the index pipeline
            provisional = ob.record_from_report(
                report, provenance={"seed": res["label"], "period": tau, "k": config.k}
            )
            existing = registry.find_equivalent(provisional)
            if existing is not None and existing.period <= provisional.period:
                continue
            try:
                pair = index_of_orbit(config.search_spec, report)
                # cap the extended-path length at index_n_max unit periods
                n_top = max(4, config.index_n_max // tau)
                profile = iteration_profile(
                    config.search_spec, report, sorted({1, 2, 4, n_top})
                )
            except IndexMismatchError as exc:
                flags.append(f"period {tau} seed {res['label']}: {exc}")
                continue
            record = ob.record_from_report(
                report,
                pair=pair,
                mean_index=profile.mean_index,
                provenance={"seed": res["label"], "period": tau, "k": config.k},
            )
            record.provenance["profile"] = json.loads(profile.to_json())
            decision = registry.admit(record)
            if decision.admitted:
                admitted_here += 1
        per_period[str(tau)] = {
            "seeds": len(seeds),
            "admitted": admitted_here,
            "registry_size": len(registry),
        }

    registry.save_jsonl(out / "registry.jsonl")
    registry.save_summary_csv(out / "summary.csv")
    _write_index_table(registry, out / "index_table.csv")
    report = {
        "periods": {str(t): per_period[str(t)] for t in config.periods},
        "orbits": len(registry),
        "bound_a": config.bound_a,
        "constant_action_bound": config.bound_const,
        "modification_radius": config.mod_radius,
        "rail_violations": rail_violations,
        "flags": flags,
    }
    with open(out / "campaign_report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out / "metadata.json", "w") as fh:
        json.dump(
            {"wall_time_s": time.time() - t_start, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")},
            fh,
            indent=2,
        )
    try:
        from . import plotting

        plotting.render_search_figures(registry, out)
    except Exception as exc:  # plots are best-effort reporting
        flags.append(f"figure rendering failed: {exc}")
    return report, registry


def _post_checks(config, report, rail_violations):
    """A priori rail and original-system residual for modified searches."""
    notes = []
    loop = report.loop
    if config.mod_radius > 0.0 and loop.mean_action <= config.bound_a:
        speed = loop.max_speed()
        if speed > 0.95 * config.mod_radius:
            rail_violations.append(
                {
                    "period": loop.period,
                    "action": loop.mean_action,
                    "max_speed": speed,
                    "radius": config.mod_radius,
                    "advice": "modification radius too small; double it",
                }
            )
            return False, [f"rail violation at speed {speed:.4g} vs R={config.mod_radius}"]
        glued = bk.glue_trajectory(loop)
        resid = el_residual(config.spec, glued)
        if resid > config.el_residual_tol:
            return False, [
                f"orbit fails the original system: residual {resid:.3e} > {config.el_residual_tol}"
            ]
    return True, notes


def _write_index_table(registry, path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "period", "n", "iota", "nu", "lower_margin", "upper_margin"])
        for rec in sorted(registry.records, key=lambda r: (r.period, r.action)):
            prof = rec.provenance.get("profile", {})
            for n, row in sorted(prof.get("per_n", {}).items(), key=lambda kv: int(kv[0])):
                writer.writerow(
                    [rec.id, rec.period, n, row["iota"], row["nu"],
                     repr(row["lower_margin"]), repr(row["upper_margin"])]
                )


# ---------------------------------------------------------------------------
# verification suite


def run_verify(config, out_dir=None):
    """Run every module's invariant suite against the configured spec."""
    checks = []
    spec = config.spec
    rng = np.random.default_rng(11)

    def check(name, fn):
        t0 = time.time()
        try:
            detail = fn()
            checks.append({"name": name, "passed": True, "detail": str(detail), "s": round(time.time() - t0, 2)})
        except Exception as exc:
            checks.append({"name": name, "passed": False, "detail": str(exc), "s": round(time.time() - t0, 2)})

    check("lagrangian.derivative-consistency", lambda: f"worst rel err {lg.check_derivatives(spec, rng, n_points=1000):.2e}")
    check("lagrangian.legendre-roundtrip", lambda: _check_legendre_roundtrip(spec, rng))
    check("lagrangian.fenchel-inequality", lambda: _check_fenchel(spec, rng))
    check("lagrangian.class-certificate", lambda: _check_class(config))
    check("flow.group-property", lambda: _check_group(spec, rng))
    check("flow.symplecticity-and-reversibility", lambda: _check_reversibility(spec, rng))
    if spec.autonomous:
        check("flow.energy-conservation", lambda: _check_energy(spec, rng))
    check("segment.radii-positivity", lambda: _check_radii(config))
    check("segment.minimality-vs-competitors", lambda: _check_minimality(config, rng))
    check("broken.gradient-and-hessian-fd", lambda: _check_broken_fd(config, rng))
    check("broken.critical-point-pipeline", lambda: _check_critical(config))
    check("homotopy.shortening-identities", lambda: _check_shortening(config, rng))
    check("orbits.registry-idempotence", lambda: _check_registry(config))

    passed = all(c["passed"] for c in checks)
    report = {"passed": passed, "checks": checks}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "verify_report.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return report


def _check_legendre_roundtrip(spec, rng):
    worst = 0.0
    for _ in range(100):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, spec.dim)
        v = rng.uniform(-2, 2, spec.dim)
        p = lg.legendre(spec, t, q, v)
        v_back = lg.inverse_legendre(spec, t, q, p)
        worst = max(worst, float(np.linalg.norm(v_back - v)))
    assert worst < 1e-9, f"roundtrip error {worst:.3e}"
    return f"worst roundtrip error {worst:.2e}"


def _check_fenchel(spec, rng):
    worst = -np.inf
    for _ in range(1000):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, spec.dim)
        v = rng.uniform(-2, 2, spec.dim)
        p = rng.uniform(-2, 2, spec.dim)
        gap = float(np.dot(p, v) - spec.eval(t, q, v) - lg.dual_hamiltonian(spec, t, q, p))
        worst = max(worst, gap)
    assert worst <= 1e-9, f"Fenchel inequality violated by {worst:.3e}"
    return f"max Fenchel gap {worst:.2e} (<= 0 expected)"


def _check_class(config):
    grid = lg.ClassGrid(**config.raw["verify_grid"])
    rep = lg.verify_class(config.spec, grid)
    assert rep.q1_lower_bound > 0
    return (
        f"ell0={rep.q1_lower_bound:.4g} ell1={rep.ell1:.4g} "
        f"lq={rep.lower_quadratic:.4g} uq={rep.upper_quadratic:.4g} "
        f"tonelli_only={rep.tonelli_only}"
    )


def _check_group(spec, rng):
    worst = 0.0
    for _ in range(5):
        q0 = rng.uniform(0, 1, spec.dim)
        v0 = rng.uniform(-1, 1, spec.dim)
        full = integrate_el(spec, PhaseState(q0, v0), 0.0, 1.0, 800)
        half = integrate_el(spec, PhaseState(q0, v0), 0.0, 0.37, 296)
        rest = integrate_el(spec, half.end, 0.37, 1.0, 504)
        gap = max(
            np.linalg.norm(rest.qs[-1] - full.qs[-1]), np.linalg.norm(rest.vs[-1] - full.vs[-1])
        )
        worst = max(worst, float(gap))
    assert worst < 1e-8, f"group property violated: {worst:.3e}"
    return f"worst endpoint gap {worst:.2e}"


def _check_reversibility(spec, rng):
    worst = 0.0
    worst_sympl = 0.0
    for _ in range(3):
        q0 = rng.uniform(0, 1, spec.dim)
        v0 = rng.uniform(-1, 1, spec.dim)
        fwd = integrate_el(spec, PhaseState(q0, v0), 0.0, 1.0, 700)
        back = integrate_el(spec, fwd.end, 1.0, 0.0, 700)
        gap = max(np.linalg.norm(back.qs[-1] - q0), np.linalg.norm(back.vs[-1] - v0))
        worst = max(worst, float(gap))
        path = integrate_linearized(spec, fwd, steps=700)
        worst_sympl = max(worst_sympl, path.symplectic_defect())
    assert worst < 1e-8, f"reversibility violated: {worst:.3e}"
    assert worst_sympl < 1e-6, f"symplecticity violated: {worst_sympl:.3e}"
    return f"reverse gap {worst:.2e}, symplectic defect {worst_sympl:.2e}"


def _check_energy(spec, rng):
    worst = 0.0
    for _ in range(3):
        q0 = rng.uniform(0, 1, spec.dim)
        v0 = rng.uniform(-1, 1, spec.dim)
        traj = integrate_el(spec, PhaseState(q0, v0), 0.0, 1.0, 1000)
        hs = []
        for i in range(0, len(traj.ts), 100):
            p = lg.legendre(spec, traj.ts[i], traj.qs[i], traj.vs[i])
            hs.append(np.dot(p, traj.vs[i]) - spec.eval(traj.ts[i], traj.qs[i], traj.vs[i]))
        worst = max(worst, float(np.ptp(hs)))
    assert worst < 1e-7, f"energy drift {worst:.3e}"
    return f"max energy drift {worst:.2e}"


def _check_radii(config):
    rad = sg.estimate_radii(config.spec, lg.ClassGrid(**config.raw["verify_grid"]))
    assert rad.eps0 > 0 and rad.rho0 > 0 and rad.margin > 0
    return f"eps0={rad.eps0:.4g} rho0={rad.rho0:.4g} margin={rad.margin:.4g}"


def _check_minimality(config, rng):
    spec, radii = config.search_spec, config.radii
    from .homotopy import _polyline_action

    worst = -np.inf
    for _ in range(30):
        q0 = rng.uniform(0, 1, spec.dim)
        dq = rng.uniform(-0.5, 0.5, spec.dim) * radii.rho0
        t0 = float(rng.uniform(0, 1))
        dt = float(rng.uniform(0.3, 1.0)) * radii.eps0
        seg = sg.minimize_segment(spec, t0, t0 + dt, q0, q0 + dq, radii)
        for _ in range(20):
            mids = np.linspace(0, 1, 6)[1:-1, None] * dq[None, :] + q0[None, :]
            mids += 0.3 * np.linalg.norm(dq) * rng.standard_normal(mids.shape)
            ts = np.linspace(t0, t0 + dt, 6)
            qs = np.vstack([q0, mids, q0 + dq])
            worst = max(worst, seg.action - _polyline_action(spec, ts, qs))
    assert worst <= 1e-10, f"a competitor beat the minimizer by {worst:.3e}"
    return f"max (minimizer - competitor) action gap {worst:.2e}"


def _check_broken_fd(config, rng):
    spec, radii = config.search_spec, config.radii
    k = config.k
    nodes = rng.uniform(0.4, 0.6, (k, spec.dim))
    loop = bk.from_nodes(spec, radii, 1, k, nodes, steps_per_segment=config.steps_per_segment)
    grad = bk.discrete_gradient(loop)
    h = 1e-6
    worst_g = 0.0
    for trial in range(4):
        i = int(rng.integers(0, k))
        d = int(rng.integers(0, spec.dim))
        plus, minus = nodes.copy(), nodes.copy()
        plus[i, d] += h
        minus[i, d] -= h
        fd = (
            bk.from_nodes(spec, radii, 1, k, plus).mean_action
            - bk.from_nodes(spec, radii, 1, k, minus).mean_action
        ) / (2 * h)
        scale = max(1e-8, abs(fd))
        worst_g = max(worst_g, abs(grad[i, d] - fd) / scale)
    assert worst_g < 1e-5, f"gradient FD mismatch {worst_g:.3e}"
    hess = bk.discrete_hessian(loop)
    i = int(rng.integers(0, k))
    d = int(rng.integers(0, spec.dim))
    plus, minus = nodes.copy(), nodes.copy()
    plus[i, d] += h
    minus[i, d] -= h
    fd_row = (
        bk.discrete_gradient(bk.from_nodes(spec, radii, 1, k, plus))
        - bk.discrete_gradient(bk.from_nodes(spec, radii, 1, k, minus))
    ).reshape(-1) / (2 * h)
    scale = max(np.abs(fd_row).max(), 1e-8)
    worst_h = np.abs(hess[:, i * spec.dim + d] - fd_row).max() / scale
    assert worst_h < 1e-4, f"hessian FD mismatch {worst_h:.3e}"
    return f"grad rel err {worst_g:.2e}, hess rel err {worst_h:.2e}"


def _check_critical(config):
    spec, radii = config.search_spec, config.radii
    nodes = np.full((config.k, spec.dim), 0.5)
    rep = bk.find_critical(spec, radii, bk.from_nodes(spec, radii, 1, config.k, nodes), config.solver)
    assert rep.converged, "constant seed did not converge"
    assert rep.el_residual < config.el_residual_tol
    ref = bk.refine(rep.loop, 2)
    pair_ref = bk.hessian_inertia(bk.discrete_hessian(ref))[:2]
    assert pair_ref == rep.pair(), f"refine changed the pair {rep.pair()} -> {pair_ref}"
    it3 = bk.iterate_loop(rep.loop, 3)
    assert abs(it3.mean_action - rep.loop.mean_action) < 1e-12
    return f"pair {rep.pair()} stable under refine; iterate action drift {abs(it3.mean_action - rep.loop.mean_action):.1e}"


def _check_shortening(config, rng):
    spec, radii = config.search_spec, config.radii
    m = 16 * config.k
    ts = np.arange(m) / m
    center = rng.uniform(0, 1)
    samples = (center + 0.05 * np.sin(2 * np.pi * ts) + 0.02 * np.sin(4 * np.pi * ts))[:, None]
    if spec.dim > 1:
        samples = np.hstack([samples] + [np.full((m, 1), rng.uniform(0, 1))] * (spec.dim - 1))
    loop = ho.SampledLoop(period=1, samples=samples, spec=spec)
    acts = [ho.shorten_homotopy(spec, radii, loop, config.k, s).action for s in np.linspace(0, 1, 9)]
    assert all(acts[i + 1] <= acts[i] + 1e-9 for i in range(len(acts) - 1)), f"not monotone: {acts}"
    short = ho.shorten(spec, radii, loop, config.k)
    assert abs(acts[-1] - short.mean_action) < 1e-9
    back = ho.shorten(spec, radii, ho.sample_broken_loop(short), config.k)
    assert abs(back.mean_action - short.mean_action) < 1e-9, "projection not idempotent"
    return f"action path {acts[0]:.6f} -> {acts[-1]:.6f}, idempotent"


def _check_registry(config):
    spec, radii = config.search_spec, config.radii
    rep = bk.find_critical(
        spec, radii, bk.from_nodes(spec, radii, 1, config.k, np.full((config.k, spec.dim), 0.5)),
        config.solver,
    )
    rec = ob.record_from_report(rep)
    reg = ob.Registry(bound_a=config.bound_a)
    d1 = reg.admit(rec)
    d2 = reg.admit(rec)
    it2 = bk.iterate_loop(rep.loop, 2)
    rep2 = bk.find_critical(spec, radii, it2, config.solver)
    d3 = reg.admit(ob.record_from_report(rep2))
    assert d1.admitted and not d2.admitted and not d3.admitted
    assert len(reg) == 1
    return "duplicate and iterate both rejected"


# ---------------------------------------------------------------------------
# bangert demo


def _demo_path(config, which):
    m = int(config.raw["bangert"]["loop_samples"])
    nx = int(config.raw["bangert"]["x_samples"])
    ts = np.arange(m) / m
    if which == "moving-point":
        spec = lg.build_family("mechanical", {"dim": 1})
        loops = [
            ho.SampledLoop(period=1, samples=np.full((m, 1), 0.2 * x), spec=spec)
            for x in np.linspace(0, 1, nx)
        ]
        return spec, ho.LoopPath(x0=0.0, x1=1.0, loops=loops)
    if which == "pendulum-wave":
        spec = lg.build_family(
            "mechanical",
            {
                "dim": 1,
                "potential": {
                    "kind": "cosine-series",
                    "terms": [{"coeff": -0.25, "wave": [1]}, {"coeff": -0.25, "wave": [0]}],
                },
            },
        )
        loops = []
        for x in np.linspace(0, 1, nx):
            samples = (0.3 * x + 0.05 * x * np.sin(2 * np.pi * ts))[:, None]
            loops.append(ho.SampledLoop(period=1, samples=samples, spec=spec))
        return spec, ho.LoopPath(x0=0.0, x1=1.0, loops=loops)
    raise ConfigError(f"unknown bangert demo {which!r}")


def run_bangert_demo(config, out_dir):
    """Run the demo paths over the configured n values; write tables and slices."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_values = [int(n) for n in config.raw["bangert"]["n_values"]]
    demos = ["moving-point", "pendulum-wave"]
    rows = []
    slice_files = []
    for which in demos:
        spec, path = _demo_path(config, which)
        w_ref = None
        for n in n_values:
            res = ho.bangert(spec, path, n)
            w = ho.w1inf_bound(res)
            w_ref = w if w_ref is None else w_ref
            rows.append(
                {
                    "demo": which,
                    "n": n,
                    "c_theta": res.c_theta,
                    "max_mean_action": float(res.mean_actions.max()),
                    "bound": max(res.endpoint_actions) + res.c_theta / n,
                    "min_slack": res.bound_slack,
                    "w1inf": w,
                }
            )
            if res.bound_slack < -1e-9:
                raise RuntimeError(f"bangert bound violated: demo {which}, n={n}")
        # slice export for the largest n: s in {0, 1/2, 1} at mid x
        res = ho.bangert(spec, path, n_values[-1])
        fname = out / f"bangert_slices_{which}.csv"
        _write_slices(res, fname)
        slice_files.append(str(fname))
    import csv

    table = out / "bangert_slack_table.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["demo", "n", "c_theta", "max_mean_action", "bound", "min_slack", "w1inf"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    try:
        from . import plotting

        plotting.render_bangert_figures(rows, out)
    except Exception:
        pass
    return {"table": str(table), "slices": slice_files, "rows": rows}


def _write_slices(res, path):
    import csv

    mid_x = 0.5 * (res.path.x0 + res.path.x1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = res.path.loops[0].dim
        writer.writerow(["s", "x", "t"] + [f"q_{i+1}" for i in range(dim)])
        for s in (0.0, 0.5, 1.0):
            loop = res.homotopy_eval(s, mid_x)
            ts, qs = loop.closed_polyline()
            for t, q in zip(ts, qs):
                writer.writerow([s, mid_x, repr(float(t))] + [repr(float(x)) for x in q])
