import numpy as np
import pytest

from tonelli import flow
from tonelli import lagrangian as lg


def test_free_particle_straight_line(free):
    traj = flow.integrate_el(free, flow.PhaseState([0.0], [0.3]), 0.0, 1.0, 64)
    assert abs(traj.qs[-1, 0] - 0.3) < 1e-14
    assert abs(traj.vs[-1, 0] - 0.3) < 1e-14


def test_equilibrium_is_fixed(pendulum):
    traj = flow.integrate_el(pendulum, flow.PhaseState([0.0], [0.0]), 0.0, 1.0, 128)
    assert np.abs(traj.qs).max() < 1e-15
    assert flow.el_residual(pendulum, traj) < 1e-12


def test_rk4_self_convergence_order(pendulum):
    state = flow.PhaseState([0.25], [0.0])
    ends = {}
    for steps in (250, 500, 1000, 2000):
        t = flow.integrate_el(pendulum, state, 0.0, 1.0, steps)
        ends[steps] = np.concatenate([t.qs[-1], t.vs[-1]])
    e1 = np.linalg.norm(ends[250] - ends[2000])
    e2 = np.linalg.norm(ends[500] - ends[2000])
    e3 = np.linalg.norm(ends[1000] - ends[2000])
    order12 = np.log2(e1 / e2)
    order23 = np.log2(e2 / e3)
    assert order12 > 3.5 and order23 > 3.5  # measured 4th order
    assert np.linalg.norm(ends[1000] - ends[2000]) < 1e-8


def test_blowup_guard():
    spec = lg.build_family("mechanical", {"dim": 1})
    with pytest.raises(flow.FlowError, match="blow-up"):
        flow.integrate_el(spec, flow.PhaseState([0.0], [1.0]), 0.0, 1.0, 16, guard=0.5)


def test_linearized_free_particle_shear(free):
    traj = flow.integrate_el(free, flow.PhaseState([0.0], [0.0]), 0.0, 1.0, 200)
    path = flow.integrate_linearized(free, traj, steps=400)
    assert np.allclose(path.mats[-1], [[1.0, 1.0], [0.0, 1.0]], atol=1e-12)


def test_linearized_hyperbolic_multipliers(pendulum):
    # sigma'' = pi^2 sigma at q = 1/2: multipliers e^{+-pi}
    traj = flow.integrate_el(pendulum, flow.PhaseState([0.5], [0.0]), 0.0, 1.0, 400)
    path = flow.integrate_linearized(pendulum, traj, steps=1200)
    eigs = np.sort(np.linalg.eigvals(path.mats[-1]).real)
    assert abs(eigs[1] - np.exp(np.pi)) < 1e-5
    assert abs(eigs[0] - np.exp(-np.pi)) < 1e-7


def test_linearized_elliptic_rotation(pendulum):
    # sigma'' = -pi^2 sigma at q = 0: conjugate to rotation by pi over one period
    traj = flow.integrate_el(pendulum, flow.PhaseState([0.0], [0.0]), 0.0, 1.0, 400)
    path = flow.integrate_linearized(pendulum, traj, steps=1200)
    m = path.mats[-1]
    assert abs(np.trace(m) - 2.0 * np.cos(np.pi)) < 1e-8
    assert abs(np.linalg.det(m) - 1.0) < 1e-10


def test_symplecticity_along_path(pendulum, rng):
    traj = flow.integrate_el(pendulum, flow.PhaseState(rng.uniform(0, 1, 1), rng.uniform(-1, 1, 1)), 0.0, 1.0, 500)
    path = flow.integrate_linearized(pendulum, traj, steps=500)
    assert path.symplectic_defect() < 1e-6


def test_linearized_halving_convergence(pendulum):
    traj = flow.integrate_el(pendulum, flow.PhaseState([0.3], [0.2]), 0.0, 1.0, 2000)
    ends = {}
    for steps in (250, 500, 1000):
        ends[steps] = flow.integrate_linearized(pendulum, traj, steps=steps).mats[-1]
    e1 = np.abs(ends[250] - ends[1000]).max()
    e2 = np.abs(ends[500] - ends[1000]).max()
    assert np.log2(e1 / e2) > 2.0  # at least second order under halving


def test_flow_group_property(pendulum, rng):
    for _ in range(3):
        q0, v0 = rng.uniform(0, 1, 1), rng.uniform(-1, 1, 1)
        full = flow.integrate_el(pendulum, flow.PhaseState(q0, v0), 0.0, 1.0, 1000)
        part = flow.integrate_el(pendulum, flow.PhaseState(q0, v0), 0.0, 0.4, 400)
        rest = flow.integrate_el(pendulum, part.end, 0.4, 1.0, 600)
        assert np.linalg.norm(rest.qs[-1] - full.qs[-1]) < 1e-8
        assert np.linalg.norm(rest.vs[-1] - full.vs[-1]) < 1e-8


def test_reversibility(pendulum, rng):
    q0, v0 = rng.uniform(0, 1, 1), rng.uniform(-1, 1, 1)
    fwd = flow.integrate_el(pendulum, flow.PhaseState(q0, v0), 0.0, 1.0, 800)
    back = flow.integrate_el(pendulum, fwd.end, 1.0, 0.0, 800)
    assert np.linalg.norm(back.qs[-1] - q0) < 1e-8
    assert np.linalg.norm(back.vs[-1] - v0) < 1e-8


def test_energy_conservation_autonomous(pendulum, rng):
    q0, v0 = rng.uniform(0, 1, 1), rng.uniform(-1, 1, 1)
    traj = flow.integrate_el(pendulum, flow.PhaseState(q0, v0), 0.0, 1.0, 1200)
    hs = []
    for i in range(0, len(traj.ts), 60):
        p = lg.legendre(pendulum, traj.ts[i], traj.qs[i], traj.vs[i])
        hs.append(float(p @ traj.vs[i] - pendulum.eval(traj.ts[i], traj.qs[i], traj.vs[i])))
    assert np.ptp(hs) < 1e-7


def test_el_residual_detects_corruption(pendulum):
    traj = flow.integrate_el(pendulum, flow.PhaseState([0.25], [0.0]), 0.0, 1.0, 1000)
    clean = flow.el_residual(pendulum, traj)
    assert clean < 1e-6
    traj.vs[500, 0] += 1e-3
    assert flow.el_residual(pendulum, traj) > 1e-2


def test_trajectory_csv_export(tmp_path, free):
    traj = flow.integrate_el(free, flow.PhaseState([0.0], [0.5]), 0.0, 1.0, 8)
    out = tmp_path / "traj.csv"
    traj.to_csv(out)
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (9, 3)
    header = out.read_text().splitlines()[0]
    assert header == "t,q_1,v_1"
