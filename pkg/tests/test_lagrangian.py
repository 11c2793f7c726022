import numpy as np
import pytest

from tonelli import hyperdual as hd
from tonelli import lagrangian as lg


def test_family_hand_values(free, pendulum, forced_pendulum):
    assert abs(free.eval(0.0, np.zeros(1), np.array([0.7])) - 0.245) < 1e-15
    # pendulum L = v^2/2 + cos(2 pi q)/4
    assert pendulum.eval(0.0, np.zeros(1), np.zeros(1)) == 0.25
    # hand evaluation of the forced closed form at (0, 0, 0)
    assert forced_pendulum.eval(0.0, np.zeros(1), np.zeros(1)) == 0.375


def test_fiberwise_quadratic_momentum():
    spec = lg.build_family("fiberwise-quadratic", {"dim": 2, "A": np.diag([2.0, 2.0])})
    p = lg.legendre(spec, 0.0, np.zeros(2), np.array([1.0, 0.0]))
    assert np.allclose(p, [4.0, 0.0])


def test_family_rejects_bad_parameters():
    with pytest.raises(lg.FamilyError):
        lg.build_family("fiberwise-quadratic", {"dim": 1, "A": np.array([[-1.0]])})
    with pytest.raises(lg.FamilyError):
        # non-integer wave vector breaks 1-periodicity in q
        lg.build_family("mechanical", {"dim": 1, "potential": {"kind": "cosine", "coeff": 0.3, "wave": [0.5]}})


def test_derivative_consistency(free, pendulum, forced_pendulum, quartic_pendulum, rng):
    for spec in (free, pendulum, forced_pendulum, quartic_pendulum):
        assert lg.check_derivatives(spec, rng, n_points=120) < 1e-6


def test_custom_family_via_duals(rng):
    spec = lg.build_family(
        "custom",
        {
            "dim": 1,
            "eval": lambda t, q, v: 0.5 * v[0] * v[0]
            + 0.1 * hd.cos(2 * np.pi * q[0]) * hd.sin(2 * np.pi * t) * v[0]
            + 0.25 * hd.cos(2 * np.pi * q[0]),
        },
    )
    assert lg.check_derivatives(spec, rng, n_points=40) < 1e-6
    # d_vt is nonzero and must match finite differences too
    t, q, v = 0.2, np.array([0.3]), np.array([0.4])
    h = 1e-6
    fd = (spec.d_v(t + h, q, v) - spec.d_v(t - h, q, v)) / (2 * h)
    assert abs(spec.d_vt(t, q, v)[0] - fd[0]) < 1e-6


def test_verify_class_free_particle(free):
    rep = lg.verify_class(free, lg.ClassGrid(t_points=8, q_points=8))
    assert rep.q1_lower_bound == 1.0
    assert rep.q2_bounds[0] == 1.0
    # additive normalization (grid minimum shifted to 1) gives the envelope
    assert rep.lower_quadratic == 0.5
    assert rep.upper_quadratic == 1.0
    assert rep.normalization_shift == 1.0
    assert not rep.tonelli_only
    assert rep.superlinearity_margin > 0


def test_verify_class_pendulum(pendulum):
    rep = lg.verify_class(pendulum, lg.ClassGrid(t_points=4, q_points=32))
    assert rep.q1_lower_bound == 1.0
    # grid scan oracle: |d2L/dq2| = pi^2 |cos(2 pi q)|, attained at cos = +-1
    assert abs(rep.q2_bounds[2] - np.pi**2) < 1e-12


def test_verify_class_quartic_flags_tonelli_only(quartic_pendulum):
    rep = lg.verify_class(quartic_pendulum, lg.ClassGrid(t_points=4, q_points=8))
    assert rep.tonelli_only
    assert rep.q1_lower_bound > 0


def test_verify_class_q1_violation_witness():
    bad = lg.build_family(
        "custom",
        {"dim": 1, "eval": lambda t, q, v: -0.5 * v[0] * v[0] + 0.1 * hd.cos(2 * np.pi * q[0])},
    )
    with pytest.raises(lg.ClassError, match="Q1 violated"):
        lg.verify_class(bad, lg.ClassGrid(t_points=2, q_points=4, v_points=5, v_max=2.0))


def test_legendre_trivial_and_roundtrip(free, quartic_pendulum, rng):
    assert lg.legendre(free, 0.0, np.zeros(1), np.array([0.7]))[0] == 0.7
    for _ in range(100):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, 1)
        v = rng.uniform(-2, 2, 1)
        for spec in (free, quartic_pendulum):
            p = lg.legendre(spec, t, q, v)
            assert np.linalg.norm(lg.inverse_legendre(spec, t, q, p) - v) < 1e-9


def test_inverse_legendre_against_grid_minimization(quartic_pendulum):
    # Fenchel sup over a fine velocity grid is the independent oracle
    t, q = 0.3, np.array([0.2])
    p = np.array([9.0])
    v_star = lg.inverse_legendre(quartic_pendulum, t, q, p)
    grid = np.linspace(-4, 4, 40001)
    vals = p[0] * grid - np.array(
        lg.eval_batch(quartic_pendulum, np.full(len(grid), t), np.full((len(grid), 1), q[0]), grid[:, None])
    )
    assert abs(grid[np.argmax(vals)] - v_star[0]) < 2e-4
    h_direct = lg.dual_hamiltonian(quartic_pendulum, t, q, p)
    assert abs(h_direct - vals.max()) < 1e-7


def test_dual_hamiltonian_values(free, pendulum):
    assert abs(lg.dual_hamiltonian(free, 0.0, np.zeros(1), np.array([0.7])) - 0.245) < 1e-12
    # v* = 0, so H = -L(., 0, 0) = -1/4
    assert abs(lg.dual_hamiltonian(pendulum, 0.0, np.zeros(1), np.zeros(1)) + 0.25) < 1e-12


def test_c_of_l_pendulum(pendulum):
    # grid maximization oracle: max_{|p|<=1} p^2/2 - cos(2 pi q)/4 = 1/2 + 1/4
    assert abs(lg.c_of_l(pendulum, t_points=4, q_points=32) - 0.75) < 1e-12


def test_fenchel_inequality(pendulum, rng):
    worst = -np.inf
    for _ in range(300):
        t = float(rng.uniform(0, 1))
        q = rng.uniform(0, 1, 1)
        v = rng.uniform(-2, 2, 1)
        p = rng.uniform(-2, 2, 1)
        gap = p @ v - pendulum.eval(t, q, v) - lg.dual_hamiltonian(pendulum, t, q, p)
        worst = max(worst, gap)
        # equality exactly at p = legendre(v)
        p_eq = lg.legendre(pendulum, t, q, v)
        eq_gap = p_eq @ v - pendulum.eval(t, q, v) - lg.dual_hamiltonian(pendulum, t, q, p_eq)
        assert abs(eq_gap) < 1e-9
    assert worst <= 1e-10


class TestModification:
    def test_quadratic_families_are_fixed_points(self, free):
        mod = lg.make_modification(free, 1.0)
        assert mod.eval is free.eval
        assert mod.radius == 1.0

    def test_m1_exact(self, quartic_pendulum, rng):
        mod = lg.make_modification(quartic_pendulum, 2.0)
        for _ in range(200):
            t = float(rng.uniform(0, 1))
            q = rng.uniform(0, 1, 1)
            v = rng.uniform(-1.9, 1.9, 1)
            assert mod.eval(t, q, v) == quartic_pendulum.eval(t, q, v)
        # differs beyond the band
        v4 = np.array([4.0])
        assert mod.eval(0.0, np.zeros(1), v4) != quartic_pendulum.eval(0.0, np.zeros(1), v4)

    def test_m2_floor_on_grid(self, quartic_pendulum):
        mod = lg.make_modification(quartic_pendulum, 3.0)
        vs = np.linspace(-9.0, 9.0, 721)[:, None]
        worst = np.inf
        for q in np.linspace(0, 1, 9):
            ls = lg.eval_batch(mod, np.zeros(len(vs)), np.full((len(vs), 1), q), vs)
            worst = min(worst, float((ls - (np.abs(vs[:, 0]) - mod.c_of_l)).min()))
        assert worst >= 0.0

    def test_modified_passes_class_certificate(self, quartic_pendulum):
        mod = lg.make_modification(quartic_pendulum, 2.0)
        rep = lg.verify_class(mod, lg.ClassGrid(t_points=2, q_points=8, v_points=33, v_max=10.0))
        assert rep.q1_lower_bound > 0
        assert not rep.tonelli_only
        assert lg.check_derivatives(mod, np.random.default_rng(0), n_points=120, v_scale=8.0) < 1e-6

    def test_rejects_radius_below_superlinear_floor(self):
        tiny = lg.build_family("quartic-tonelli", {"dim": 1, "scale": 0.01})
        with pytest.raises(lg.ModificationError, match="minimal admissible R"):
            lg.make_modification(tiny, 0.5)
