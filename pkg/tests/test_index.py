import numpy as np
import pytest

from tonelli import broken as bk
from tonelli.index import (AnalyticPath, IndexMismatchError, PathEvaluator, cz_index,
                           index_of_orbit, iteration_profile, _stabilized_counts)

W = np.pi


def elliptic_gamma(t):
    return np.array([[np.cos(W * t), np.sin(W * t) / W], [-W * np.sin(W * t), np.cos(W * t)]])


def elliptic_s(t):
    return np.diag([W * W, 1.0])


def hyperbolic_gamma(t):
    return np.array([[np.cosh(W * t), np.sinh(W * t) / W], [W * np.sinh(W * t), np.cosh(W * t)]])


def hyperbolic_s(t):
    return np.diag([-W * W, 1.0])


def shear_gamma(t):
    return np.array([[1.0, t], [0.0, 1.0]])


def shear_s(t):
    return np.diag([0.0, 1.0])


class TestClosedFormPaths:
    def test_elliptic_rotation(self):
        p = AnalyticPath(elliptic_gamma, elliptic_s, 1.0, 2, samples=1500)
        assert cz_index(p).as_tuple() == (1, 0)

    def test_hyperbolic(self):
        p = AnalyticPath(hyperbolic_gamma, hyperbolic_s, 1.0, 2, samples=1500)
        assert cz_index(p).as_tuple() == (0, 0)

    def test_free_shear_degenerate(self):
        p = AnalyticPath(shear_gamma, shear_s, 1.0, 2, samples=1500)
        assert cz_index(p).as_tuple() == (0, 1)

    def test_small_rotation_normalization(self):
        # positive twist gets +1, negative twist -1 (the CZ normalization)
        om = 2.0
        pos = AnalyticPath(
            lambda t: np.array([[np.cos(om * t), np.sin(om * t)], [-np.sin(om * t), np.cos(om * t)]]),
            lambda t: om * np.eye(2),
            1.0, 2, samples=1200,
        )
        neg = AnalyticPath(
            lambda t: np.array([[np.cos(om * t), -np.sin(om * t)], [np.sin(om * t), np.cos(om * t)]]),
            lambda t: -om * np.eye(2),
            1.0, 2, samples=1200,
        )
        assert cz_index(pos).as_tuple() == (1, 0)
        assert cz_index(neg).as_tuple() == (-1, 0)

    def test_block_additivity_with_coincident_crossings(self):
        def prod_gamma(t):
            g = np.eye(4)
            g[0, 0], g[0, 2] = 1.0, t
            ge = elliptic_gamma(t)
            g[1, 1], g[1, 3], g[3, 1], g[3, 3] = ge[0, 0], ge[0, 1], ge[1, 0], ge[1, 1]
            return g

        p = AnalyticPath(prod_gamma, lambda t: np.diag([0.0, W * W, 1.0, 1.0]), 1.0, 4, samples=1500)
        assert cz_index(p).as_tuple() == (1, 1)

    def test_elliptic_iterates_closed_form(self):
        ev = AnalyticPath(elliptic_gamma, elliptic_s, 1.0, 2, samples=1500, n_periods=8)
        counts = _stabilized_counts(ev, list(range(1, 9)), (1e-3, 5e-4, 2.5e-4, 1.25e-4))
        for n in range(1, 9):
            iota = -1 + counts[n]
            nu = ev.nu_of_power(n)
            assert (iota, nu) == ((n if n % 2 else n - 1), (0 if n % 2 else 2))

    def test_perturbation_stability_nondegenerate(self, rng):
        base = AnalyticPath(elliptic_gamma, elliptic_s, 1.0, 2, samples=1200)
        noise = rng.standard_normal((len(base.base_mats), 2, 2))
        sym = 0.5 * (noise + np.swapaxes(noise, 1, 2))
        j = np.array([[0.0, 1.0], [-1.0, 0.0]])
        factor = np.eye(2) + 1e-8 * np.einsum("ij,bjk->bik", j, sym)
        noised = PathEvaluator(base.ts, np.einsum("bij,bjk->bik", base.base_mats, factor),
                               base.s_mats)
        assert cz_index(noised).as_tuple()[0] == 1

    def test_path_validation(self):
        p = AnalyticPath(elliptic_gamma, elliptic_s, 1.0, 2, samples=64)
        bad = p.base_mats.copy()
        bad[0] = 2 * np.eye(2)
        from tonelli.flow import SymplecticPath

        sp = SymplecticPath(dim=2, ts=p.ts, mats=bad, s_mats=p.s_mats,
                            orbit_qs=np.zeros((65, 1)), orbit_vs=np.zeros((65, 1)))
        with pytest.raises(ValueError):
            cz_index(sp)


class TestOrbitPipeline:
    def test_equilibria_pairs_agree_with_hessian(self, pendulum, radii16):
        for q_star, expected in ((0.0, (1, 0)), (0.5, (0, 0))):
            rep = bk.find_critical(
                pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.full((16, 1), q_star))
            )
            pair = index_of_orbit(pendulum, rep)
            assert pair.as_tuple() == expected

    def test_free_particle_pair(self, free, radii16):
        rep = bk.find_critical(free, radii16, bk.from_nodes(free, radii16, 1, 16, np.full((16, 1), 0.3)))
        assert index_of_orbit(free, rep).as_tuple() == (0, 1)

    def test_mismatch_is_an_error_not_a_preference(self, pendulum, radii16):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.zeros((16, 1)))
        )
        rep.morse_index = 5  # corrupt the Hessian data on purpose
        with pytest.raises(IndexMismatchError, match="remedies"):
            index_of_orbit(pendulum, rep)

    def test_elliptic_profile_and_mean_index(self, pendulum, radii16):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.zeros((16, 1)))
        )
        prof = iteration_profile(pendulum, rep, [1, 2, 3, 4, 5, 8, 16, 32])
        for n, pair in prof.pairs.items():
            expected = (n, 0) if n % 2 else (n - 1, 2)
            assert pair.as_tuple() == expected
        assert prof.mean_index == 1.0
        assert all(m[0] >= -1e-9 and m[1] >= -1e-9 for m in prof.margins.values())

    def test_hyperbolic_profile_beyond_float_horizon(self, pendulum, radii16):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.full((16, 1), 0.5))
        )
        prof = iteration_profile(pendulum, rep, [1, 2, 8, 32])
        assert all(p.as_tuple() == (0, 0) for p in prof.pairs.values())
        assert prof.mean_index == 0.0

    def test_mean_index_subadditivity_proxy(self, pendulum, radii16):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.zeros((16, 1)))
        )
        prof = iteration_profile(pendulum, rep, [4, 8, 16, 32])
        for n in (4, 8, 16):
            a = prof.pairs[n].iota / n
            b = prof.pairs[2 * n].iota / (2 * n)
            assert abs(a - b) <= 2 * 1 / n

    def test_report_json_shape(self, pendulum, radii16):
        import json

        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.zeros((16, 1)))
        )
        prof = iteration_profile(pendulum, rep, [1, 2, 4])
        payload = json.loads(prof.to_json())
        assert {"iota", "nu", "mean_index", "per_n"} <= set(payload)
        assert {"iota", "nu", "lower_margin", "upper_margin"} <= set(payload["per_n"]["2"])
