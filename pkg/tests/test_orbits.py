import numpy as np
import pytest

from tonelli import broken as bk
from tonelli import orbits as ob


@pytest.fixture(scope="module")
def pend_orbits(pendulum, radii16):
    reports = {}
    for name, q_star in (("elliptic", 0.0), ("hyperbolic", 0.5)):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.full((16, 1), q_star))
        )
        reports[name] = ob.record_from_report(rep)
    return reports


class TestConstantActionBound:
    def test_free(self, free):
        bound, _ = ob.constant_action_bound(free)
        assert bound == 0.0

    def test_pendulum(self, pendulum):
        bound, _ = ob.constant_action_bound(pendulum)
        assert abs(bound - 0.25) < 1e-12  # attained at q = 0

    def test_forced_pendulum_time_average(self, forced_pendulum):
        # closed-form time integral: the forcing factor averages to one
        bound, _ = ob.constant_action_bound(forced_pendulum)
        assert abs(bound - 0.25) < 1e-12


class TestEquivalence:
    def test_orbit_equals_own_iterate(self, pend_orbits):
        rec = pend_orbits["elliptic"]
        it3 = bk.iterate_loop(rec.loop, 3)
        rec3 = ob.OrbitRecord(
            id="x", period=3, loop=it3, action=it3.mean_action, iota=0, nu=0,
            mean_index=0.0, max_speed=0.0, el_residual=0.0,
        )
        assert ob.equivalent(rec, rec3)

    def test_time_shift_invariance(self, forced_pendulum, radii16):
        ts = np.arange(32) / 16
        nodes = (0.15 * np.sin(np.pi * ts + np.pi / 2))[:, None]
        rep = bk.find_critical(
            forced_pendulum, radii16, bk.from_nodes(forced_pendulum, radii16, 2, 16, nodes)
        )
        rec = ob.record_from_report(rep)
        shifted_nodes = np.roll(rep.loop.nodes, -16, axis=0)
        rep2 = bk.find_critical(
            forced_pendulum, radii16, bk.from_nodes(forced_pendulum, radii16, 2, 16, shifted_nodes)
        )
        rec2 = ob.record_from_report(rep2)
        assert ob.equivalent(rec, rec2)

    def test_deck_translation_invariance(self, pendulum, radii16, pend_orbits):
        rep = bk.find_critical(
            pendulum, radii16, bk.from_nodes(pendulum, radii16, 1, 16, np.full((16, 1), 1.0))
        )
        assert ob.equivalent(pend_orbits["elliptic"], ob.record_from_report(rep))

    def test_distinct_equilibria(self, pend_orbits):
        assert not ob.equivalent(pend_orbits["elliptic"], pend_orbits["hyperbolic"])

    def test_symmetric_dims_merge_translates(self, free, radii16):
        a = bk.find_critical(free, radii16, bk.from_nodes(free, radii16, 1, 16, np.full((16, 1), 0.1)))
        b = bk.find_critical(free, radii16, bk.from_nodes(free, radii16, 1, 16, np.full((16, 1), 0.4)))
        ra, rb = ob.record_from_report(a), ob.record_from_report(b)
        assert not ob.equivalent(ra, rb)
        assert ob.equivalent(ra, rb, symmetric_dims=[0])
        assert ob.symmetric_translation_dims(free) == [0]

    def test_pendulum_has_no_symmetric_dims(self, pendulum):
        assert ob.symmetric_translation_dims(pendulum) == []


class TestRegistry:
    def test_admission_and_dedupe(self, pend_orbits):
        reg = ob.Registry(bound_a=0.5)
        d1 = reg.admit(pend_orbits["elliptic"])
        d2 = reg.admit(pend_orbits["elliptic"])
        assert d1.admitted and not d2.admitted
        assert len(reg) == 1

    def test_iterate_rejected(self, pendulum, radii16, pend_orbits):
        reg = ob.Registry(bound_a=0.5)
        reg.admit(pend_orbits["elliptic"])
        it2 = bk.iterate_loop(pend_orbits["elliptic"].loop, 2)
        rep2 = bk.find_critical(pendulum, radii16, it2)
        d = reg.admit(ob.record_from_report(rep2))
        assert not d.admitted and "equivalent" in d.reason

    def test_smaller_period_replaces(self, pendulum, radii16, pend_orbits):
        reg = ob.Registry(bound_a=0.5)
        it2 = bk.iterate_loop(pend_orbits["elliptic"].loop, 2)
        rec2 = ob.record_from_report(bk.find_critical(pendulum, radii16, it2))
        reg.admit(rec2)
        d = reg.admit(pend_orbits["elliptic"])
        assert d.admitted and d.replaced
        assert len(reg) == 1 and reg.records[0].period == 1

    def test_action_bound_rejection(self, pend_orbits):
        reg = ob.Registry(bound_a=0.1)
        d = reg.admit(pend_orbits["elliptic"])  # action 0.25 >= 0.1
        assert not d.admitted and "bound" in d.reason

    def test_idempotence_of_readmission(self, pend_orbits):
        reg = ob.Registry(bound_a=0.5)
        for rec in pend_orbits.values():
            reg.admit(rec)
        size = len(reg)
        for rec in list(reg.records):
            reg.admit(rec)
        assert len(reg) == size

    def test_iterate_closure_small_orders(self, pendulum, radii16, pend_orbits):
        reg = ob.Registry(bound_a=0.5)
        for rec in pend_orbits.values():
            reg.admit(rec)
        for rec in list(reg.records):
            for n in (2, 3, 4):
                loop_n = bk.iterate_loop(rec.loop, n)
                rec_n = ob.record_from_report(bk.find_critical(pendulum, radii16, loop_n))
                assert not reg.admit(rec_n).admitted


def test_persistence_roundtrip(tmp_path, pendulum, radii16, pend_orbits):
    reg = ob.Registry(bound_a=0.5)
    for rec in pend_orbits.values():
        reg.admit(rec)
    path = tmp_path / "registry.jsonl"
    reg.save_jsonl(path)
    loaded = ob.Registry.load_jsonl(path, pendulum, radii16, bound_a=0.5)
    assert len(loaded) == len(reg)
    for a, b in zip(reg.records, loaded.records):
        assert a.id == b.id
        assert abs(a.action - b.action) < 1e-12
        assert (a.iota, a.nu) == (b.iota, b.nu)
    csv_path = tmp_path / "summary.csv"
    reg.save_summary_csv(csv_path)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "id,period,action,iota,nu,mean_index,max_speed"
    assert len(lines) == len(reg) + 1
