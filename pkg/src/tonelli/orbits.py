"""Registry of found periodic orbits with geometric-distinctness dedup.

Orbits are identified when one is a time-shifted (by an integer, the only
shifts respecting the 1-periodic Lagrangian), deck-translated iterate of the
other in phase space.  On a collision the smaller-period representative is
kept; iterates are never counted as new orbits.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .broken import BrokenLoop, from_nodes, iterate_loop, loop_from_json, loop_to_json
from .segment import minimal_lift

__all__ = [
    "OrbitRecord",
    "Registry",
    "AdmissionDecision",
    "constant_action_bound",
    "equivalent",
    "record_from_report",
]

DEDUPE_TOL = 1e-4


def constant_action_bound(spec, q_points=32, t_points=64):
    """max over q of the unit-period action of the constant loop at q.

    The admission bound of the registry must exceed this value.  Composite
    Simpson in t over a q-grid; the grid margin (largest neighbour jump) is
    returned alongside.
    """
    n = spec.dim
    qs_1d = np.linspace(0.0, 1.0, q_points, endpoint=False)
    q_mesh = np.stack(np.meshgrid(*([qs_1d] * n), indexing="ij"), axis=-1).reshape(-1, n)
    if t_points % 2:
        t_points += 1
    ts = np.linspace(0.0, 1.0, t_points + 1)
    w = np.ones(t_points + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (1.0 / t_points) / 3.0
    vals = []
    zero = np.zeros(n)
    from .lagrangian import eval_batch

    for q in q_mesh:
        ls = eval_batch(spec, ts, np.broadcast_to(q, (len(ts), n)), np.broadcast_to(zero, (len(ts), n)))
        vals.append(float(w @ ls))
    vals = np.asarray(vals)
    order = np.argsort(vals)
    margin = float(vals[order[-1]] - vals[order[-2]]) if len(vals) > 1 else 0.0
    return float(vals.max()), margin


@dataclass
class OrbitRecord:
    id: str
    period: int
    loop: BrokenLoop
    action: float
    iota: int
    nu: int
    mean_index: float
    max_speed: float
    el_residual: float
    provenance: dict = field(default_factory=dict)

    def summary_row(self):
        return {
            "id": self.id,
            "period": self.period,
            "action": repr(self.action),
            "iota": self.iota,
            "nu": self.nu,
            "mean_index": repr(self.mean_index),
            "max_speed": repr(self.max_speed),
        }


def _node_states(loop):
    """Phase states (q mod 1 alignment handled later, v) at the nodes."""
    return loop.nodes.copy(), loop.v0s.copy()


def _orbit_id(loop):
    qs, vs = _node_states(loop)
    qs = np.mod(np.round(qs, 6), 1.0)
    vs = np.round(vs, 6)
    payload = json.dumps(
        {"period": loop.period, "k": loop.k, "q": qs.tolist(), "v": vs.tolist()},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def record_from_report(report, pair=None, mean_index=float("nan"), provenance=None):
    """Build an OrbitRecord from a converged CriticalPointReport."""
    loop = report.loop
    iota, nu = (pair.iota, pair.nu) if pair is not None else (report.morse_index, report.nullity)
    return OrbitRecord(
        id=_orbit_id(loop),
        period=loop.period,
        loop=loop,
        action=loop.mean_action,
        iota=int(iota),
        nu=int(nu),
        mean_index=float(mean_index),
        max_speed=loop.max_speed(),
        el_residual=float(report.el_residual),
        provenance=dict(provenance or {}),
    )


def symmetric_translation_dims(spec):
    """Lattice directions in which the system is exactly translation invariant.

    Read off the built-in potential parameters: a zero potential leaves every
    direction free; a cosine series leaves direction i free when no term's
    wave vector has a component there.  Constant fiberwise-quadratic kinetic
    parts never break translation symmetry.
    """
    pot = spec.meta.get("potential")
    n = spec.dim
    if pot is None:
        return []
    if pot.get("kind") == "zero":
        return list(range(n))
    if pot.get("kind") == "cosine-series":
        free = []
        for i in range(n):
            if all(abs(term["wave"][i]) < 1e-12 or abs(term["coeff"]) < 1e-15 for term in pot["terms"]):
                free.append(i)
        return free
    return []


def equivalent(o1, o2, tol=DEDUPE_TOL, symmetric_dims=()):
    """Geometric phase-space identity up to integer time shift and deck moves.

    True iff the periods are integer multiples and the iterate of the
    shorter, after some integer time shift and a lattice translation,
    matches the longer's node phase data in sup norm.  Directions in
    symmetric_dims carry an exact continuous translation symmetry, so the
    comparison additionally mods out a constant real offset there (members
    of one symmetry family of orbits are not counted separately).
    """
    a, b = (o1, o2) if o1.period <= o2.period else (o2, o1)
    if b.period % a.period != 0:
        return False
    m = b.period // a.period
    loop_a = iterate_loop(a.loop, m) if m > 1 else a.loop
    if loop_a.k != b.loop.k:
        loop_a, loop_b = _match_resolution(loop_a, b.loop)
    else:
        loop_b = b.loop
    qa, va = _node_states(loop_a)
    qb, vb = _node_states(loop_b)
    k = loop_b.k
    count = qb.shape[0]
    sym = list(symmetric_dims)
    for shift in range(b.period):
        roll = shift * k
        qs = np.roll(qb, -roll, axis=0)
        vs = np.roll(vb, -roll, axis=0)
        dq = minimal_lift(qs - qa)
        if sym:
            dq = dq.copy()
            dq[:, sym] = dq[:, sym] - np.mean(dq[:, sym], axis=0, keepdims=True)
        err_q = np.abs(minimal_lift(dq)).max() if count else np.inf
        err_v = np.abs(vs - va).max()
        if max(err_q, err_v) < tol:
            return True
    return False


def _match_resolution(la, lb):
    from .broken import refine

    if la.k == lb.k:
        return la, lb
    lcm = np.lcm(la.k, lb.k)
    if lcm % la.k == 0 and lcm // la.k > 1:
        la = refine(la, lcm // la.k)
    if lcm % lb.k == 0 and lcm // lb.k > 1:
        lb = refine(lb, lcm // lb.k)
    return la, lb


@dataclass
class AdmissionDecision:
    admitted: bool
    reason: str
    replaced: str = ""


class Registry:
    """Single-writer registry of geometrically distinct orbits."""

    def __init__(self, bound_a, dedupe_tol=DEDUPE_TOL, symmetric_dims=()):
        self.bound_a = float(bound_a)
        self.dedupe_tol = float(dedupe_tol)
        self.symmetric_dims = tuple(symmetric_dims)
        self.records = []

    def find_equivalent(self, record):
        for existing in self.records:
            if equivalent(existing, record, self.dedupe_tol, self.symmetric_dims):
                return existing
        return None

    def admit(self, record):
        if not np.isfinite(record.action) or record.action >= self.bound_a:
            return AdmissionDecision(False, f"action {record.action:.6g} >= bound {self.bound_a:.6g}")
        for i, existing in enumerate(self.records):
            if equivalent(existing, record, self.dedupe_tol, self.symmetric_dims):
                if record.period < existing.period:
                    self.records[i] = record
                    return AdmissionDecision(
                        True, "smaller-period representative replaces an iterate", existing.id
                    )
                return AdmissionDecision(False, f"equivalent to {existing.id}")
        self.records.append(record)
        return AdmissionDecision(True, "new orbit")

    def __len__(self):
        return len(self.records)

    # -- persistence --------------------------------------------------------

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(
                    json.dumps(
                        {
                            "schema": 1,
                            "id": rec.id,
                            "period": rec.period,
                            "action": rec.action,
                            "iota": rec.iota,
                            "nu": rec.nu,
                            "mean_index": rec.mean_index,
                            "max_speed": rec.max_speed,
                            "el_residual": rec.el_residual,
                            "provenance": rec.provenance,
                            "loop": json.loads(loop_to_json(rec.loop)),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load_jsonl(cls, path, spec, radii, bound_a, dedupe_tol=DEDUPE_TOL):
        reg = cls(bound_a, dedupe_tol)
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                if d.get("schema") != 1:
                    raise ValueError(f"unknown registry schema {d.get('schema')!r}")
                loop = loop_from_json(spec, radii, json.dumps(d["loop"]))
                rec = OrbitRecord(
                    id=d["id"],
                    period=d["period"],
                    loop=loop,
                    action=d["action"],
                    iota=d["iota"],
                    nu=d["nu"],
                    mean_index=d["mean_index"],
                    max_speed=d["max_speed"],
                    el_residual=d["el_residual"],
                    provenance=d.get("provenance", {}),
                )
                reg.records.append(rec)
        return reg

    def save_summary_csv(self, path):
        cols = ["id", "period", "action", "iota", "nu", "mean_index", "max_speed"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for rec in sorted(self.records, key=lambda r: (r.period, r.action)):
                writer.writerow(rec.summary_row())
