"""Collision-free routing: receivers opt out by detuning their own branch.

An inactive receiver detunes the last even-class site of its branch (the
leaf ``e`` site) and its own receiver site.  Every dark state ending behind
the leaf then leaves the null space, so adiabatic transport delivers nothing
there.  The sender keeps
transmitting and never learns who is listening.  Each round uses a fixed
detuning pattern, propagated once.  Its particles are multinomial draws from
the final receiver populations.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    MAX_TOTAL_TIME,
    METRIC_TARGET,
    AdiabaticityError,
    certify_schedule,
    propagate,
)
from .hamiltonian import PulseSchedule
from .ifm import SAMPLER_FLOOR
from .nullspace import transported_states
from .topology import Address, NodeId, TreeGraph, format_address, parse_address

log = logging.getLogger(__name__)

DEFAULT_DELTA = 0.5
#: Extra shift of an inactive receiver site, in units of the peak coupling.
RECEIVER_OFFSET = 1.0


def _addresses(items) -> frozenset:
    return frozenset(parse_address(a) if isinstance(a, str) else tuple(a) for a in items)


@dataclass(frozen=True)
class RoutingRound:
    active_leaves: frozenset
    inactive_delta: float = DEFAULT_DELTA
    particles: int = 1000

    def __post_init__(self):
        object.__setattr__(
            self,
            "active_leaves",
            _addresses(self.active_leaves),
        )
        if self.inactive_delta == 0:
            raise ValueError("inactive_delta must be nonzero")
        if self.particles < 0:
            raise ValueError("particles must be non-negative")


@dataclass
class RoutingReport:
    rounds: list = field(default_factory=list)
    collision_count: int = 0
    skipped: list = field(default_factory=list)
    refused: list = field(default_factory=list)

    @property
    def delivered(self) -> dict:
        total: dict = {}
        for r in self.rounds:
            for a, c in r["counts"].items():
                total[a] = total.get(a, 0) + c
        return total

    def to_dict(self) -> dict:
        return {
            "collision_count": self.collision_count,
            "skipped_rounds": self.skipped,
            "refused_rounds": self.refused,
            "rounds": [
                {
                    "index": r["index"],
                    "active": sorted(format_address(a) for a in r["active"]),
                    "inactive_delta": r["inactive_delta"],
                    "particles": r["particles"],
                    "counts": {format_address(a): int(c) for a, c in r["counts"].items()},
                    "populations": {
                        format_address(a): float(p) for a, p in r["populations"].items()
                    },
                    "collisions": r["collisions"],
                    "total_time": r["total_time"],
                    "metric": r["metric"],
                }
                for r in self.rounds
            ],
        }

    def to_csv(self, path) -> None:
        """Tally table: one row per (round, receiver)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "receiver", "active", "count", "population"])
            for r in self.rounds:
                for a, c in r["counts"].items():
                    w.writerow([
                        r["index"], format_address(a), int(a in r["active"]), c,
                        f"{r['populations'][a]:.12g}",
                    ])


def routing_detunings(
    tree: TreeGraph, active, delta: float, receiver_offset: float = RECEIVER_OFFSET
) -> dict:
    """On-site shifts applied by every receiver not in ``active``.

    An inactive receiver shifts its leaf ``e`` site by ``s*delta`` and, on an
    imaging tree, its own ``j`` site by ``s*(delta + receiver_offset)``.  The
    sign ``s`` is the last digit of its address, so siblings shift in
    opposite directions.  Equal shifts on both leaves below one odd site leave
    a near-degenerate pair that needs a far slower protocol once both opt
    out.  Moving the receiver level past the end-of-pulse dimer levels (at
    most the peak coupling in magnitude) keeps any residual excitation off
    the inactive receivers.
    """
    active = _addresses(active)
    known = {r.address for r in tree.receivers}
    unknown = active - known
    if unknown:
        raise KeyError(f"not receivers of this tree: {sorted(map(format_address, unknown))}")
    out = {}
    for leaf in tree.leaves:
        if leaf.address in active:
            continue
        sign = leaf.address[-1]
        out[leaf] = float(delta) * sign
        if tree.imaging:
            out[NodeId(leaf.address, "j")] = (float(delta) + receiver_offset) * sign
    return out


def run_routing(
    tree: TreeGraph,
    rounds,
    schedule: PulseSchedule | None = None,
    steps: int | None = None,
    rng_seed: int = 0,
    metric_target: float = METRIC_TARGET,
    max_total_time: float = MAX_TOTAL_TIME,
    workers: int = 1,
) -> RoutingReport:
    """Send each round's particles and tally deliveries per receiver.

    Rounds with no active receiver are skipped and listed in the report.
    Rounds whose pattern cannot be certified adiabatic within
    ``max_total_time`` (or by the given ``schedule``) are refused and listed
    with the T they would need.  Identical rounds share one propagation, and
    distinct patterns are solved on ``workers`` threads.  Each round draws from its own
    child of ``SeedSequence(rng_seed)``, so results do not depend on
    evaluation order.
    """
    rounds = list(rounds)
    seeds = np.random.SeedSequence(rng_seed).spawn(len(rounds))

    def solve(key):
        active, delta = key
        det = routing_detunings(tree, active, delta)
        try:
            sched, metric = certify_schedule(
                tree, None, det, schedule, metric_target, max_total_time
            )
        except AdiabaticityError as err:
            return err
        traj = propagate(tree, sched, det=det, steps=steps, samples=2)
        return traj.final_populations, sched.total_time, metric

    keys = list(dict.fromkeys(
        (r.active_leaves, r.inactive_delta) for r in rounds if r.active_leaves
    ))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            cache = dict(zip(keys, pool.map(solve, keys)))
    else:
        cache = {key: solve(key) for key in keys}

    report = RoutingReport()
    receivers = tree.receivers
    for k, (rnd, seed) in enumerate(zip(rounds, seeds)):
        if not rnd.active_leaves:
            log.warning("round %d has no active receivers; skipped", k)
            report.skipped.append(k)
            continue
        outcome = cache[(rnd.active_leaves, rnd.inactive_delta)]
        if isinstance(outcome, AdiabaticityError):
            log.warning("round %d refused: %s", k, outcome)
            report.refused.append({"index": k, "suggested_time": outcome.suggested_time})
            continue
        pops, T, metric = outcome
        p = np.array([pops[tree.index[r]] for r in receivers])
        p[p < SAMPLER_FLOOR] = 0.0
        draws = np.random.default_rng(seed).multinomial(rnd.particles, p / p.sum())
        counts = {r.address: int(c) for r, c in zip(receivers, draws)}
        collisions = sum(c for a, c in counts.items() if a not in rnd.active_leaves)
        report.collision_count += collisions
        report.rounds.append({
            "index": k,
            "active": rnd.active_leaves,
            "inactive_delta": rnd.inactive_delta,
            "particles": rnd.particles,
            "counts": counts,
            "populations": {r.address: float(q) for r, q in zip(receivers, p)},
            "collisions": collisions,
            "total_time": T,
            "metric": metric,
        })
    return report


def predicted_fractions(tree: TreeGraph, active, delta: float = DEFAULT_DELTA,
                        schedule: PulseSchedule | None = None) -> dict:
    """Adiabatic-limit delivery fractions for an active set.

    Equal to 1/len(active) only when the active receivers are equivalent
    under the tree's symmetries.
    """
    det = routing_detunings(tree, active, delta)
    psi = transported_states(tree, schedule or PulseSchedule(1.0), [1.0], det=det)[0]
    return {r.address: float(psi[tree.index[r]] ** 2) for r in tree.receivers}


def delta_sensitivity(
    tree: TreeGraph,
    active,
    deltas,
    schedule: PulseSchedule | None = None,
    steps: int | None = None,
    metric_target: float = METRIC_TARGET,
    max_total_time: float = MAX_TOTAL_TIME,
) -> list[dict]:
    """Leakage into detuned receivers and the required T across detunings.

    Raises AdiabaticityError when some detuning needs more than
    ``max_total_time``.
    """
    inactive_free = _addresses(active)
    rows = []
    for delta in deltas:
        det = routing_detunings(tree, active, delta)
        sched, metric = certify_schedule(tree, None, det, schedule, metric_target, max_total_time)
        traj = propagate(tree, sched, det=det, steps=steps, samples=2)
        leak = sum(
            traj.final_populations[tree.index[r]]
            for r in tree.receivers if r.address not in inactive_free
        )
        rows.append({
            "delta": float(delta),
            "total_time": sched.total_time,
            "metric": metric,
            "inactive_population": float(leak),
        })
    return rows
