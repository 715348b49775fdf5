"""Parallel interaction-free imaging of a quantum minefield.

A single particle injected at the root is carried adiabatically to the open
imaging sites.  Sites behind a bomb, and the odd-class site in front of it,
stay dark throughout.  The dynamics are deterministic, so one propagation
per scenario suffices.  Individual particles are multinomial draws from the
final receiver populations.
"""
from __future__ import annotations

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
from .nullspace import NoValidTargetError, open_paths
from .topology import (
    Address,
    OcclusionMask,
    TreeGraph,
    behind_breaks,
    compress_branches,
    format_address,
)

#: Receiver populations below this are treated as exactly zero when sampling.
SAMPLER_FLOOR = 1e-9


class AllPathsBlockedError(NoValidTargetError):
    """No imaging site is reachable: run detect_beating instead."""


@dataclass(frozen=True)
class MinefieldScenario:
    tree: TreeGraph
    bombs: OcclusionMask
    trials: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tree.imaging:
            raise ValueError("minefield imaging needs a tree with the imaging plane enabled")
        self.bombs.validate(self.tree)
        for e in self.bombs.edges:
            if e.coupling != "B":
                # a cut A link leaves the site in front of it as a dark terminal
                raise ValueError(
                    f"bombs must sit after an odd-class site (o->e or i->j links); got {e.label}"
                )
        if self.trials < 0:
            raise ValueError("trials must be non-negative")


@dataclass
class IFMResult:
    counts: dict  # receiver Address -> detections
    forbidden_peak: float
    interaction_probability: float
    reconstructed_blocked_branches: frozenset
    blocked_receivers: frozenset
    receiver_populations: dict
    total_time: float
    metric: float
    steps: int
    rng_seed: int
    trials: int

    def to_dict(self) -> dict:
        return {
            "counts": {format_address(a): int(c) for a, c in self.counts.items()},
            "receiver_populations": {
                format_address(a): float(p) for a, p in self.receiver_populations.items()
            },
            "forbidden_peak": self.forbidden_peak,
            "interaction_probability": self.interaction_probability,
            "reconstructed_blocked_branches": sorted(
                format_address(a) for a in self.reconstructed_blocked_branches
            ),
            "blocked_receivers": sorted(format_address(a) for a in self.blocked_receivers),
            "trials": self.trials,
            "provenance": {
                "rng_seed": self.rng_seed,
                "total_time": self.total_time,
                "metric": self.metric,
                "steps": self.steps,
            },
        }


def forbidden_nodes(tree: TreeGraph, bombs: OcclusionMask) -> list:
    """Every odd-class site, every imaging ``i`` site, and everything behind a bomb."""
    out = {n for n in tree.nodes if n.kind in "oi"}
    out.update(behind_breaks(tree, bombs))
    return sorted(out, key=tree.index.__getitem__)


def bomb_neighbourhood(tree: TreeGraph, bombs: OcclusionMask) -> list:
    """Sites touching a bomb plus everything behind one."""
    out = set(behind_breaks(tree, bombs))
    for e in bombs.edges:
        out.update((e.src, e.dst))
    return sorted(out, key=tree.index.__getitem__)


def consistent_blocked_branches(tree: TreeGraph, bombs: OcclusionMask) -> frozenset:
    """Branch set any observer could infer from the true mask: unreachable receivers, compressed."""
    open_ = {p[-1] for p in open_paths(tree, bombs)}
    blocked = [r.address for r in tree.receivers if r not in open_]
    return compress_branches(tree, blocked)


def random_minefield(
    tree: TreeGraph, n_bombs: int, rng: np.random.Generator, plane_only: bool = True
) -> OcclusionMask:
    """Place ``n_bombs`` distinct bombs, keeping at least one open path.

    ``plane_only`` restricts placements to the i->j imaging links.  Otherwise
    any o->e or i->j link may carry a bomb.
    """
    pool = tree.imaging_links if plane_only else [e for e in tree.edges if e.coupling == "B"]
    if not 0 <= n_bombs <= len(pool):
        raise ValueError(f"cannot place {n_bombs} bombs on {len(pool)} candidate links")
    for _ in range(1000):
        pick = rng.choice(len(pool), size=n_bombs, replace=False)
        mask = OcclusionMask(frozenset(pool[k] for k in pick))
        if open_paths(tree, mask):
            return mask
    raise ValueError("could not place bombs leaving an open path")


def _receiver_counts(tree, pops, trials, rng):
    receivers = tree.receivers
    p = np.array([pops[tree.index[r]] for r in receivers])
    p[p < SAMPLER_FLOOR] = 0.0
    draws = rng.multinomial(trials, p / p.sum()) if trials else np.zeros(len(p), int)
    return (
        {r.address: int(c) for r, c in zip(receivers, draws)},
        {r.address: float(q) for r, q in zip(receivers, p)},
    )


def run_ifm(
    scenario: MinefieldScenario,
    schedule: PulseSchedule | None = None,
    steps: int | None = None,
    metric_target: float = METRIC_TARGET,
    max_total_time: float = MAX_TOTAL_TIME,
) -> IFMResult:
    """Image the minefield: propagate once, sample detections, reconstruct the bombs.

    ``schedule=None`` picks the shortest T meeting the adiabaticity target.
    An explicit schedule failing the target raises AdiabaticityError, which
    carries the suggested T.
    """
    tree, bombs = scenario.tree, scenario.bombs
    if not open_paths(tree, bombs):
        raise AllPathsBlockedError(
            "every path to the imaging plane is blocked; use detect_beating"
        )
    schedule, metric = certify_schedule(
        tree, bombs, None, schedule, metric_target, max_total_time
    )
    groups = {
        "forbidden": [n.label for n in forbidden_nodes(tree, bombs)],
        "interaction": [n.label for n in bomb_neighbourhood(tree, bombs)],
    }
    traj = propagate(tree, schedule, bombs, steps=steps, groups=groups, samples=101)
    rng = np.random.default_rng(scenario.rng_seed)
    counts, pops = _receiver_counts(tree, traj.final_populations, scenario.trials, rng)
    unseen = [a for a, c in counts.items() if c == 0]
    return IFMResult(
        counts=counts,
        forbidden_peak=traj.group_peaks["forbidden"],
        interaction_probability=min(1.0, traj.group_peaks["interaction"]),
        reconstructed_blocked_branches=compress_branches(tree, unseen),
        blocked_receivers=frozenset(unseen),
        receiver_populations=pops,
        total_time=schedule.total_time,
        metric=metric,
        steps=traj.steps,
        rng_seed=scenario.rng_seed,
        trials=scenario.trials,
    )


@dataclass
class BeatingReport:
    times: np.ndarray
    return_probability: np.ndarray
    final_receiver_population: float
    turning_points: int
    beating: bool
    total_time: float

    def to_dict(self) -> dict:
        return {
            "final_receiver_population": self.final_receiver_population,
            "turning_points": self.turning_points,
            "beating": self.beating,
            "total_time": self.total_time,
        }


def detect_beating(
    tree: TreeGraph,
    schedule: PulseSchedule,
    occ: OcclusionMask,
    steps: int | None = None,
    samples: int = 1001,
    threshold: float = 1e-3,
) -> BeatingReport:
    """Trace the root return probability when transport has no dark channel.

    Flags beating when less than half the population reaches the receivers
    and the return probability is non-monotone (turning points larger than
    ``threshold``).
    """
    traj = propagate(tree, schedule, occ, steps=steps, samples=samples)
    ret = traj.population(tree.root.label)
    final = float(sum(traj.final_populations[tree.index[r]] for r in tree.receivers))
    turns = _turning_points(ret, threshold)
    return BeatingReport(
        times=traj.times,
        return_probability=ret,
        final_receiver_population=final,
        turning_points=turns,
        beating=bool(final < 0.5 and turns > 0),
        total_time=schedule.total_time,
    )


def _turning_points(y, threshold):
    """Count direction reversals whose swing exceeds ``threshold``."""
    turns, direction, anchor = 0, 0, y[0]
    for v in y[1:]:
        if direction >= 0 and v < anchor - threshold:
            turns += direction > 0
            direction, anchor = -1, v
        elif direction <= 0 and v > anchor + threshold:
            turns += direction < 0
            direction, anchor = 1, v
        elif (direction > 0 and v > anchor) or (direction < 0 and v < anchor):
            anchor = v
    return turns
