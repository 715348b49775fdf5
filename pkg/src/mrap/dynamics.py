"""Time-dependent Schroedinger propagation through the pulse schedule.

Units: hbar = 1 and couplings in units of their peak value, so T is measured
in inverse coupling units.  Reported times are fractional, ``t/T``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import propagate_taylor, record
from .hamiltonian import CouplingPattern, DetuningMap, PulseSchedule
from .nullspace import (
    NULL_TOL,
    NoValidTargetError,
    TransportError,
    open_paths,
    transported_states,
)
from .topology import NO_OCCLUSION, OcclusionMask, TreeGraph, root_component

#: Fewest steps accepted per unit of T * (peak coupling).
STEPS_PER_UNIT = 100
MIN_STEPS = 2000
#: Steps whose midpoint couplings are materialised at once.
CHUNK_STEPS = 1 << 18
NORM_TOL = 1e-6

#: The adiabaticity criterion counts as satisfied below this value.
METRIC_TARGET = 0.01


#: Couplings below this fraction of their peak are treated as switched off
#: when sampling the adiabaticity criterion.
EDGE_COUPLING = 0.01

#: Longest protocol the automatic T selection will hand out.
MAX_TOTAL_TIME = 1e5


class StepCountError(ValueError):
    """Too few time steps for the requested protocol length."""


class AdiabaticityError(ValueError):
    """The protocol is too fast for the adiabaticity criterion."""

    def __init__(self, metric: float, suggested_time: float, budget: float | None = None):
        self.metric = metric
        self.suggested_time = suggested_time
        msg = f"adiabaticity metric {metric:.4g} >= {METRIC_TARGET}; needs total_time >= {suggested_time:g}"
        if budget is not None:
            msg += f", above the budget of {budget:g}"
        super().__init__(msg)


@dataclass
class Trajectory:
    """Sampled evolution; ``times`` are fractional (t/T)."""

    times: np.ndarray
    states: np.ndarray
    labels: list
    total_time: float
    steps: int
    peak_populations: np.ndarray
    group_peaks: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.states) ** 2

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_populations(self) -> np.ndarray:
        return self.populations[-1]

    def population(self, label: str) -> np.ndarray:
        return self.populations[:, self.labels.index(label)]

    def peak(self, label: str) -> float:
        """Largest population of ``label`` over every integration step."""
        return float(self.peak_populations[self.labels.index(label)])

    def norm_drift(self) -> float:
        return float(np.abs(np.linalg.norm(self.states, axis=1) - 1.0).max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t/T", *self.labels])
            for t, row in zip(self.times, self.populations):
                w.writerow([f"{t:.10g}", *(f"{p:.12g}" for p in row)])


def min_steps(schedule: PulseSchedule) -> int:
    return math.ceil(STEPS_PER_UNIT * schedule.total_time * schedule.max_coupling)


def default_steps(schedule: PulseSchedule) -> int:
    return max(MIN_STEPS, min_steps(schedule))


def basis_state(tree: TreeGraph, label: str = "0_e") -> np.ndarray:
    psi = np.zeros(tree.n_nodes, dtype=complex)
    psi[tree.index_of(label)] = 1.0
    return psi


def _midpoint_couplings(schedule, steps, start=0, stop=None):
    stop = steps if stop is None else stop
    xs = (np.arange(start, stop) + 0.5) / steps
    return schedule.couplings_on_grid(xs)


def _support_of(tree, occ, psi):
    comp = root_component(tree, occ)
    outside = np.ones(tree.n_nodes, dtype=bool)
    outside[comp] = False
    if np.any(psi[outside] != 0):
        return np.arange(tree.n_nodes)
    return comp


def propagate(
    tree: TreeGraph,
    schedule: PulseSchedule,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    initial=None,
    steps: int | None = None,
    samples: int = 201,
    method: str = "taylor",
    groups: dict | None = None,
) -> Trajectory:
    """Integrate i dpsi/dt = H(t) psi from t=0 to T.

    Every step applies exp(-i H(t_mid) dt) with H frozen at the step midpoint.
    ``method="taylor"`` sums the exponential's series on the sparse tree links
    to machine precision (compiled loop).  ``method="eig"`` diagonalises a
    dense H each step and is kept as a cross-check for small trees.

    ``samples`` evenly spaced snapshots include both endpoints.  ``groups``
    maps a name to a list of node labels; the trajectory then records the
    largest total population of each group seen at any step.
    """
    occ = occ or NO_OCCLUSION
    if steps is None:
        steps = default_steps(schedule)
    steps = int(steps)
    if steps < min_steps(schedule):
        raise StepCountError(
            f"{steps} steps is below the minimum {min_steps(schedule)} "
            f"(= {STEPS_PER_UNIT} * T * peak coupling)"
        )
    if samples < 2 or steps < samples - 1:
        raise StepCountError("need samples >= 2 and steps >= samples - 1")

    psi = basis_state(tree) if initial is None else np.array(initial, dtype=complex)
    if psi.shape != (tree.n_nodes,):
        raise ValueError(f"initial state must have length {tree.n_nodes}")
    if abs(np.linalg.norm(psi) - 1.0) > NORM_TOL:
        raise ValueError("initial state is not normalized")

    pattern = CouplingPattern(tree, occ, det)
    support = _support_of(tree, occ, psi)
    local = -np.ones(tree.n_nodes, dtype=np.int64)
    local[support] = np.arange(len(support))

    def keep(rows, cols):
        ok = (local[rows] >= 0) & (local[cols] >= 0)
        return local[rows[ok]], local[cols[ok]]

    a_i, a_j = keep(pattern.a_rows, pattern.a_cols)
    b_i, b_j = keep(pattern.b_rows, pattern.b_cols)
    diag = pattern.diag[support].copy()

    names = list(groups or {})
    weights = np.zeros((len(names), len(support)))
    for g, name in enumerate(names):
        for label in groups[name]:
            k = local[tree.index_of(label)]
            if k >= 0:
                weights[g, k] = 1.0

    dt = schedule.total_time / steps
    sample_steps = np.unique(np.rint(np.linspace(0, steps, samples)).astype(np.int64))
    psi_local = psi[support].copy()

    if method == "taylor":
        bound = np.abs(diag).max(initial=0.0) + 3 * schedule.max_coupling
        substeps = max(1, math.ceil(dt * bound / 0.5))
        snaps = np.zeros((len(sample_steps), len(support)), dtype=complex)
        peaks = np.zeros(len(support))
        gpeaks = np.zeros(len(names))
        s = 0
        for start in range(0, steps, CHUNK_STEPS):
            stop = min(steps, start + CHUNK_STEPS)
            a_mid, b_mid = _midpoint_couplings(schedule, steps, start, stop)
            s = propagate_taylor(
                psi_local, a_i, a_j, b_i, b_j, diag, a_mid, b_mid, dt, substeps, start,
                sample_steps, weights, snaps, peaks, gpeaks, s,
            )
        record(psi_local, steps, sample_steps, weights, snaps, peaks, gpeaks, s)
    elif method == "eig":
        a_mid, b_mid = _midpoint_couplings(schedule, steps)
        snaps, peaks, gpeaks = _propagate_eig(
            psi_local, pattern, support, a_mid, b_mid, dt, sample_steps, weights
        )
    else:
        raise ValueError(f"unknown method {method!r}")

    states = np.zeros((len(sample_steps), tree.n_nodes), dtype=complex)
    states[:, support] = snaps
    peak_full = np.zeros(tree.n_nodes)
    peak_full[support] = peaks
    traj = Trajectory(
        times=sample_steps / steps,
        states=states,
        labels=tree.labels,
        total_time=schedule.total_time,
        steps=steps,
        peak_populations=peak_full,
        group_peaks={name: float(gpeaks[g]) for g, name in enumerate(names)},
    )
    return traj


def _propagate_eig(psi, pattern, support, a_mid, b_mid, dt, sample_steps, weights):
    sub = np.ix_(support, support)
    n = len(psi)
    snaps = np.zeros((len(sample_steps), n), dtype=complex)
    peaks = np.abs(psi) ** 2
    gpeaks = weights @ peaks
    s = 0
    if sample_steps[0] == 0:
        snaps[0] = psi
        s = 1
    for step in range(len(a_mid)):
        w, v = np.linalg.eigh(pattern.dense(a_mid[step], b_mid[step])[sub])
        psi = v @ (np.exp(-1j * w * dt) * (v.T @ psi))
        pop = np.abs(psi) ** 2
        np.maximum(peaks, pop, out=peaks)
        np.maximum(gpeaks, weights @ pop, out=gpeaks)
        while s < len(sample_steps) and sample_steps[s] == step + 1:
            snaps[s] = psi
            s += 1
    return snaps, peaks, gpeaks


def metric_samples(schedule: PulseSchedule, n: int = 401, edge: float = EDGE_COUPLING):
    """Fractional times on an ``n``-point grid where both couplings are switched on.

    A sample is kept when A and B are each at least ``edge`` times their
    peak.  At the very ends of the protocol levels peel off the E=0
    manifold as A (or B) leaves zero.  There the local criterion diverges
    like a power of 1/x while the population it could move stays bounded.
    """
    xs = np.linspace(0.0, 1.0, n)
    ab = np.array([schedule.at_fraction(x) for x in xs])
    peak = np.array([schedule.a_max or 1.0, schedule.b_max or 1.0])
    on = np.all(ab >= edge * peak, axis=1)
    return xs[on]


def adiabaticity_metric(
    tree: TreeGraph,
    schedule: PulseSchedule,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    t_samples=None,
) -> float:
    """max_t max_phi |<psi|dH/dt|phi>| / E_phi^2 over excited eigenstates phi.

    ``psi`` is the dark state the particle follows (the parallel-transported
    state from the root), so ``E_psi = 0``.  Pairs inside the E=0 manifold
    are skipped.  ``t_samples`` are fractional times; the default is
    :func:`metric_samples`.  Returns ``inf`` when no dark transport channel
    exists or the dark state cannot be followed through a level crossing.
    The value scales exactly as 1/T.
    """
    occ = occ or NO_OCCLUSION
    xs = metric_samples(schedule) if t_samples is None else np.asarray(t_samples, dtype=float)
    if not open_paths(tree, occ, det):
        return math.inf
    try:
        psis = transported_states(tree, schedule, xs, occ, det)
    except TransportError:
        return math.inf
    support = root_component(tree, occ)
    sub = np.ix_(support, support)
    pattern = CouplingPattern(tree, occ, det)
    T = schedule.total_time
    worst = 0.0
    for x, psi in zip(xs, psis):
        A, B = schedule.at_fraction(x)
        dA, dB = schedule.rates_at_fraction(x)
        H = pattern.dense(A, B)[sub]
        dH = pattern.dense(dA / T, dB / T, diag=False)[sub]
        w, v = np.linalg.eigh(H)
        excited = np.abs(w) > NULL_TOL * max(1.0, np.abs(w).max())
        if not excited.any():
            continue
        coupling = np.abs(v[:, excited].T @ (dH @ psi[support]))
        worst = max(worst, float((coupling / w[excited] ** 2).max()))
    return worst


def auto_total_time(
    tree: TreeGraph,
    schedule: PulseSchedule | None = None,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    target: float = METRIC_TARGET,
    margin: float = 1.05,
) -> tuple[float, float]:
    """Smallest whole-number T, times ``margin``, whose metric is below ``target``.

    Returns ``(T, metric_at_T)``.  Raises NoValidTargetError when no dark
    channel exists.
    """
    base = (schedule or PulseSchedule(1.0)).with_time(1.0)
    m1 = adiabaticity_metric(tree, base, occ, det)
    if not math.isfinite(m1):
        raise NoValidTargetError("the adiabaticity metric is infinite: no E=0 channel can be followed")
    T = float(math.ceil(margin * m1 / target))
    return T, m1 / T


def certify_schedule(
    tree: TreeGraph,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    schedule: PulseSchedule | None = None,
    target: float = METRIC_TARGET,
    max_total_time: float = MAX_TOTAL_TIME,
    template: PulseSchedule | None = None,
) -> tuple[PulseSchedule, float]:
    """Return a schedule meeting the adiabaticity target, and its metric.

    With ``schedule=None`` T is chosen automatically; peak couplings and
    shape then come from ``template`` (unit sinusoidal pulses by default).
    Raises AdiabaticityError, carrying the suggested T, when an explicit
    schedule is too fast or the automatic T exceeds ``max_total_time``.
    """
    if schedule is None:
        T, metric = auto_total_time(tree, template, occ, det, target)
        if T > max_total_time:
            raise AdiabaticityError(metric * T, T, max_total_time)
        return (template or PulseSchedule(1.0)).with_time(T), metric
    metric = adiabaticity_metric(tree, schedule, occ, det)
    if not metric < target:
        suggested = float(math.ceil(1.05 * metric * schedule.total_time / target))
        raise AdiabaticityError(metric, suggested)
    return schedule, metric
