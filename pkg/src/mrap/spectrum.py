"""Instantaneous spectra and the minimum gap above the E=0 manifold."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .hamiltonian import CouplingPattern, DetuningMap, PulseSchedule
from .nullspace import NULL_TOL
from .topology import NO_OCCLUSION, OcclusionMask, TreeGraph, build_tree, root_component

GAP_GRID = 201
GAP_XTOL = 1e-6


@dataclass
class SpectrumReport:
    t_samples: np.ndarray
    eigenvalues: np.ndarray  # (samples, n) ascending
    zero_multiplicity: np.ndarray
    min_gap: float
    min_gap_t: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t/T", *(f"E{k + 1}" for k in range(self.eigenvalues.shape[1]))])
            for x, row in zip(self.t_samples, self.eigenvalues):
                w.writerow([f"{x:.10g}", *(f"{e:.15g}" for e in row)])


class _Spectra:
    """Eigenvalues of the root block at any fractional time."""

    def __init__(self, tree, schedule, occ, det, restrict_to_root):
        self.schedule = schedule
        self.pattern = CouplingPattern(tree, occ, det)
        idx = root_component(tree, occ) if restrict_to_root else np.arange(tree.n_nodes)
        self.sub = np.ix_(idx, idx)

    def eigenvalues(self, x: float) -> np.ndarray:
        A, B = self.schedule.at_fraction(x)
        H = self.pattern.dense(A, B)[self.sub]
        return sla.eigvalsh(H, check_finite=False)

    def zero_mask(self, w):
        return np.abs(w) < NULL_TOL * max(1.0, np.abs(w).max())

    def gap(self, x: float) -> float:
        w = self.eigenvalues(x)
        nz = np.abs(w[~self.zero_mask(w)])
        return float(nz.min()) if nz.size else np.inf


def spectrum_scan(
    tree: TreeGraph,
    schedule: PulseSchedule,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    n_samples: int = GAP_GRID,
    restrict_to_root: bool = True,
    refine: bool = True,
) -> SpectrumReport:
    """Eigenvalues at ``n_samples`` evenly spaced t/T, endpoints included.

    With ``restrict_to_root`` (the default) only the block connected to the
    root is diagonalised.  Sites cut off by occlusions never receive
    population, and an isolated site would add a spurious zero.  ``min_gap``
    is the smallest nonzero |eigenvalue|.  The grid minimum is polished by a
    golden-section search to ``GAP_XTOL`` in t/T.
    """
    if n_samples < 3:
        raise ValueError("n_samples must be at least 3")
    occ = occ or NO_OCCLUSION
    sp_ = _Spectra(tree, schedule, occ, det, restrict_to_root)
    xs = np.linspace(0.0, 1.0, n_samples)
    eig = np.array([sp_.eigenvalues(x) for x in xs])
    zero = np.array([sp_.zero_mask(w).sum() for w in eig])
    gaps = np.array([
        np.abs(w[~sp_.zero_mask(w)]).min() if (~sp_.zero_mask(w)).any() else np.inf
        for w in eig
    ])
    k = int(np.argmin(gaps))
    best_x, best = float(xs[k]), float(gaps[k])
    if refine and 0 < k < n_samples - 1 and np.isfinite(best):
        res = minimize_scalar(
            sp_.gap, bracket=(xs[k - 1], xs[k], xs[k + 1]), method="golden",
            options={"xtol": GAP_XTOL},
        )
        if res.fun < best and xs[k - 1] <= res.x <= xs[k + 1]:
            best_x, best = float(res.x), float(res.fun)
    return SpectrumReport(xs, eig, zero, best, best_x)


def min_gap(tree, schedule=None, occ=NO_OCCLUSION, det=None, n_samples=GAP_GRID):
    return spectrum_scan(tree, schedule or PulseSchedule(1.0), occ, det, n_samples).min_gap


def gap_vs_depth(
    depths,
    schedule: PulseSchedule | None = None,
    n_samples: int = GAP_GRID,
    imaging: bool = True,
    workers: int = 1,
) -> list[tuple[int, float]]:
    """Minimum gap of the unoccluded tree for each depth.

    The gap does not depend on T, only on the peak couplings and pulse shape.
    ``workers`` > 1 scans depths concurrently (the eigensolver releases the GIL).
    """
    schedule = schedule or PulseSchedule(1.0)

    def one(d):
        tree = build_tree(d, imaging)
        return int(d), spectrum_scan(tree, schedule, n_samples=n_samples).min_gap

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, depths))
    return [one(d) for d in depths]


def write_gap_table(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth", "min_gap"])
        for d, g in rows:
            w.writerow([d, f"{g:.15g}"])
