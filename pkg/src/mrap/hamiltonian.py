"""Pulse schedules and assembly of the time-dependent coupling matrix."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .topology import NO_OCCLUSION, NodeId, OcclusionMask, TreeGraph

#: Trees deeper than this get a CSR matrix from ``assemble(fmt="auto")``.
SPARSE_DEPTH = 5

#: Relative step (in units of T) for the finite-difference fallback of dH/dt.
FD_STEP = 1e-6

DetuningMap = Mapping  # NodeId -> float


class PulseRangeError(ValueError):
    """Time requested outside the protocol window [0, T]."""


@dataclass(frozen=True)
class PulseShape:
    """Coupling profiles on fractional time ``x = t/T`` in [0, 1].

    ``profile(x)`` returns the unit-amplitude (a, b) pair.  ``derivative(x)``
    returns (da/dx, db/dx) or is None, in which case dH/dt is taken by
    central differences.  ``grid``, if given, evaluates the profile on an
    array of fractional times in one call.
    """

    profile: Callable[[float], tuple]
    derivative: Callable[[float], tuple] | None = None
    grid: Callable[[np.ndarray], tuple] | None = None


def _sin2_profile(x):
    s = math.sin(0.5 * math.pi * x)
    c = math.cos(0.5 * math.pi * x)
    return s * s, c * c


def _sin2_grid(xs):
    s = np.sin(0.5 * np.pi * xs)
    c = np.cos(0.5 * np.pi * xs)
    return s * s, c * c


def _sin2_derivative(x):
    r = 0.5 * math.pi * math.sin(math.pi * x)
    return r, -r


PULSE_SHAPES: dict[str, PulseShape] = {
    "sinusoidal": PulseShape(_sin2_profile, _sin2_derivative, _sin2_grid),
}


def register_pulse_shape(name: str, profile, derivative=None, grid=None) -> None:
    """Add a counter-intuitive pulse shape (a rising from 0, b falling to 0)."""
    a0, b0 = profile(0.0)
    a1, b1 = profile(1.0)
    if not (abs(a0) < 1e-12 and abs(b1) < 1e-12):
        raise ValueError("pulse shapes must start with A=0 and end with B=0")
    PULSE_SHAPES[name] = PulseShape(profile, derivative, grid)


@dataclass(frozen=True)
class PulseSchedule:
    """Total protocol time and peak couplings of the A and B links."""

    total_time: float
    a_max: float = 1.0
    b_max: float = 1.0
    shape: str = "sinusoidal"

    def __post_init__(self):
        if not self.total_time > 0:
            raise ValueError(f"total_time must be positive, got {self.total_time!r}")
        if self.a_max < 0 or self.b_max < 0:
            raise ValueError("coupling amplitudes must be non-negative")
        if self.shape not in PULSE_SHAPES:
            raise ValueError(
                f"unknown pulse shape {self.shape!r}; known: {sorted(PULSE_SHAPES)}"
            )

    @property
    def max_coupling(self) -> float:
        return max(self.a_max, self.b_max)

    @property
    def has_analytic_derivative(self) -> bool:
        return PULSE_SHAPES[self.shape].derivative is not None

    def with_time(self, total_time: float) -> "PulseSchedule":
        return PulseSchedule(total_time, self.a_max, self.b_max, self.shape)

    def at_fraction(self, x: float) -> tuple[float, float]:
        a, b = PULSE_SHAPES[self.shape].profile(x)
        return self.a_max * a, self.b_max * b

    def couplings_on_grid(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) arrays at every fractional time in ``xs``."""
        xs = np.asarray(xs, dtype=float)
        shape = PULSE_SHAPES[self.shape]
        if shape.grid is not None:
            a, b = shape.grid(xs)
        else:
            a, b = np.empty_like(xs), np.empty_like(xs)
            for k, x in enumerate(xs):
                a[k], b[k] = shape.profile(x)
        return self.a_max * a, self.b_max * b

    def rates_at_fraction(self, x: float) -> tuple[float, float]:
        """(dA/dx, dB/dx) on fractional time; divide by T for time derivatives."""
        shape = PULSE_SHAPES[self.shape]
        if shape.derivative is not None:
            da, db = shape.derivative(x)
        else:
            h = FD_STEP
            lo, hi = max(0.0, x - h), min(1.0, x + h)
            a_lo, b_lo = shape.profile(lo)
            a_hi, b_hi = shape.profile(hi)
            da, db = (a_hi - a_lo) / (hi - lo), (b_hi - b_lo) / (hi - lo)
        return self.a_max * da, self.b_max * db


def _fraction(t: float, schedule: PulseSchedule) -> float:
    T = schedule.total_time
    slack = 1e-12 * T
    if not (-slack <= t <= T + slack):
        raise PulseRangeError(f"t={t!r} lies outside the protocol window [0, {T}]")
    return min(max(t / T, 0.0), 1.0)


def pulse(t: float, schedule: PulseSchedule) -> tuple[float, float]:
    """Couplings (A, B) at time ``t``; sinusoidal: A_max sin^2(pi t/2T), B_max cos^2."""
    return schedule.at_fraction(_fraction(t, schedule))


def pulse_rates(t: float, schedule: PulseSchedule) -> tuple[float, float]:
    """Time derivatives (dA/dt, dB/dt) at ``t``."""
    da, db = schedule.rates_at_fraction(_fraction(t, schedule))
    T = schedule.total_time
    return da / T, db / T


def check_detunings(tree: TreeGraph, det: DetuningMap | None) -> dict:
    out = {}
    for node, value in dict(det or {}).items():
        if isinstance(node, str):
            node = NodeId.parse(node)
        if node not in tree.index:
            raise KeyError(f"detuned node {node} is not in this tree")
        out[node] = float(value)
    return out


class CouplingPattern:
    """Index arrays for the A links, B links and detuned diagonal of a tree.

    Building this once and calling :meth:`dense` or :meth:`sparse` per time
    step avoids walking the tree again.
    """

    def __init__(
        self,
        tree: TreeGraph,
        occ: OcclusionMask = NO_OCCLUSION,
        det: DetuningMap | None = None,
    ):
        occ = occ or NO_OCCLUSION
        occ.validate(tree)
        det = check_detunings(tree, det)
        self.tree = tree
        self.n = tree.n_nodes
        a_rows, a_cols, b_rows, b_cols = [], [], [], []
        for e in tree.edges:
            if e in occ.edges:
                continue
            i, j = tree.index[e.src], tree.index[e.dst]
            if e.coupling == "A":
                a_rows.append(i)
                a_cols.append(j)
            else:
                b_rows.append(i)
                b_cols.append(j)
        self.a_rows = np.array(a_rows, dtype=np.int64)
        self.a_cols = np.array(a_cols, dtype=np.int64)
        self.b_rows = np.array(b_rows, dtype=np.int64)
        self.b_cols = np.array(b_cols, dtype=np.int64)
        self.diag = np.zeros(self.n)
        for node, value in det.items():
            self.diag[tree.index[node]] = value

    def dense(self, A: float, B: float, diag: bool = True) -> np.ndarray:
        H = np.zeros((self.n, self.n))
        H[self.a_rows, self.a_cols] = A
        H[self.a_cols, self.a_rows] = A
        H[self.b_rows, self.b_cols] = B
        H[self.b_cols, self.b_rows] = B
        if diag:
            H[np.diag_indices(self.n)] = self.diag
        return H

    def sparse(self, A: float, B: float, diag: bool = True) -> sp.csr_matrix:
        rows = np.concatenate([self.a_rows, self.a_cols, self.b_rows, self.b_cols])
        cols = np.concatenate([self.a_cols, self.a_rows, self.b_cols, self.b_rows])
        vals = np.concatenate([
            np.full(2 * len(self.a_rows), float(A)),
            np.full(2 * len(self.b_rows), float(B)),
        ])
        if diag:
            nz = np.flatnonzero(self.diag)
            rows = np.concatenate([rows, nz])
            cols = np.concatenate([cols, nz])
            vals = np.concatenate([vals, self.diag[nz]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def matrix(self, A: float, B: float, fmt: str = "auto", diag: bool = True):
        if fmt == "auto":
            fmt = "sparse" if self.tree.depth > SPARSE_DEPTH else "dense"
        if fmt == "dense":
            return self.dense(A, B, diag)
        if fmt == "sparse":
            return self.sparse(A, B, diag)
        raise ValueError(f"fmt must be 'auto', 'dense' or 'sparse', got {fmt!r}")


def assemble(
    tree: TreeGraph,
    A: float,
    B: float,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    fmt: str = "auto",
):
    """Coupling matrix with A/B on unbroken links and detunings on the diagonal.

    Returns a dense ndarray for shallow trees and a CSR matrix past
    ``SPARSE_DEPTH`` unless ``fmt`` forces one or the other.
    """
    return CouplingPattern(tree, occ, det).matrix(A, B, fmt)


def hamiltonian_at(
    tree: TreeGraph,
    t: float,
    schedule: PulseSchedule,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    fmt: str = "auto",
):
    A, B = pulse(t, schedule)
    return assemble(tree, A, B, occ, det, fmt)


def d_assemble_dt(
    tree: TreeGraph,
    t: float,
    schedule: PulseSchedule,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    fmt: str = "auto",
):
    """Time derivative of the coupling matrix at ``t``.

    Detunings are static, so only the link entries change.  Shapes without an
    analytic derivative use a central difference of step ``FD_STEP * T``.
    """
    pattern = CouplingPattern(tree, occ, det)
    dA, dB = pulse_rates(t, schedule)
    return pattern.matrix(dA, dB, fmt, diag=False)


def to_dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def write_coo(path, M) -> None:
    """Dump the nonzero entries as ``row col value`` lines (0-based indices)."""
    coo = sp.coo_matrix(M)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write("# row col value\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")


def write_dense_csv(path, M, labels=None) -> None:
    M = to_dense(M)
    if M.shape[0] > 32:
        raise ValueError("dense CSV dumps are limited to 32x32 matrices")
    with open(path, "w") as fh:
        if labels is not None:
            fh.write("," + ",".join(labels) + "\n")
        for i, row in enumerate(M):
            prefix = f"{labels[i]}," if labels is not None else ""
            fh.write(prefix + ",".join(f"{v:.17g}" for v in row) + "\n")
