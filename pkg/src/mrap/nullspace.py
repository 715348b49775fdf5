"""Dark (E=0) states of the MRAP coupling matrix.

The analytic construction builds one null vector per open terminal site by
walking the root-to-terminal path: the k-th even site on a path of length L
carries ``(-1)^k A^k B^(L-k)`` and every odd site carries zero.  A numeric
eigensolve of the same matrix serves as the independent check.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .hamiltonian import (
    CouplingPattern,
    DetuningMap,
    PulseSchedule,
    check_detunings,
    to_dense,
)
from .topology import NO_OCCLUSION, NodeId, OcclusionMask, TreeGraph, root_component

#: Relative threshold separating zero eigenvalues from the rest.
NULL_TOL = 1e-9


class DegenerateCouplingError(ValueError):
    """Both couplings vanish, so every state is null and no basis is singled out."""


class NoValidTargetError(ValueError):
    """Every root-to-terminal path is broken; there is no E=0 transport channel."""


class TransportError(RuntimeError):
    """The dark state could not be followed, typically because a level crosses E=0."""


@dataclass(frozen=True)
class NullVector:
    leaf: NodeId
    path: tuple
    amplitudes: np.ndarray


def open_paths(
    tree: TreeGraph,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
) -> list[tuple]:
    """Root-to-terminal paths (even-class sites only) that carry a dark state.

    A terminal is an ``e`` or ``j`` site with no unbroken link onward to an
    odd-class site.  That is a leaf, or an ``e`` site whose outgoing A link
    is cut.  An odd site whose onward links are all cut pins its parent to
    zero amplitude, so that branch yields nothing.  A detuned even site does
    the same for every path through it.
    """
    occ = occ or NO_OCCLUSION
    det = check_detunings(tree, det)
    blocked = {n for n, v in det.items() if v != 0.0 and n.kind in "ej"}
    paths = []

    def walk(node, path):
        if node in blocked:
            return
        onward = [e for e in tree.out_edges(node) if e not in occ.edges]
        if not onward:
            paths.append(tuple(path))
            return
        (odd_edge,) = onward
        for e in tree.out_edges(odd_edge.dst):
            if e not in occ.edges:
                walk(e.dst, path + [e.dst])

    walk(tree.root, [tree.root])
    return paths


def _path_vector(tree, path, A, B):
    L = len(path) - 1
    v = np.zeros(tree.n_nodes)
    for k, node in enumerate(path):
        v[tree.index[node]] = (-1) ** k * A**k * B ** (L - k)
    return v / np.linalg.norm(v)


def analytic_null_basis(
    tree: TreeGraph,
    A: float,
    B: float,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
) -> list[NullVector]:
    """One normalized dark state per open terminal, in basis order of the terminals.

    At ``A = 0`` every vector collapses to the root state; the list is then
    linearly dependent by construction, not an error.
    """
    if A < 0 or B < 0:
        raise ValueError("couplings must be non-negative")
    if A == 0 and B == 0:
        raise DegenerateCouplingError("A = B = 0: the null space is the whole space")
    det = check_detunings(tree, det)
    for node, value in det.items():
        if value != 0.0 and node.kind == "e" and tree.out_edges(node):
            # the remaining null space then also holds sibling differences below node
            raise ValueError(
                f"analytic basis supports detuning on terminal or odd sites only, not {node}"
            )
    paths = open_paths(tree, occ, det)
    paths.sort(key=lambda p: tree.index[p[-1]])
    return [NullVector(p[-1], p, _path_vector(tree, p, A, B)) for p in paths]


def numeric_null_basis(M, tol: float | None = None, support=None) -> np.ndarray:
    """Orthonormal columns spanning the eigenvectors with ``|eigenvalue| < tol``.

    ``support`` restricts the eigensolve to a block of basis indices (for
    example the root component); the result is embedded back into the full
    space.  The default tolerance is ``NULL_TOL * max|entry|``.
    """
    M = to_dense(M)
    n = M.shape[0]
    idx = np.arange(n) if support is None else np.asarray(support)
    block = M[np.ix_(idx, idx)]
    scale = np.abs(block).max() if block.size else 0.0
    if tol is None:
        tol = NULL_TOL * scale
    if scale == 0.0:
        basis = np.zeros((n, len(idx)))
        basis[idx, np.arange(len(idx))] = 1.0
        return basis
    w, v = np.linalg.eigh(block)
    keep = np.abs(w) < tol
    basis = np.zeros((n, int(keep.sum())), dtype=v.dtype)
    basis[idx] = v[:, keep]
    return basis


def principal_angles(U, V) -> np.ndarray:
    """Principal angles (radians) between column spaces; needs equal dimensions."""
    U = np.asarray(U)
    V = np.asarray(V)
    if U.shape[1] != V.shape[1]:
        raise ValueError(f"subspace dimensions differ: {U.shape[1]} vs {V.shape[1]}")
    if U.shape[1] == 0:
        return np.zeros(0)
    return sla.subspace_angles(U, V)


def target_state(
    tree: TreeGraph,
    A: float,
    B: float,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
) -> np.ndarray:
    """Normalized sum of the analytic dark states over open terminals.

    At B = 0 this is the equal superposition of the open terminals.  It is the
    adiabatic endpoint whenever the open terminals are related by symmetries
    of the masked tree.  Otherwise use :func:`transported_states`.
    """
    basis = analytic_null_basis(tree, A, B, occ, det)
    if not basis:
        raise NoValidTargetError(
            "all root-to-leaf paths are broken; see ifm.detect_beating"
        )
    v = np.sum([nv.amplitudes for nv in basis], axis=0)
    return v / np.linalg.norm(v)


def transported_states(
    tree: TreeGraph,
    schedule: PulseSchedule,
    xs,
    occ: OcclusionMask = NO_OCCLUSION,
    det: DetuningMap | None = None,
    rtol: float = 1e-10,
) -> np.ndarray:
    """Adiabatic-limit state at fractional times ``xs``, starting from the root.

    Integrates parallel transport inside the instantaneous null space,
    ``dpsi/dx = -H^+ (dH/dx) psi`` with ``H^+`` the pseudo-inverse, on the root
    component.  The result is independent of T.  Returns real vectors with
    shape ``(len(xs), n_nodes)``.
    """
    occ = occ or NO_OCCLUSION
    if not open_paths(tree, occ, det):
        raise NoValidTargetError(
            "all root-to-leaf paths are broken; see ifm.detect_beating"
        )
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    support = root_component(tree, occ)
    pattern = CouplingPattern(tree, occ, det)
    sub = np.ix_(support, support)

    def rhs(x, psi):
        A, B = schedule.at_fraction(x)
        dA, dB = schedule.rates_at_fraction(x)
        H = pattern.dense(A, B)[sub]
        dH = pattern.dense(dA, dB, diag=False)[sub]
        w, v = np.linalg.eigh(H)
        keep = np.abs(w) > NULL_TOL * max(1.0, np.abs(w).max())
        vk = v[:, keep]
        return -(vk @ ((vk.T @ (dH @ psi)) / w[keep]))

    psi0 = np.zeros(len(support))
    psi0[0] = 1.0  # the root is always index 0 of its own component
    if xs.size and (xs.min() < 0.0 or xs.max() > 1.0):
        raise ValueError("fractional times must lie in [0, 1]")
    block = np.tile(psi0, (len(xs), 1))
    later = np.flatnonzero(xs > 0.0)
    if later.size:
        order = later[np.argsort(xs[later])]
        try:
            sol = solve_ivp(
                rhs,
                (0.0, float(xs[order[-1]])),
                psi0,
                method="DOP853",
                t_eval=xs[order],
                rtol=rtol,
                atol=rtol * 1e-3,
            )
        except np.linalg.LinAlgError as err:
            raise TransportError(f"parallel transport diverged: {err}") from err
        if not sol.success or not np.all(np.isfinite(sol.y)):
            raise TransportError(f"parallel transport failed: {sol.message}")
        block[order] = sol.y.T / np.linalg.norm(sol.y.T, axis=1, keepdims=True)
    out = np.zeros((len(xs), tree.n_nodes))
    out[:, support] = block
    return out


def write_null_basis_csv(path, basis, labels) -> None:
    """One row per vector, one column per basis index.

    ``basis`` is a list of NullVector or an array with vectors as columns.
    """
    if isinstance(basis, np.ndarray):
        rows = [("", basis[:, k]) for k in range(basis.shape[1])]
    else:
        rows = [(nv.leaf.label, nv.amplitudes) for nv in basis]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["terminal", *labels])
        for name, vec in rows:
            w.writerow([name, *(f"{x:.17g}" for x in np.real(vec))])
