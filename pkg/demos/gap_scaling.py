"""How the gap protecting the dark state shrinks as the tree deepens.

Slower protocols are needed for deeper trees because the smallest nonzero
level sits closer to E=0.  The scan is cheap up to depth 6; depth 8
(1278 sites) takes under a minute.
"""
import sys

from mrap import build_tree, gap_vs_depth, spectrum_scan
from mrap.hamiltonian import PulseSchedule

max_depth = int(sys.argv[1]) if len(sys.argv) > 1 else 6

rep = spectrum_scan(build_tree(2, imaging=True), PulseSchedule(1.0))
print(f"depth 2: smallest gap {rep.min_gap:.6f} at t/T = {rep.min_gap_t:.3f}")
print("levels at t = 0:", sorted(set(round(float(e), 6) + 0.0 for e in rep.eigenvalues[0])))

for depth, gap in gap_vs_depth(range(1, max_depth + 1)):
    n = build_tree(depth, imaging=True).n_nodes
    print(f"depth {depth} ({n:4d} sites): min gap {gap:.6f}")
