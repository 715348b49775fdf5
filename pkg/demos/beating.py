"""What happens when every imaging link is blocked.

With no path left there is no dark state to follow.  The particle never
reaches a receiver and sloshes back and forth near the root instead.
"""
import numpy as np

from mrap import OcclusionMask, PulseSchedule, build_tree, detect_beating

tree = build_tree(2, imaging=True)
everything = OcclusionMask(frozenset(tree.imaging_links))
rep = detect_beating(tree, PulseSchedule(100.0), everything)
print(f"receiver population at the end: {rep.final_receiver_population:.2e}")
print(f"turning points in the root population: {rep.turning_points}, beating: {rep.beating}")
for x in np.linspace(0, 1, 11):
    k = int(np.argmin(np.abs(rep.times - x)))
    print(f"t/T = {rep.times[k]:.1f}  root population {rep.return_probability[k]:.3f}")
