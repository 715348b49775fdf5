"""Collision-free delivery to whichever receivers are listening.

Between particles each receiver decides whether to listen.  Those that do
not shift their own two sites off resonance.  The sender keeps sending the
same pulse and never learns who is listening, yet nothing reaches a detuned
receiver.
"""
from mrap import RoutingRound, build_tree, run_routing
from mrap.routing import delta_sensitivity, predicted_fractions
from mrap.topology import format_address

tree = build_tree(2, imaging=True)
rounds = [
    RoutingRound(["11", "T1"], 0.5, 2000),
    RoutingRound(["11", "1T", "T1"], 0.5, 2000),
    RoutingRound(["TT"], 1.0, 2000),
    RoutingRound([], 0.5, 2000),
]
report = run_routing(tree, rounds, rng_seed=12)
for r in report.rounds:
    counts = {format_address(a): c for a, c in r["counts"].items()}
    print(f"round {r['index']}: T = {r['total_time']:g}, counts {counts}")
print("skipped rounds:", report.skipped, " collisions:", report.collision_count)

# three listeners do not share equally; the split follows the tree's shape
share = predicted_fractions(tree, ["11", "1T", "T1"])
print("adiabatic shares:", {format_address(a): round(p, 4) for a, p in share.items()})

for row in delta_sensitivity(tree, ["11", "T1"], [0.2, 0.5, 1.0, 2.0]):
    print(f"delta {row['delta']:.1f}: T = {row['total_time']:g}, "
          f"population on detuned receivers {row['inactive_population']:.1e}")
