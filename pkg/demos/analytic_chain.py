"""Closed-form view of the chain: per-node throughput as the interferer's slot probability grows."""

import numpy as np

from ghostsim.analytic_dos import fig1_chain, solve_fixed_point, sweep_attack_rate

grid = np.round(np.linspace(0, 0.2, 11), 2)
for case, over in ((1, "nodes 2 and 3"), (2, "node 3")):
    sweep = sweep_attack_rate(fig1_chain(case), grid)
    S = np.array([[sweep.throughput[p][n] for n in range(1, 6)] for p in sweep.grid])
    print(f"case {case}: interferer over {over}")
    print("  p_att   " + "  ".join(f"S{n:<6}" for n in range(1, 6)))
    for p, row in zip(grid, S):
        print(f"  {p:4.2f}   " + "  ".join(f"{v:.5f}" for v in row))
    print("  change  " + "  ".join(f"{sweep.variation[sweep.grid[-1]][n]:+6.1f}%" for n in range(1, 6)) + "\n")

# a saturating interferer silences everything it covers
fp = solve_fixed_point(fig1_chain(1, p_att=1.0))
print("p_att = 1:", {n: round(s.S, 5) for n, s in fp.nodes.items()})
