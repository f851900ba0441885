# A two-user case where decoding the weaker channel first is cheaper.
#
# User 0 has the better channel but almost nothing to send; user 1 carries a
# large task. Decoding user 1 first lets it transmit free of user 0's
# interference, so the heavy load goes out at low power.

from nomasec import ChannelRealization, SystemConfig, oracle, pdd
from nomasec.benchmarks import solve_fixed_sic

cfg = SystemConfig(K=2, L=(1.1e4, 3.3e5))
ch = ChannelRealization.from_tau([0.32, 0.185], cfg)

opt = pdd.solve(cfg, ch)
fixed = solve_fixed_sic(cfg, ch)
grid = oracle.brute_force_grid(cfg, ch)

first = 1 if opt.allocation.beta[1, 0] == 1 else 0
print(f"optimized order decodes user {first} first: {opt.total:.5g} J")
print(f"descending-gain order:                 {fixed.total:.5g} J")
for order, E in sorted(grid.per_order.items()):
    print(f"grid search, order {order}: {E:.5g} J")
print(f"improvement {100 * (1 - opt.total / fixed.total):.1f} %")
