"""Auditing plans with the Kuhn-Tucker conditions.

The optimal plan consumes only where the price-deflated utility gradient Phi
reaches its maximum.  Moving part of the gulp to the horizon breaks that, and
the audit says so.
"""

import numpy as np

from recursive_hhk.ez import solve_ez
from recursive_hhk.kkt import verify_kkt
from recursive_hhk.market import ConsumptionPlan, MarketParams
from recursive_hhk.preferences import EZParams, ez_felicity

market = MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=1.0, grid_n=400)
ez = EZParams(delta=0.1, rho=0.5, alpha=0.5)
spec = ez_felicity(ez)

sol = solve_ez(market, ez)
report = verify_kkt(sol.plan, spec, market)
print("optimal plan")
for key, value in report.to_dict(with_path=False).items():
    print(f"  {key:20s} {value}")

# move 10% of the gulp's present value to an atom at T
g = sol.gulp_size
moved = ConsumptionPlan(market.T, market.grid_n, sol.plan.rate, [0.0, market.T],
                        [0.9 * g, 0.1 * g * np.exp(market.r * market.T)])
bad = verify_kkt(moved, spec, market)
print("\nperturbed plan (10% of the gulp moved to T)")
print(f"  complementarity gap {bad.complementarity_gap:.3e}  connected {bad.support_connected}")
print(f"  passes: {bad.ok}")
