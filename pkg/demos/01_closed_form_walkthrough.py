"""Closed-form Epstein-Zin plans: gulp, wait and immediate regimes.

Walks one market through three wealth levels and shows how the optimal plan
changes shape: a gulp at time 0 followed by a decaying rate, a waiting period
before consumption starts, or everything consumed at once.
"""

from recursive_hhk.ez import k_star, solve_ez, tau_bar
from recursive_hhk.market import MarketParams, price_functional
from recursive_hhk.preferences import EZParams

market = MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=1.0, grid_n=400)
ez = EZParams(delta=0.1, rho=0.5, alpha=0.5)

tb = tau_bar(market, ez)
ks = k_star(market, ez)
print(f"consumption stops at tau_bar = {tb:.4f}")
print(f"wealth-to-satisfaction threshold k* = {ks:.4f}")
print("a gulp is optimal when w > k* y, otherwise the investor waits\n")

for w in (2.0, 1.0, 0.1):
    m = market.replace(w=w)
    sol = solve_ez(m, ez)
    cost = price_functional(sol.plan, m)
    print(f"w = {w:4.1f}: case {sol.case:9s} gulp {sol.gulp_size:.4f}  "
          f"start {sol.tau_low:.4f}  U0 {sol.U0:.6f}  cost {cost:.10f}")

# risk aversion only rescales utility: the plan is unchanged
a = solve_ez(market, EZParams(0.1, 0.3, 0.5)).plan
b = solve_ez(market, EZParams(0.1, 0.5, 0.5)).plan
print(f"\nplan difference between rho = 0.3 and rho = 0.5: {abs(a.rate - b.rate).max():.1e}")
