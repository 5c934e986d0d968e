"""Brute-force checks: exhaustive search and projected-gradient ascent.

Neither oracle knows the closed form.  Exhaustive search over atom-only plans
never beats it, and gradient ascent over all plans on a grid lands on it.
"""

import numpy as np

from recursive_hhk.ez import solve_ez
from recursive_hhk.market import MarketParams
from recursive_hhk.oracle import DiscretizedProblem, exhaustive_search, projected_gradient_ascent
from recursive_hhk.preferences import EZParams, ez_felicity

market = MarketParams(T=1.0, r=0.05, beta=1.0, y=1.0, w=1.0, grid_n=50)
ez = EZParams(delta=0.1, rho=0.5, alpha=0.5)
spec = ez_felicity(ez)
exact = solve_ez(market, ez).U0

ex = exhaustive_search(DiscretizedProblem(market, spec, (0.0, 0.1, 0.2, 0.3, 0.5), 20))
print(f"closed form        U0 = {exact:.8f}")
print(f"exhaustive search  U0 = {ex.utility:.8f} over {ex.evaluations} plans")
pga = projected_gradient_ascent(market, spec, steps=150)
print(f"gradient ascent    U0 = {pga.utility:.8f} ({pga.evaluations} evaluations)")
print(f"ascent gulp {pga.plan.atom_masses.sum():.4f}, "
      f"last consuming cell ends at t = {market.grid[np.flatnonzero(pga.plan.rate > 1e-6)[-1] + 1]:.3f}")
