"""Choose bids for a small day slice and compare the two solvers.

    python demos/03_portfolio_day.py
"""
import numpy as np

from vbid.market import CostSchedule
from vbid.portfolio import (PortfolioInstance, build_problem, complete_decision, evaluate, realized_cvar_check,
                            solve_branch_and_bound, solve_enumeration)
from vbid.sensitivity import PwlSensitivity

rng = np.random.default_rng(3)
N, H, Ns = 3, 2, 20
E = np.array([[6.0, -4.0], [2.5, 1.0], [-7.0, 3.0]])            # forecast spreads, (nodes, hours)
samples = E.T[:, None, :] + rng.normal(0, 12, (H, Ns, N))      # historical scenarios
pwl = tuple(PwlSensitivity(h, [-3.0, 0.0], [-2.0, -4.0], [0.0, 0.0], -3.0, 3.0) for h in range(H))
inst = PortfolioInstance(E, pwl, samples, CostSchedule(0.2, 0.2, 10.0, 10.0), budget=40.0, risk_limit=35.0,
                         beta=0.9)

enum = solve_enumeration(inst)
bb = solve_branch_and_bound(inst)
print(f"enumeration: {enum.objective:.4f} with {enum.n_bids} lots")
print(f"branch and bound: {bb.objective:.4f}, {bb.nodes} nodes, gap {bb.gap:.1e}")
for hour, node, side in bb.decisions(inst.nodes, inst.hours):
    print(f"  hour {hour} node {node} {side}")
print("net position per hour:", bb.x, "collateral", bb.collateral, "CVaR per hour", np.round(bb.cvar, 2))
print("budget binding:", bb.budget_binding, " risk binding:", bb.risk_binding)

ok, cvar = realized_cvar_check(inst, bb.z_inc, bb.z_dec)
print(f"recomputed CVaR {cvar:.3f} <= {inst.risk_limit}: {ok}")

# fill in every auxiliary variable and check the explicit model
prob = build_problem(inst)
vals = complete_decision(prob, bb.z_inc, bb.z_dec)
print(f"model has {prob.n_variables} variables and {len(prob.constraints)} constraints;",
      "violations:", prob.check(vals) or "none")

# ignoring the price response buys more lots than it should
naive = solve_branch_and_bound(inst.without_sensitivity())
print(f"plan chosen without the response: {naive.n_bids} lots, true value "
      f"{evaluate(inst, naive.z_inc, naive.z_dec).objective:.4f}")
