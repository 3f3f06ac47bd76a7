"""
Checking an optimum instead of trusting it
==========================================

The solver returns a KKT certificate with every solution. Here we solve a
two-BS, four-user instance, compare the utility against a brute-force search
that shares no code with the solver, and show the certificate reacting to a
small perturbation.
"""

import numpy as np

from hetnet_abs.channel import EfficiencyMatrices
from hetnet_abs.optimizer import Allocation, brute_force_oracle, kkt_residual, rates, solve_joint, utility

# Column 0 is a macro (no blank-phase rate), column 1 a picocell whose users
# see a cleaner channel while the macro is blanked.
c_n = np.array([[2.0, 0.3], [1.5, 0.6], [0.4, 1.2], [0.2, 2.5]])
c_b = np.array([[0.0, 0.9], [0.0, 2.4], [0.0, 3.6], [0.0, 5.0]])
eff = EfficiencyMatrices(c_n, c_b)

alloc, cert = solve_joint(eff)
np.set_printoptions(precision=4, suppress=True)
print("normal-phase shares x:\n", alloc.x)
print("blank-phase shares y:\n", alloc.y)
print(f"z = {alloc.z:.4f}, rates = {rates(alloc, eff)}")

# Budget prices: a user draws on a BS only where its marginal rate c/R equals
# that BS's price. With z strictly inside (0, 1) the prices of both phases sum
# to the same total.
print("\nnormal prices:", cert.lam, " blank prices:", cert.nu)
print(f"sum of normal prices {cert.lam.sum():.6f} vs blank {cert.nu.sum():.6f}")
print(f"largest KKT residual {cert.max_residual:.2e}")

oracle = brute_force_oracle(eff, grid_steps=50)
print(f"\nsolver utility {utility(rates(alloc, eff)):.6f}, brute-force best {oracle:.6f}")

# Move a tenth of a budget around and the certificate notices.
x = alloc.x.copy()
x[0, 0] -= 0.1
x[0, 1] += 0.1
bad = kkt_residual(eff, Allocation(x, alloc.y, alloc.z), (cert.lam, cert.nu))
print(f"after shifting 0.1 of user 0's share: stationarity {bad.stationarity_residual:.3f}, "
      f"feasibility {bad.feasibility_residual:.3f}")
