"""Occupancy measures on a random MDP.

Every policy induces a discounted state-action visitation distribution, and
that distribution is pinned down by a linear flow identity: mass entering a
state equals (1 - gamma) times the start probability plus gamma times the
discounted inflow.  This walkthrough computes the occupancy exactly, checks
the identity, inverts it back to the policy, and shows that plain rollouts
with geometric resets estimate the very same object.

Run with `python3 demos/01_occupancy_flow.py`.
"""

import numpy as np

from relaxdice import (
    TabularPolicy,
    occupancy_of_policy,
    policy_of_occupancy,
    random_mdp,
    sample_trajectories,
)
from relaxdice.mdp import flow_residual
from relaxdice.ratio import pair_counts

rng = np.random.default_rng(0)

# An 8-state, 3-action MDP with dense random transitions.
mdp = random_mdp(num_states=8, num_actions=3, gamma=0.95, seed=0)
probs = rng.dirichlet(np.ones(3), size=8)
policy = TabularPolicy(0.7 * probs + 0.3 / 3)

# The occupancy comes from one linear solve, no iteration involved.
occ = occupancy_of_policy(mdp, policy)
print(f"occupancy sums to {occ.d.sum():.12f} (should be 1)")

residual = flow_residual(mdp, occ.d)
print(f"flow residual, max abs: {np.max(np.abs(residual)):.2e}")

# Conditioning the occupancy on the state recovers the policy exactly,
# so policies and occupancies are two views of the same object.
recovered = policy_of_occupancy(occ)
gap = np.max(np.abs(recovered.probs - policy.probs))
print(f"policy round trip, max abs gap: {gap:.2e}")

# Rollouts with termination probability 1 - gamma per step draw (s, a)
# pairs from exactly this distribution, so empirical frequencies converge
# to the exact occupancy.
for n in (2_000, 20_000, 200_000):
    data = sample_trajectories(mdp, policy, n, seed=1)
    empirical = pair_counts(data) / len(data)
    l1 = np.abs(empirical - occ.d).sum()
    print(f"rollout estimate at n={n:>7}: L1 distance {l1:.4f}")

# The heaviest cells, exact versus estimated at the largest sample size.
flat = np.argsort(occ.d.ravel())[::-1][:5]
print("\ntop cells      exact   estimated")
for idx in flat:
    s, a = divmod(int(idx), mdp.num_actions)
    print(f"  (s={s}, a={a})   {occ.d[s, a]:.4f}   {empirical[s, a]:.4f}")
