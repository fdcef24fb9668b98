"""Velocity control with a triangular disturbance: entropy-rewarding policies.

The objective is ``E[sum_k -phi v_k] - KL(T || U)``: speed earns reward and
so does unpredictability.  Each synthesized policy minimizes a certified
upper bound on it.  Larger phi makes speed worth more relative to
entropy, so the policy accelerates harder and its trajectories become more
predictable (smaller KL to uniform).  The plain robust dynamic-programming
policy ignores entropy altogether.

    python3 demos/av_synthesis.py [N] [K]        (defaults 80 and 15; about five minutes)
"""
import sys

import numpy as np

from entrobound.montecarlo import mc_objective
from entrobound.pipeline import AV, av_model, prepare
from entrobound.synthesis import evaluate_policy, synthesize, unregularized_policy

N = int(sys.argv[1]) if len(sys.argv) > 1 else AV["N"]
K = int(sys.argv[2]) if len(sys.argv) > 2 else AV["K"]

rows = []
for phi in (2.3, 2.56):
    model = av_model(phi, K)
    s = prepare(model, N, mesh=AV["mesh"])
    rep = synthesize(s.abstraction, K, s.geom, s.gradient, sigma=-1)
    est = mc_objective(model, rep.policy_local, s.partition, M=10**5, seed=6, sigma=-1)
    rows.append((f"phi={phi}", rep.lower_local, rep.upper_local, est, rep.policy_local))
    if phi == 2.3:
        dp = unregularized_policy(s.abstraction, K)
        b = evaluate_policy(s.abstraction, K, s.geom, s.gradient, dp, -1)
        rows.append(("robust DP", b.lower_local, b.upper_local,
                     mc_objective(model, dp, s.partition, M=10**5, seed=6, sigma=-1), dp))

print(f"{'policy':>10} {'lower':>8} {'MC obj':>8} {'upper':>8} {'MC KL':>8} {'mean accel':>10}")
for name, lo, hi, est, pol in rows:
    accel = np.asarray(pol.legend)[pol.actions].mean()
    print(f"{name:>10} {lo:8.2f} {est['objective'].mean:8.2f} {hi:8.2f} {est['kl'].mean:8.2f} {accel:10.2f}")
# Expected: KL(DP) < KL(phi=2.56) < KL(phi=2.3) and every MC objective inside its bounds.
