"""Clipped Gaussian random walk on the unit square: bounds versus resolution.

Builds interval abstractions for N = 2..N_max cells per side, runs the
three backward recursions and prints how the certified interval around the
trajectory KL divergence to uniform tightens.  A Monte Carlo estimate of
the true value is shown for reference.

    python3 demos/example1_sweep.py [N_max]      (default 6; 10 takes several minutes)
"""
import sys

from entrobound.bounds import sweep_csv
from entrobound.montecarlo import mc_kl_to_uniform
from entrobound.pipeline import example1_model, run_bounds

n_max = int(sys.argv[1]) if len(sys.argv) > 1 else 6
model = example1_model()
mc = mc_kl_to_uniform(model, M=10**5, seed=1)
print(f"Monte Carlo KL to uniform: {mc.mean:.5f} +- {mc.std_error:.5f}\n")
print(f"{'N':>3} {'lower':>9} {'upper(global)':>14} {'upper(local)':>13} {'eps_global':>11} {'time':>7}")
reports = []
for N in range(2, n_max + 1):
    r = run_bounds(model, N)
    reports.append(r)
    print(f"{N:>3} {r.lower:9.5f} {r.upper_global:14.5f} {r.upper_local:13.5f} {r.eps_global:11.5f} {r.runtime_s:6.1f}s")

# The global correction shrinks like log(1 + c/N); the local one folds the
# same slack into every step and is markedly tighter at every resolution.
with open("example1_sweep.csv", "w") as fh:
    fh.write(sweep_csv(reports))
print("\nwrote example1_sweep.csv")
