"""Bring your own kernel: densities tabulated on a node grid.

A one-dimensional drift toward the centre with Gaussian-shaped noise is
tabulated on 41 nodes and handed to the tool together with user-chosen sup
bounds.  The same pipeline then produces certified KL bounds.

    python3 demos/custom_model.py
"""
import numpy as np

from entrobound.bounds import compute_bounds
from entrobound.geometry import Box
from entrobound.kernels import TabulatedModel, estimate_sup_bounds
from entrobound.pipeline import prepare

nodes = np.linspace(0.0, 1.0, 41)
width = 0.15
q = np.exp(-0.5 * ((nodes[None, :] - (0.5 + 0.6 * (nodes[:, None] - 0.5))) / width) ** 2)
q0 = np.ones_like(nodes)

# sampled constants with a safety factor; a tabulated kernel has no closed form
probe = TabulatedModel(Box.unit(1), q0, q, 3, 1.0, 1.0)
sup = estimate_sup_bounds(probe, mesh=81, safety=1.2, use_analytic=False)
model = TabulatedModel(Box.unit(1), q0, q, 3, sup.L_q, sup.L_grad)
print(f"L_q = {sup.L_q:.3f}, L_grad = {sup.L_grad:.3f} (sampled x1.2)")

for N in (5, 10, 20):
    s = prepare(model, N, mesh=9)
    r = compute_bounds(s.abstraction, model.horizon, s.geom, s.gradient)
    print(f"N={N:>2}: {r.lower:.4f} <= KL <= {min(r.upper_global, r.upper_local):.4f}")
