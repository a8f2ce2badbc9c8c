"""Shearing along central fibers for a time-change that is not a coboundary.

Prints mu{|D_t| < 1} and the correlation defect of a toral observable at a
few times. Both shrink as t grows; with a fiber-independent alpha D_t is 0.

    python3 demos/shearing_trends.py [samples]
"""
import sys

import numpy as np

from nilflows import diagnostics as dg
from nilflows.dynamics import FlowConfig
from nilflows.lie_core import AlgebraVector
from nilflows.nilmanifold import Lattice, haar_sample
from nilflows.observables import FiberPolynomial, fiber_character_obs, torus_character
from nilflows.specs import heisenberg
from nilflows.towers import build_maximal_tower

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
alg = heisenberg()
lat = Lattice(alg)
level = build_maximal_tower(alg, lat, AlgebraVector([1, 2 ** 0.5, 0], exact=False), 7).levels[0]
z = level.envelope

fv = fiber_character_obs((1,), z, 0.35, 2)
re = FiberPolynomial(z, {(1,): fv}).real()
sup = float(np.max(np.abs(re.eval(haar_sample(lat, 20000, 5)))))
alpha = re.scaled(0.2 / sup, 1.0)
cfg = FlowConfig(lat, level.triple.X, alpha, triple=level.triple)

times = [5, 25, 100, 200]
est = dg.EstimatorConfig(samples=n, seed=0, quad=dg.MC_QUAD)
D = dg.sublevel_shear(cfg, 1.0, times, est)
chi = torus_character(lat, [1, 0]).real()
corr = dg.correlation_curve(chi, chi, cfg, dg.EstimatorConfig(samples=n, seed=0, t_grid=times,
                                                              quad=dg.MC_QUAD))
print(f"n = {n}")
print("   t   mu{|D_t|<1}      defect")
for j, t in enumerate(times):
    print(f"{t:4d}   {D.estimate[j]:.3f}+-{D.stderr[j]:.3f}   {corr.estimate[j]:.4f}+-{corr.stderr[j]:.4f}")
