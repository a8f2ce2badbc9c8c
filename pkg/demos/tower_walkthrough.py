"""Build maximal towers of Heisenberg extensions and print each level.

    python3 demos/tower_walkthrough.py
"""
import numpy as np

from nilflows.lie_core import AlgebraVector, descending_series
from nilflows.nilmanifold import Lattice
from nilflows.specs import filiform4, heisenberg
from nilflows.towers import build_maximal_tower


def show(alg, X, seed=0):
    lat = Lattice(alg)
    tower = build_maximal_tower(alg, lat, AlgebraVector(X, exact=False), seed)
    dims = [len(g) for g in descending_series(alg)]
    print(f"{alg.name}: series dims {dims}, tower height {tower.height}")
    for k, lev in enumerate(tower.levels):
        tri = lev.triple
        print(f"  level {k}: dim {lev.algebra.dim} -> quotient dim {lev.quotient.dim}")
        print(f"    Y = {np.round(tri.Y.to_float(), 6)}")
        print(f"    Z = {np.round(tri.Z.to_float(), 6)}  envelope dim {lev.envelope.dim}")
    print(f"  base: abelian of dim {tower.base.dim}")


if __name__ == "__main__":
    s2 = 2 ** 0.5
    show(heisenberg(), [1, s2, 0])
    show(filiform4(), [1, s2, 0, 0])
