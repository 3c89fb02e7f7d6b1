"""Shared random-instance generators for property and acceptance tests.

Everything is driven by an explicit numpy Generator so test runs are
reproducible; "generate until valid" loops are bounded.
"""

from __future__ import annotations

import numpy as np

from osscontrol.matlib import numerical_rank, range_basis
from osscontrol.optprob import ConvexProgram
from osscontrol.plant import PlantMatrices, UncertainPlant, fixed_plant
from osscontrol.stabilize import pbh_stabilizable
from osscontrol.subspaces import equilibrium_geometry


def random_plant(rng: np.random.Generator, n: int, m: int, p: int, n_w: int = 1,
                 stable: bool = False) -> PlantMatrices:
    """Random plant with (A, B) stabilizable (retries until the PBH test passes)."""
    for _ in range(50):
        a = rng.standard_normal((n, n))
        if stable:
            a = a - (np.linalg.eigvals(a).real.max() + 0.5) * np.eye(n)
        b = rng.standard_normal((n, m))
        if pbh_stabilizable(a, b):
            break
    else:
        raise RuntimeError("failed to generate a stabilizable pair")
    return PlantMatrices(
        a=a, b=b, bw=rng.standard_normal((n, n_w)),
        c=rng.standard_normal((p, n)), d=rng.standard_normal((p, m)),
        q=rng.standard_normal((p, n_w)),
    )


def random_qp_instance(rng: np.random.Generator, n_ec: int = 1, *, n=None, m=None,
                       p=None, n_w: int = 1, definite: bool = True):
    """Random equality-constrained QP over a random plant, with a nonredundant
    constraint stack.  Returns (plant, program, geometry)."""
    for _ in range(80):
        nn = int(n if n is not None else rng.integers(1, 7))
        mm = int(m if m is not None else rng.integers(1, 4))
        pp = int(p if p is not None else rng.integers(max(1, n_ec), 5))
        pm = random_plant(rng, nn, mm, pp, n_w)
        h = rng.standard_normal((n_ec, pp)) if n_ec else np.zeros((0, pp))
        geom = equilibrium_geometry(pm, h)
        stack = np.vstack([geom.gperp, h])
        if numerical_rank(stack) != stack.shape[0]:
            continue
        if definite:
            root = rng.standard_normal((pp, pp))
            m_cost = root.T @ root + 0.1 * np.eye(pp)
        else:
            root = rng.standard_normal((max(pp - 1, 1), pp))
            m_cost = root.T @ root
        prog = ConvexProgram.from_qp(m_cost, rng.standard_normal((pp, n_w)),
                                     n_w=n_w, h_eq=h,
                                     l_eq=rng.standard_normal((n_ec, n_w)))
        return pm, prog, geom
    raise RuntimeError("failed to generate a nonredundant QP instance")


def feasible_direction_matrix(geom, rng=None, columns=None) -> np.ndarray:
    """Matrix spanning the feasible directions; optionally re-mixed to a given
    column count (keeping the range)."""
    tb = geom.t_basis.basis
    if columns is None:
        return tb
    if columns < tb.shape[1]:
        raise ValueError("cannot span the subspace with fewer columns")
    for _ in range(20):
        mix = rng.standard_normal((tb.shape[1], columns))
        if numerical_rank(mix) == tb.shape[1]:
            return tb @ mix
    raise RuntimeError("failed to draw a full-row-rank mixing matrix")


def uncertain_wrapper(pm: PlantMatrices) -> UncertainPlant:
    return fixed_plant(pm)


def output_subspace_matrix(geom) -> np.ndarray:
    """Full-column-rank matrix spanning the equilibrium-output subspace."""
    return range_basis(geom.g).basis
