"""Built-in cocycles used by the tests, experiments and CLI examples.

Each entry is a JSON-ready dict accepted by ``cocycle_from_dict``.
"""

from __future__ import annotations

import math

import numpy as np

from .cocycle import CocycleSystem, cocycle_from_dict

# Full-rank and rank-2 members of the semi-invertible showcase.  The third
# column of SHOWCASE_SINGULAR is the sum of the first two.
SHOWCASE_FULL = [[1.2, 0.6, 0.2], [0.3, 0.8, 0.4], [0.2, -0.3, 0.9]]
SHOWCASE_SINGULAR = [[1.0, 0.5, 1.5], [-0.4, 0.9, 0.5], [0.3, 0.2, 0.5]]
SHOWCASE_PROBS = [0.1, 0.9]
SHOWCASE_SEED = 7

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def constant_diagonal(diag=(2.0, 0.5)) -> dict:
    return {"d": len(diag), "driver": {"kind": "finite_orbit", "params": {"sequence": [0]}, "seed": 0},
            "generator": {"kind": "constant", "matrix": np.diag(diag).tolist()}}


def jordan_block() -> dict:
    return {"d": 2, "driver": {"kind": "finite_orbit", "params": {"sequence": [0]}, "seed": 0},
            "generator": {"kind": "constant", "matrix": [[1.0, 1.0], [0.0, 1.0]]}}


def commuting_diagonal(seed: int = 3) -> dict:
    """i.i.d. fair choice between diag(2, 1) and diag(1, 2)."""
    return {"d": 2, "driver": {"kind": "bernoulli_shift", "params": {"probabilities": [0.5, 0.5]},
                               "seed": seed},
            "generator": {"kind": "table", "matrices": [[[2.0, 0.0], [0.0, 1.0]],
                                                          [[1.0, 0.0], [0.0, 2.0]]]}}


def invertible_bernoulli(seed: int = 11) -> dict:
    """i.i.d. choice between two non-commuting invertible 3x3 matrices."""
    m0 = [[1.5, 0.4, 0.0], [0.2, 0.9, 0.3], [0.0, 0.1, 0.5]]
    m1 = [[0.8, -0.3, 0.2], [0.5, 1.1, 0.0], [0.1, 0.0, 0.4]]
    return {"d": 3, "driver": {"kind": "bernoulli_shift", "params": {"probabilities": [0.5, 0.5]},
                               "seed": seed},
            "generator": {"kind": "table", "matrices": [m0, m1]}}


def showcase(seed: int = SHOWCASE_SEED) -> dict:
    """Semi-invertible showcase: d = 3, Bernoulli over a full-rank and a rank-2 matrix."""
    return {"d": 3, "driver": {"kind": "bernoulli_shift", "params": {"probabilities": SHOWCASE_PROBS},
                               "seed": seed},
            "generator": {"kind": "table", "matrices": [SHOWCASE_FULL, SHOWCASE_SINGULAR]}}


def rotation(alpha: float = GOLDEN, seed: int = 0) -> dict:
    """Quasi-periodic analytic generator a0 + a1 cos(2 pi x) + a2 sin(2 pi x)."""
    return {"d": 2, "driver": {"kind": "circle_rotation", "params": {"alpha": alpha}, "seed": seed},
            "generator": {"kind": "trig", "a0": [[2.0, 0.3], [0.1, 0.5]],
                          "a1": [[0.5, 0.0], [0.2, 0.1]], "a2": [[0.0, 0.4], [0.0, 0.2]]}}


ZOO = {
    "constant_diagonal": constant_diagonal,
    "jordan": jordan_block,
    "commuting_diagonal": commuting_diagonal,
    "invertible_bernoulli": invertible_bernoulli,
    "showcase": showcase,
    "rotation": rotation,
}


def get(name: str, **kwargs) -> CocycleSystem:
    return cocycle_from_dict(ZOO[name](**kwargs))
