"""Gauss-Hermite rules for expectations over circular complex Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True, eq=False)
class GaussHermiteRule:
    """Order-N rule with weights normalized to a probability measure.

    ``nodes`` integrate against N(0, 1/2), i.e. one quadrature of a CN(0, 1)
    variable.  Scale by sqrt(sigma2) for CN(0, sigma2).  The tensor product of
    ``weights`` with itself sums to one.
    """

    order: int
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        t, w = _hermgauss(self.order)
        object.__setattr__(self, "nodes", t)
        object.__setattr__(self, "weights", w)

    def complex_nodes(self, sigma2: float = 1.0) -> np.ndarray:
        """Flattened 2-D nodes delta[nI] + j delta[nQ] for CN(0, sigma2) noise."""
        s = np.sqrt(sigma2)
        return (s * (self.nodes[:, None] + 1j * self.nodes[None, :])).ravel()

    def tensor_weights(self) -> np.ndarray:
        return (self.weights[:, None] * self.weights[None, :]).ravel()

    def expect(self, f, sigma2: float = 1.0, mean: complex = 0.0) -> complex:
        """E[f(mean + v)] for v ~ CN(0, sigma2)."""
        v = mean + self.complex_nodes(sigma2)
        return np.sum(self.tensor_weights() * f(v))


@lru_cache(maxsize=16)
def _hermgauss(order: int):
    t, w = np.polynomial.hermite.hermgauss(order)
    w = w / w.sum()
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w
