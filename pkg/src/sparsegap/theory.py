"""OOD accuracy of the ideal ID linear classifier in the planar 3-latent toy.

Geometry: ``A1 = (2, 0)``, ``A2`` a unit vector at angle ``phi`` above the
x-axis, ``A3`` a unit vector at angle ``theta`` below it.  ID data mixes
``(z1, z2)`` or ``(z2, z3)``; OOD data mixes ``(z1, z3)`` with both uniform on
[0, 1].  The ID-perfect boundary passes through ``A1 / 2`` parallel to ``A2``.

On OOD data the classifier errs exactly when ``1/2 < z1 <= 1/2 + c z3`` with
``c = sin(phi + theta - pi) / (2 sin phi)``.  The error region is a triangle
cut from the ``z1 > 1/2`` half of the parallelogram when ``c <= 1/2``
(``phi + theta/2 <= pi``, :attr:`Case.CASE2`), otherwise the correct region
is the triangle against the ``A1`` edge (:attr:`Case.CASE1`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, InvalidArgument

DEGENERACY_GUARD = 1e-6


class Case(str, enum.Enum):
    CASE1 = "case1"
    CASE2 = "case2"


@dataclass(frozen=True)
class ToyGeometry:
    phi: float
    theta: float

    def __post_init__(self):
        if not (0 < self.phi < math.pi and 0 < self.theta < math.pi):
            raise InvalidArgument(f"angles must lie in (0, pi), got phi={self.phi}, theta={self.theta}")
        if not self.phi + self.theta > math.pi:
            raise InvalidArgument("cones overlap: need phi + theta > pi")

    def vectors(self, mirrored: bool = False):
        s = -1.0 if mirrored else 1.0
        A1 = np.array([2.0, 0.0])
        A2 = np.array([math.cos(self.phi), s * math.sin(self.phi)])
        A3 = np.array([math.cos(self.theta), -s * math.sin(self.theta)])
        return A1, A2, A3


def triangle_area(a: float, b: float) -> float:
    """Area of a triangle with a unit side between adjacent angles ``a`` and ``b``."""
    if a <= 0 or b <= 0:
        raise InvalidArgument("angles must be positive")
    if a + b >= math.pi:
        raise InvalidArgument("degenerate triangle: a + b >= pi")
    return math.sin(a) * math.sin(b) / (2.0 * math.sin(a + b))


def classify_case(g: ToyGeometry) -> tuple[Case, bool]:
    """Which closed form applies, plus a flag for the exact boundary."""
    lhs = g.phi + g.theta / 2.0
    on_boundary = math.isclose(lhs, math.pi, rel_tol=0.0, abs_tol=1e-12)
    if on_boundary or lhs < math.pi:
        return Case.CASE2, on_boundary
    return Case.CASE1, False


def _areas(g: ToyGeometry):
    excess = g.phi + g.theta - math.pi
    if math.sin(excess) < DEGENERACY_GUARD or math.sin(g.phi) < DEGENERACY_GUARD:
        raise DegenerateGeometry(f"geometry too close to a pole: phi={g.phi}, theta={g.theta}")
    alpha = math.sin(g.theta)
    # triangle against the A1 edge: base A1/2 -> A1, angles (pi - phi, pi - theta)
    alpha1 = triangle_area(math.pi - g.phi, math.pi - g.theta)
    # triangle against the z1 = 1/2 edge: angles (pi - theta, phi + theta - pi)
    alpha2 = triangle_area(math.pi - g.theta, excess)
    return alpha, alpha1, alpha2


def case1_accuracy(g: ToyGeometry) -> float:
    alpha, alpha1, _ = _areas(g)
    return 0.5 + alpha1 / (2.0 * alpha)


def case2_accuracy(g: ToyGeometry) -> float:
    alpha, _, alpha2 = _areas(g)
    return 1.0 - alpha2 / (2.0 * alpha)


def analytic_ood_accuracy(g: ToyGeometry) -> float:
    case, _ = classify_case(g)
    return case1_accuracy(g) if case is Case.CASE1 else case2_accuracy(g)


def simulate_ood_accuracy(g: ToyGeometry, n: int, seed: int = 0, mirrored: bool = False,
                          chunk: int = 1_000_000) -> float:
    """Monte-Carlo OOD accuracy of the ID boundary on ``n`` draws of ``(z1, z3)``."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    A1, A2, A3 = g.vectors(mirrored)
    # positive side is the one containing A1 (z1 > 1/2 along A1)
    ref = A2[0] * (0.5 * A1[1]) - A2[1] * (0.5 * A1[0])
    rng = np.random.default_rng(seed)
    correct = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        z1 = rng.random(m)
        z3 = rng.random(m)
        dx = (z1 - 0.5) * A1[0] + z3 * A3[0]
        dy = (z1 - 0.5) * A1[1] + z3 * A3[1]
        side = A2[0] * dy - A2[1] * dx
        pred = side * np.sign(ref) > 0  # on the line -> label 0
        correct += int(np.sum(pred == (z1 > 0.5)))
        done += m
    return correct / n
