"""Loop-closure coincidence constraints and their Baumgarte-stabilized acceleration form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels
from .errors import TopologyError
from .kinematics import KinematicTree, LoopConstraintPoints

DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 10.0


@dataclass(frozen=True)
class BaumgarteParams:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")


@dataclass(frozen=True)
class ConstraintSystem:
    """Holonomic constraint C(q) = 0 with its Jacobian and velocity-product term.

    ``bias(q, qdot)`` is C̈ evaluated at q̈ = 0, i.e. (dA/dt)·q̇.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    bias: Callable[[np.ndarray, np.ndarray], np.ndarray]
    rows: int

    def error(self, q) -> float:
        """Largest point-to-point coincidence distance (m)."""
        return float(_kernels.coincidence_error(np.asarray(self.residual(q), dtype=float)))


def build_constraints(tree: KinematicTree, points: LoopConstraintPoints | None = None) -> ConstraintSystem:
    """Coincidence of three points on the split body and its dummy: C = x_orig(p) - x_dummy(p)."""
    if tree.cut_edge is None:
        raise TopologyError("mechanism has no closed loop to constrain")
    m = tree.model
    pts = (points or tree.loop_points).points
    orig, dummy = m.loop_orig, m.loop_dummy

    def _terms(q, qd):
        q = np.asarray(q, dtype=float)
        qd = np.zeros_like(q) if qd is None else np.asarray(qd, dtype=float)
        return _kernels.loop_terms(q, qd, m.parent, m.coord, m.sign, m.axis_u, m.axis_p, orig, dummy, pts)

    return ConstraintSystem(
        residual=lambda q: _terms(q, None)[0],
        jacobian=lambda q: _terms(q, None)[1],
        bias=lambda q, qd: _terms(q, qd)[2],
        rows=3 * len(pts),
    )


def stabilized_acceleration_rhs(cs: ConstraintSystem, params: BaumgarteParams, q, qdot):
    """Return (A, b) with A·q̈ = b, b = -(dA/dt)q̇ - 2αĊ - β²C (α, β terms only when enabled)."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    A = np.atleast_2d(np.asarray(cs.jacobian(q), dtype=float))
    b = -np.asarray(cs.bias(q, qdot), dtype=float)
    if params.enabled:
        C = np.asarray(cs.residual(q), dtype=float)
        b = b - 2.0 * params.alpha * (A @ qdot) - params.beta**2 * C
    return A, b
