"""Hinge design math: beam-theory elastic limits and quadratic stiffness/damping surfaces.

All surface inputs are SI: hinge length ``l`` and width ``w`` in metres, body
cross-sectional area ``a`` in square metres. Outputs are stiffness in N·m/rad and
damping in N·m·s/rad.
"""

from __future__ import annotations

import csv
import enum
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import RangeWarning, RankError
from .mechanism import MaterialSpec


class PropertySource(str, enum.Enum):
    AIR_MODEL = "air_model"
    WIDTH_MODEL = "width_model"
    LENGTH_MODEL = "length_model"
    COMPREHENSIVE_MODEL = "comprehensive_model"
    IDENTIFIED = "identified"
    USER = "user"


@dataclass(frozen=True)
class HingeDesign:
    length: float  # m, hinge gap length l
    width: float  # m, total flexure width w
    body_area: float  # m², cross-sectional area a of the moving body
    material: MaterialSpec | None = None

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.body_area > 0):
            raise ValueError("length, width and body_area must be > 0")


@dataclass(frozen=True)
class HingeProperties:
    stiffness: float
    damping: float
    source: PropertySource
    clamped: tuple[str, ...] = ()  # names of quantities clamped at 0
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("stiffness and damping must be >= 0")
        object.__setattr__(self, "source", PropertySource(self.source))

    def as_dict(self) -> dict:
        return {
            "k": self.stiffness,
            "b": self.damping,
            "source": self.source.value,
            "clamped": bool(self.clamped),
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class BeamLimits:
    f_max: float  # N
    delta_max: float  # m
    phi_max: float  # rad


# Polynomials as {variable: (c1, c2)} linear/square coefficients plus a constant.
@dataclass(frozen=True)
class QuadraticModel:
    constant: float
    terms: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(self.terms)

    def __call__(self, **values: float) -> float:
        # Horner form per variable: x·(c1 + c2·x)
        total = self.constant
        for name, (c1, c2) in self.terms.items():
            x = values[name]
            total += x * (c1 + c2 * x)
        return float(total)

    def power_form(self, **values: float) -> float:
        """Naive c·x^p evaluation, kept as an independent route for cross-checks."""
        total = self.constant
        for name, (c1, c2) in self.terms.items():
            x = values[name]
            total += c2 * x**2 + c1 * x**1
        return float(total)


AIR_DAMPING = QuadraticModel(1.8e-5, {"a": (-0.0042, 2.34)})
WIDTH_DAMPING = QuadraticModel(1.9812e-5, {"w": (-3.3197e-4, 0.0166)})
WIDTH_STIFFNESS = QuadraticModel(0.0003, {"w": (-0.1361, 3.0857)})
LENGTH_DAMPING = QuadraticModel(8.3506e-5, {"l": (-0.0297, 3.6381)})
LENGTH_STIFFNESS = QuadraticModel(0.251, {"l": (-7.4590, 746.6667)})
COMPREHENSIVE_DAMPING = QuadraticModel(
    5.0855e-5, {"a": (0.0129, -0.8565), "l": (-0.227, 2.0822), "w": (-0.0023, 0.0408)}
)
COMPREHENSIVE_STIFFNESS = QuadraticModel(0.0073, {"l": (-7.5305, 762.5397), "w": (0.4298, -1.4444)})

# Input boxes where each surface is trusted. Chosen so the reported trends hold
# (width stiffens and damps, length softens) and no surface goes negative inside.
FITTED_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "air_model": {"a": (1.0e-3, 5.0e-3)},
    "width_model": {"w": (0.045, 0.065)},
    "length_model": {"l": (1.0e-3, 4.0e-3)},
    "comprehensive_model": {"l": (1.0e-5, 1.2e-4), "w": (0.045, 0.065), "a": (1.0e-3, 5.0e-3)},
}


def _range_messages(model: str, values: Mapping[str, float]) -> list[str]:
    out = []
    for name, (lo, hi) in FITTED_RANGES[model].items():
        x = values[name]
        if not lo <= x <= hi:
            out.append(f"{model}: {name} = {x:g} outside fitted range [{lo:g}, {hi:g}]")
    return out


def _clamp(name: str, value: float, clamped: list[str], notes: list[str]) -> float:
    if value < 0.0:
        clamped.append(name)
        notes.append(f"{name} evaluated to {value:.6g}; clamped to 0")
        return 0.0
    return value


def _evaluate(source: PropertySource, values, k_model, b_model) -> HingeProperties:
    notes = _range_messages(source.value, values)
    for msg in notes:
        warnings.warn(msg, RangeWarning, stacklevel=3)
    clamped: list[str] = []
    k = _clamp("k", k_model(**values), clamped, notes) if k_model is not None else 0.0
    b = _clamp("b", b_model(**values), clamped, notes)
    return HingeProperties(k, b, source, tuple(clamped), tuple(notes))


def damping_from_area(a: float) -> float:
    """Air-inclusive damping for a moving body of cross-sectional area ``a`` (clamped at 0)."""
    return _evaluate(PropertySource.AIR_MODEL, {"a": a}, None, AIR_DAMPING).damping


def air_damping_properties(a: float) -> HingeProperties:
    return _evaluate(PropertySource.AIR_MODEL, {"a": a}, None, AIR_DAMPING)


def properties_from_width(w: float) -> HingeProperties:
    return _evaluate(PropertySource.WIDTH_MODEL, {"w": w}, WIDTH_STIFFNESS, WIDTH_DAMPING)


def properties_from_length(l: float) -> HingeProperties:
    return _evaluate(PropertySource.LENGTH_MODEL, {"l": l}, LENGTH_STIFFNESS, LENGTH_DAMPING)


def _comprehensive(l: float, w: float, a: float) -> HingeProperties:
    return _evaluate(
        PropertySource.COMPREHENSIVE_MODEL,
        {"l": l, "w": w, "a": a},
        COMPREHENSIVE_STIFFNESS,
        COMPREHENSIVE_DAMPING,
    )


def properties_comprehensive(d: HingeDesign) -> HingeProperties:
    """Stiffness and damping from all three design variables at once."""
    return _comprehensive(d.length, d.width, d.body_area)


def beam_limits(
    width: float,
    thickness: float,
    span: float,
    lever_x: float,
    lever_l: float,
    sigma_max: float,
    E: float,
    *,
    beam_exponent: int = 3,
) -> BeamLimits:
    """Elastic limits of a flexure treated as a cantilever strip.

    ``beam_exponent`` is the thickness power in the load limit: 3 (default) gives
    F = σ w t³ / (6 L), 2 is the textbook bending-stress limit σ w t² / (6 L).
    """
    args = {"width": width, "thickness": thickness, "span": span, "lever_x": lever_x,
            "lever_l": lever_l, "sigma_max": sigma_max, "E": E}
    bad = [k for k, v in args.items() if not v > 0]
    if bad:
        raise ValueError(f"inputs must be > 0: {', '.join(bad)}")
    inertia = width * thickness**3 / 12.0
    f_max = sigma_max * width * thickness**beam_exponent / (6.0 * span)
    delta_max = f_max * lever_x**2 * lever_l / (2.0 * E * inertia)
    phi_max = f_max * lever_x * lever_l / (E * inertia)
    return BeamLimits(f_max, delta_max, phi_max)


@dataclass(frozen=True)
class SurfaceFit:
    variables: tuple[str, ...]
    coefficients: np.ndarray  # [c0, c1(v1), c2(v1), c1(v2), c2(v2), ...]
    mae: float
    mae_percent: float

    def as_model(self) -> QuadraticModel:
        c = self.coefficients
        terms = {v: (float(c[1 + 2 * i]), float(c[2 + 2 * i])) for i, v in enumerate(self.variables)}
        return QuadraticModel(float(c[0]), terms)

    def predict(self, points) -> np.ndarray:
        return _design_matrix(np.asarray(points, dtype=float).reshape(-1, len(self.variables))) @ self.coefficients


def _design_matrix(X: np.ndarray) -> np.ndarray:
    cols = [np.ones(len(X))]
    for j in range(X.shape[1]):
        cols += [X[:, j], X[:, j] ** 2]
    return np.column_stack(cols)


def fit_quadratic_surface(
    samples: Sequence[tuple[Sequence[float] | float, float]],
    variables: Sequence[str] | None = None,
) -> SurfaceFit:
    """Least-squares quadratic surface, no cross terms, on (design point, measured value) pairs.

    Columns are scaled to unit norm before solving so coefficients spanning many
    decades are recovered to near machine precision.
    """
    if len(samples) == 0:
        raise RankError("no samples")
    X = np.array([np.atleast_1d(np.asarray(p, dtype=float)) for p, _ in samples])
    y = np.array([float(v) for _, v in samples])
    nvar = X.shape[1]
    names = tuple(variables) if variables is not None else tuple(f"x{i + 1}" for i in range(nvar))
    if len(names) != nvar:
        raise ValueError("variable names do not match the design point width")
    D = _design_matrix(X)
    ncoef = D.shape[1]
    if len(y) < ncoef:
        raise RankError(f"{len(y)} samples cannot determine {ncoef} coefficients")
    scale = np.linalg.norm(D, axis=0)
    if np.any(scale == 0):
        raise RankError("design matrix has an all-zero column")
    Ds = D / scale
    sol, _, rank, _ = np.linalg.lstsq(Ds, y, rcond=None)
    if rank < ncoef:
        raise RankError(f"design matrix rank {rank} < {ncoef} coefficients")
    coef = sol / scale
    resid = D @ coef - y
    mae = float(np.mean(np.abs(resid)))
    mean_y = float(np.mean(np.abs(y)))
    mae_pct = 100.0 * mae / mean_y if mean_y > 0 else float("nan")
    return SurfaceFit(names, coef, mae, mae_pct)


@dataclass(frozen=True)
class ExperimentTable:
    points: np.ndarray  # (n, 3) columns l, w, a
    k: np.ndarray
    b: np.ndarray

    def samples(self, quantity: str, variables: Sequence[str] = ("l", "w", "a")):
        col = {"l": 0, "w": 1, "a": 2}
        idx = [col[v] for v in variables]
        values = {"k": self.k, "b": self.b}[quantity]
        return [(tuple(p[idx]), float(v)) for p, v in zip(self.points, values)]


def load_experiment_table(path) -> ExperimentTable:
    """Read a CSV with header ``l,w,a,k_meas,b_meas``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"l", "w", "a", "k_meas", "b_meas"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValueError(f"experiment table needs columns {sorted(need)}")
        rows = [(float(r["l"]), float(r["w"]), float(r["a"]), float(r["k_meas"]), float(r["b_meas"]))
                for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return ExperimentTable(arr[:, :3], arr[:, 3], arr[:, 4])
