"""Declarative mechanism description: types, YAML parsing/dumping, mass properties.

Mechanism file layout (YAML, SI units throughout)::

    schema: 1
    gravity: [0.0, -9.81, 0.0]
    materials:
      - {name: board, density: 700.0, thickness: 0.0015,
         youngs_modulus: 4.0e9, yield_stress: 4.0e7}
    bodies:
      - id: ground
        newtonian: true
        polygon: [[0, 0], [0.05, 0], [0.05, 0.02], [0, 0.02]]
        layers: [{material: board}]
      - id: link
        polygon: [[0, -0.05], [0.05, -0.05], [0.05, 0], [0, 0]]
        layers: [{material: board, thickness: 0.001}]
        point_masses: [{position: [0.025, -0.04], mass: 0.0005}]
    joints:
      - id: j1
        parent: ground
        child: link
        axis: [[0, 0, 0], [1, 0, 0]]
        stiffness: 0.05
        damping: 2.0e-5
        rest_angle: 0.0
        initial_angle_guess: 0.2
        external_torque: [[-1.0, 0.001], [0.0, 0.0]]
    simulation: {dt: 1.0e-4, duration: 2.0}

``simulation`` is optional and only carries run defaults; command-line flags
override it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import jsonschema
import numpy as np
import yaml
from shapely.geometry import LinearRing

from .errors import DanglingReferenceError, SchemaError, TopologyError

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_VEC23 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 3}
_ID = {"type": ["string", "integer"]}

MECHANISM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "materials", "bodies", "joints"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "gravity": _VEC3,
        "materials": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "density", "thickness", "youngs_modulus", "yield_stress"],
                "properties": {
                    "name": _ID,
                    "density": _NUM,
                    "thickness": _NUM,
                    "youngs_modulus": _NUM,
                    "yield_stress": _NUM,
                },
            },
        },
        "bodies": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "polygon", "layers"],
                "properties": {
                    "id": _ID,
                    "newtonian": {"type": "boolean"},
                    "polygon": {"type": "array", "items": _VEC2, "minItems": 3},
                    "layers": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["material"],
                            "properties": {"material": _ID, "thickness": _NUM},
                        },
                    },
                    "point_masses": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["position", "mass"],
                            "properties": {"position": _VEC23, "mass": _NUM},
                        },
                    },
                },
            },
        },
        "joints": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "parent", "child", "axis"],
                "properties": {
                    "id": _ID,
                    "parent": _ID,
                    "child": _ID,
                    "axis": {"type": "array", "items": _VEC3, "minItems": 2, "maxItems": 2},
                    "stiffness": _NUM,
                    "damping": _NUM,
                    "rest_angle": _NUM,
                    "initial_angle_guess": _NUM,
                    "external_torque": {"type": "array", "items": _VEC2},
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt": _NUM,
                "burn_in_dt": _NUM,
                "burn_in_steps": {"type": "integer"},
                "duration": _NUM,
                "alpha": _NUM,
                "beta": _NUM,
                "constraint_tolerance": _NUM,
            },
        },
    },
}


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    density: float
    thickness: float
    youngs_modulus: float
    yield_stress: float

    def __post_init__(self):
        for attr in ("density", "thickness", "youngs_modulus", "yield_stress"):
            value = getattr(self, attr)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"material {self.name!r}: {attr} must be > 0, got {value}")


@dataclass(frozen=True)
class Layer:
    material: str
    thickness: float | None = None  # None: use the material's nominal thickness


@dataclass(frozen=True)
class PointMass:
    position: tuple[float, float, float]
    mass: float


@dataclass(frozen=True)
class BodySpec:
    id: str
    polygon: tuple[tuple[float, float], ...]
    layers: tuple[Layer, ...] = ()
    point_masses: tuple[PointMass, ...] = ()
    is_newtonian: bool = False


@dataclass(frozen=True)
class JointSpec:
    id: str
    parent: str
    child: str
    axis_p1: tuple[float, float, float]
    axis_p2: tuple[float, float, float]
    stiffness: float = 0.0
    damping: float = 0.0
    rest_angle: float = 0.0
    external_torque: tuple[tuple[float, float], ...] = ()
    initial_angle_guess: float | None = None

    @property
    def axis_direction(self) -> np.ndarray:
        d = np.subtract(self.axis_p2, self.axis_p1, dtype=float)
        return d / np.linalg.norm(d)

    def torque_at(self, t: float) -> float:
        """Piecewise-constant external torque: value of the last breakpoint at or before ``t``."""
        value = 0.0
        for start, tau in self.external_torque:
            if start <= t:
                value = tau
            else:
                break
        return value

    def hold_torque(self) -> float:
        """Torque the schedule holds just before t = 0 (the burn-in hold)."""
        value = 0.0
        for start, tau in self.external_torque:
            if start < 0.0:
                value = tau
        return value


@dataclass(frozen=True)
class SimulationHints:
    dt: float | None = None
    burn_in_dt: float | None = None
    burn_in_steps: int | None = None
    duration: float | None = None
    alpha: float | None = None
    beta: float | None = None
    constraint_tolerance: float | None = None


@dataclass(frozen=True)
class MassProperties:
    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def scaled(self, factor: float) -> "MassProperties":
        return MassProperties(self.mass * factor, self.com.copy(), self.inertia * factor)

    def __eq__(self, other):
        if not isinstance(other, MassProperties):
            return NotImplemented
        return (
            self.mass == other.mass
            and np.array_equal(self.com, other.com)
            and np.array_equal(self.inertia, other.inertia)
        )


@dataclass(frozen=True)
class MechanismSpec:
    bodies: tuple[BodySpec, ...]
    joints: tuple[JointSpec, ...]
    materials: tuple[MaterialSpec, ...]
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    simulation: SimulationHints = field(default_factory=SimulationHints)

    def body(self, body_id: str) -> BodySpec:
        for b in self.bodies:
            if b.id == body_id:
                return b
        raise KeyError(body_id)

    def joint(self, joint_id: str) -> JointSpec:
        for j in self.joints:
            if j.id == joint_id:
                return j
        raise KeyError(joint_id)

    @property
    def material_table(self) -> dict[str, MaterialSpec]:
        return {m.name: m for m in self.materials}

    @property
    def newtonian(self) -> BodySpec:
        return next(b for b in self.bodies if b.is_newtonian)

    @property
    def cycle_count(self) -> int:
        # connected graph: independent cycles = E - V + 1
        return len(self.joints) - len(self.bodies) + 1


def _as_id(value) -> str:
    return str(value)


def _floats(seq, n=None) -> tuple[float, ...]:
    out = tuple(float(v) for v in seq)
    if n is not None and len(out) < n:
        out = out + (0.0,) * (n - len(out))
    return out


def _check_polygon(body_id: str, polygon) -> None:
    if len(polygon) < 3:
        raise SchemaError(f"body {body_id!r}: polygon needs at least 3 vertices")
    ring = LinearRing(polygon)
    if not ring.is_simple:
        raise SchemaError(f"body {body_id!r}: polygon is self-intersecting")


def check_topology(bodies: Sequence[BodySpec], joints: Sequence[JointSpec]) -> int:
    """Return the number of independent cycles; raise TopologyError if disconnected or > 1."""
    adjacency: dict[str, list[str]] = {b.id: [] for b in bodies}
    for j in joints:
        adjacency[j.parent].append(j.child)
        adjacency[j.child].append(j.parent)
    start = bodies[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for nb in adjacency[node]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(bodies):
        missing = sorted(set(adjacency) - seen)
        raise TopologyError(f"body-joint graph is disconnected; unreachable bodies: {missing}")
    cycles = len(joints) - len(bodies) + 1
    if cycles > 1:
        raise TopologyError(f"mechanism has {cycles} independent loops; only one is supported")
    return cycles


def mechanism_from_dict(data: Mapping) -> MechanismSpec:
    """Validate a decoded mechanism document and build the typed spec."""
    try:
        jsonschema.validate(data, MECHANISM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None

    materials = tuple(
        MaterialSpec(
            name=_as_id(m["name"]),
            density=float(m["density"]),
            thickness=float(m["thickness"]),
            youngs_modulus=float(m["youngs_modulus"]),
            yield_stress=float(m["yield_stress"]),
        )
        for m in data["materials"]
    )
    material_names = {m.name for m in materials}
    if len(material_names) != len(materials):
        raise SchemaError("duplicate material names")

    bodies = []
    for b in data["bodies"]:
        body_id = _as_id(b["id"])
        polygon = tuple(_floats(v) for v in b["polygon"])
        _check_polygon(body_id, polygon)
        layers = []
        for layer in b["layers"]:
            name = _as_id(layer["material"])
            if name not in material_names:
                raise DanglingReferenceError(f"body {body_id!r} references unknown material {name!r}")
            thickness = layer.get("thickness")
            if thickness is not None and thickness < 0:
                raise ValueError(f"body {body_id!r}: layer thickness must be >= 0")
            layers.append(Layer(name, None if thickness is None else float(thickness)))
        point_masses = []
        for pm in b.get("point_masses", []):
            if pm["mass"] <= 0:
                raise ValueError(f"body {body_id!r}: point mass must be > 0")
            point_masses.append(PointMass(_floats(pm["position"], 3), float(pm["mass"])))
        bodies.append(
            BodySpec(
                id=body_id,
                polygon=polygon,
                layers=tuple(layers),
                point_masses=tuple(point_masses),
                is_newtonian=bool(b.get("newtonian", False)),
            )
        )
    body_ids = [b.id for b in bodies]
    if len(set(body_ids)) != len(body_ids):
        raise SchemaError("duplicate body ids")
    n_newtonian = sum(b.is_newtonian for b in bodies)
    if n_newtonian != 1:
        raise SchemaError(f"exactly one newtonian body required, found {n_newtonian}")

    joints = []
    for j in data["joints"]:
        joint_id = _as_id(j["id"])
        parent, child = _as_id(j["parent"]), _as_id(j["child"])
        for ref in (parent, child):
            if ref not in body_ids:
                raise DanglingReferenceError(f"joint {joint_id!r} references unknown body {ref!r}")
        if parent == child:
            raise TopologyError(f"joint {joint_id!r} connects body {parent!r} to itself")
        p1, p2 = (_floats(p) for p in j["axis"])
        if np.linalg.norm(np.subtract(p2, p1)) == 0.0:
            raise ValueError(f"joint {joint_id!r}: axis points coincide")
        stiffness = float(j.get("stiffness", 0.0))
        damping = float(j.get("damping", 0.0))
        if stiffness < 0 or damping < 0:
            raise ValueError(f"joint {joint_id!r}: stiffness and damping must be >= 0")
        schedule = tuple(sorted((float(t), float(tau)) for t, tau in j.get("external_torque", [])))
        guess = j.get("initial_angle_guess")
        joints.append(
            JointSpec(
                id=joint_id,
                parent=parent,
                child=child,
                axis_p1=p1,
                axis_p2=p2,
                stiffness=stiffness,
                damping=damping,
                rest_angle=float(j.get("rest_angle", 0.0)),
                external_torque=schedule,
                initial_angle_guess=None if guess is None else float(guess),
            )
        )
    joint_ids = [j.id for j in joints]
    if len(set(joint_ids)) != len(joint_ids):
        raise SchemaError("duplicate joint ids")

    check_topology(bodies, joints)

    sim = data.get("simulation", {})
    hints = SimulationHints(
        dt=sim.get("dt"),
        burn_in_dt=sim.get("burn_in_dt"),
        burn_in_steps=sim.get("burn_in_steps"),
        duration=sim.get("duration"),
        alpha=sim.get("alpha"),
        beta=sim.get("beta"),
        constraint_tolerance=sim.get("constraint_tolerance"),
    )
    gravity = _floats(data.get("gravity", (0.0, 0.0, -9.81)))
    return MechanismSpec(tuple(bodies), tuple(joints), materials, gravity, hints)


def parse_mechanism(source: str) -> MechanismSpec:
    """Parse mechanism YAML text into a validated :class:`MechanismSpec`."""
    try:
        data = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise SchemaError(f"invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise SchemaError("mechanism document must be a mapping")
    return mechanism_from_dict(data)


def load_mechanism(path) -> MechanismSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_mechanism(fh.read())


def mechanism_to_dict(mech: MechanismSpec) -> dict:
    bodies = []
    for b in mech.bodies:
        entry = {
            "id": b.id,
            "polygon": [list(v) for v in b.polygon],
            "layers": [
                {"material": layer.material}
                if layer.thickness is None
                else {"material": layer.material, "thickness": layer.thickness}
                for layer in b.layers
            ],
        }
        if b.is_newtonian:
            entry["newtonian"] = True
        if b.point_masses:
            entry["point_masses"] = [{"position": list(pm.position), "mass": pm.mass} for pm in b.point_masses]
        bodies.append(entry)
    joints = []
    for j in mech.joints:
        entry = {
            "id": j.id,
            "parent": j.parent,
            "child": j.child,
            "axis": [list(j.axis_p1), list(j.axis_p2)],
            "stiffness": j.stiffness,
            "damping": j.damping,
            "rest_angle": j.rest_angle,
        }
        if j.external_torque:
            entry["external_torque"] = [list(p) for p in j.external_torque]
        if j.initial_angle_guess is not None:
            entry["initial_angle_guess"] = j.initial_angle_guess
        joints.append(entry)
    out = {
        "schema": SCHEMA_VERSION,
        "gravity": list(mech.gravity),
        "materials": [
            {
                "name": m.name,
                "density": m.density,
                "thickness": m.thickness,
                "youngs_modulus": m.youngs_modulus,
                "yield_stress": m.yield_stress,
            }
            for m in mech.materials
        ],
        "bodies": bodies,
        "joints": joints,
    }
    sim = {k: v for k, v in vars(mech.simulation).items() if v is not None}
    if sim:
        out["simulation"] = sim
    return out


def dump_mechanism(mech: MechanismSpec) -> str:
    return yaml.safe_dump(mechanism_to_dict(mech), sort_keys=False)


def _polygon_moments(polygon) -> tuple[float, float, float, float, float, float]:
    """Signed area, first moments (Sx=∫x, Sy=∫y) and second moments (∫x², ∫y², ∫xy)."""
    pts = np.asarray(polygon, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    sx = ((x + xn) * cross).sum() / 6.0
    sy = ((y + yn) * cross).sum() / 6.0
    ixx = ((x * x + x * xn + xn * xn) * cross).sum() / 12.0
    iyy = ((y * y + y * yn + yn * yn) * cross).sum() / 12.0
    ixy = ((x * yn + 2 * x * y + 2 * xn * yn + xn * y) * cross).sum() / 24.0
    return area, sx, sy, ixx, iyy, ixy


def polygon_area(polygon) -> float:
    return abs(_polygon_moments(polygon)[0])


def compute_mass_properties(body: BodySpec, materials) -> MassProperties:
    """Mass, centre of mass and COM inertia of a laminate body.

    Each layer is a uniform thin lamina in the z = 0 plane (thickness only sets the
    areal density); point masses are added through the parallel-axis theorem.
    ``materials`` is either a name->MaterialSpec mapping or a sequence of specs.
    """
    if not isinstance(materials, Mapping):
        materials = {m.name: m for m in materials}
    area, sx, sy, mxx, myy, mxy = _polygon_moments(body.polygon)
    if abs(area) < 1e-300:
        raise ValueError(f"body {body.id!r} has zero polygon area")
    sign = 1.0 if area > 0 else -1.0
    areal_density = 0.0
    for layer in body.layers:
        mat = materials[layer.material]
        thickness = mat.thickness if layer.thickness is None else layer.thickness
        areal_density += mat.density * thickness

    lamina_mass = areal_density * abs(area)
    # second moments about the origin, lamina only
    s = areal_density * sign
    first = np.array([s * sx, s * sy, 0.0])
    inertia_o = np.zeros((3, 3))
    inertia_o[0, 0] = s * myy
    inertia_o[1, 1] = s * mxx
    inertia_o[2, 2] = s * (mxx + myy)
    inertia_o[0, 1] = inertia_o[1, 0] = -s * mxy

    total_mass = lamina_mass
    for pm in body.point_masses:
        p = np.asarray(pm.position, dtype=float)
        total_mass += pm.mass
        first += pm.mass * p
        inertia_o += pm.mass * (p @ p * np.eye(3) - np.outer(p, p))
    if total_mass <= 0:
        raise ValueError(f"body {body.id!r} has no mass")
    com = first / total_mass
    inertia = inertia_o - total_mass * (com @ com * np.eye(3) - np.outer(com, com))
    inertia = 0.5 * (inertia + inertia.T)
    return MassProperties(total_mass, com, inertia)
