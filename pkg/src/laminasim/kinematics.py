"""Kinematic tree, loop cutting with a dummy body, and forward kinematics."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import TopologyError
from .mechanism import MechanismSpec, check_topology, compute_mass_properties

DUMMY_SUFFIX = "~dummy"
MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True)
class TreeEdge:
    parent: str
    child: str
    joint: str
    sign: float  # +1 when parent/child match the joint's own parent/child


@dataclass(frozen=True)
class CutEdge:
    joint: str
    original: str
    dummy: str


@dataclass(frozen=True)
class FramePlacement:
    rotation: np.ndarray
    origin: np.ndarray

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.origin


@dataclass(frozen=True)
class LoopConstraintPoints:
    points: np.ndarray  # (3, 3), body-local (flat-state) coordinates

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.shape != (3, 3):
            raise ValueError("exactly three 3-D constraint points are required")
        if triangle_area(*pts) <= MIN_TRIANGLE_AREA:
            raise ValueError("constraint points are co-linear")
        object.__setattr__(self, "points", pts)


def triangle_area(a, b, c) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(np.subtract(b, a), np.subtract(c, a))))


def select_constraint_points(polygon) -> LoopConstraintPoints:
    """Vertex triple of maximum triangle area on a flat polygon."""
    verts = [np.array([x, y, 0.0]) for x, y in polygon]
    best = max(itertools.combinations(verts, 3), key=lambda tri: triangle_area(*tri))
    return LoopConstraintPoints(np.array(best))


@dataclass(frozen=True)
class KinematicTree:
    root: str
    bodies: tuple[str, ...]  # topological order, root first, dummy (if any) included
    edges: tuple[TreeEdge, ...]
    cut_edge: CutEdge | None
    coordinate_index: dict
    mass_properties: dict  # body id -> MassProperties (split bodies carry half)
    loop_points: LoopConstraintPoints | None
    model: _kernels.Model

    @property
    def n_coordinates(self) -> int:
        return len(self.coordinate_index)

    def body_index(self, body_id: str) -> int:
        return self.bodies.index(body_id)

    def source_body(self, body_id: str) -> str:
        """Original mechanism body a tree body stands for (dummy -> split body)."""
        if self.cut_edge is not None and body_id == self.cut_edge.dummy:
            return self.cut_edge.original
        return body_id


def build_tree(mech: MechanismSpec) -> KinematicTree:
    """Breadth-first spanning tree from the Newtonian body, cutting the single loop if present.

    The non-tree joint met during the search is cut; its later-discovered end body is
    duplicated into a dummy attached at the cut joint, and both copies carry half the
    original mass and inertia.
    """
    cycles = check_topology(mech.bodies, mech.joints)
    if cycles > 1:
        raise TopologyError("more than one loop")

    incident: dict[str, list] = {b.id: [] for b in mech.bodies}
    for joint in mech.joints:
        incident[joint.parent].append(joint)
        incident[joint.child].append(joint)

    root = mech.newtonian.id
    order = [root]
    discovered = {root: 0}
    edges: list[TreeEdge] = []
    used = set()
    cut_joint = None
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for joint in incident[node]:
            if joint.id in used:
                continue
            other = joint.child if joint.parent == node else joint.parent
            used.add(joint.id)
            if other not in discovered:
                discovered[other] = len(order)
                order.append(other)
                queue.append(other)
                sign = 1.0 if joint.child == other else -1.0
                edges.append(TreeEdge(node, other, joint.id, sign))
            else:
                cut_joint = joint

    materials = mech.material_table
    mass_props = {b.id: compute_mass_properties(b, materials) for b in mech.bodies}

    cut_edge = None
    loop_points = None
    if cut_joint is not None:
        a, b = cut_joint.parent, cut_joint.child
        original = a if discovered[a] > discovered[b] else b
        attach = b if original == a else a
        dummy = original + DUMMY_SUFFIX
        cut_edge = CutEdge(cut_joint.id, original, dummy)
        sign = 1.0 if cut_joint.child == original else -1.0
        edges.append(TreeEdge(attach, dummy, cut_joint.id, sign))
        order.append(dummy)
        half = mass_props[original].scaled(0.5)
        mass_props[original] = half
        mass_props[dummy] = half
        loop_points = select_constraint_points(mech.body(original).polygon)

    coordinate_index = {j.id: i for i, j in enumerate(mech.joints)}
    model = _compile_model(mech, order, edges, cut_edge, coordinate_index, mass_props, loop_points)
    return KinematicTree(
        root=root,
        bodies=tuple(order),
        edges=tuple(edges),
        cut_edge=cut_edge,
        coordinate_index=coordinate_index,
        mass_properties=mass_props,
        loop_points=loop_points,
        model=model,
    )


def _compile_model(mech, order, edges, cut_edge, coordinate_index, mass_props, loop_points):
    nb = len(order)
    n = len(mech.joints)
    index = {body: i for i, body in enumerate(order)}
    parent = np.full(nb, -1, dtype=np.int64)
    coord = np.full(nb, -1, dtype=np.int64)
    sign = np.zeros(nb)
    axis_u = np.zeros((nb, 3))
    axis_p = np.zeros((nb, 3))
    for edge in edges:
        i = index[edge.child]
        joint = mech.joint(edge.joint)
        parent[i] = index[edge.parent]
        coord[i] = coordinate_index[edge.joint]
        sign[i] = edge.sign
        axis_u[i] = joint.axis_direction
        axis_p[i] = joint.axis_p1
    mass = np.array([mass_props[b].mass for b in order])
    com = np.array([mass_props[b].com for b in order])
    inertia = np.array([mass_props[b].inertia for b in order])

    width = max([1] + [len(j.external_torque) for j in mech.joints])
    sched_t = np.full((n, width), np.inf)
    sched_v = np.zeros((n, width))
    for j in mech.joints:
        i = coordinate_index[j.id]
        for k, (start, tau) in enumerate(j.external_torque):
            sched_t[i, k] = start
            sched_v[i, k] = tau
    hold = np.array([j.hold_torque() for j in mech.joints], dtype=float)

    if cut_edge is None:
        loop_orig = loop_dummy = -1
        pts = np.zeros((3, 3))
    else:
        loop_orig, loop_dummy = index[cut_edge.original], index[cut_edge.dummy]
        pts = loop_points.points.copy()
    return _kernels.Model(
        parent=parent,
        coord=coord,
        sign=sign,
        axis_u=axis_u,
        axis_p=axis_p,
        mass=mass,
        com=com,
        inertia=inertia,
        stiffness=np.array([j.stiffness for j in mech.joints], dtype=float),
        damping=np.array([j.damping for j in mech.joints], dtype=float),
        rest=np.array([j.rest_angle for j in mech.joints], dtype=float),
        gravity=np.asarray(mech.gravity, dtype=float),
        loop_orig=loop_orig,
        loop_dummy=loop_dummy,
        loop_points=pts,
        sched_t=sched_t,
        sched_v=sched_v,
        hold=hold,
    )


def _coords(tree: KinematicTree, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (tree.n_coordinates,):
        raise ValueError(f"expected {tree.n_coordinates} coordinates, got shape {q.shape}")
    return q


def forward_kinematics(tree: KinematicTree, mech: MechanismSpec, q) -> dict[str, FramePlacement]:
    """Placement of every tree body (dummy included) at joint angles ``q``."""
    q = _coords(tree, q)
    m = tree.model
    R, o, *_ = _kernels.kinematics(q, np.zeros_like(q), m.parent, m.coord, m.sign, m.axis_u, m.axis_p)
    return {body: FramePlacement(R[i].copy(), o[i].copy()) for i, body in enumerate(tree.bodies)}


def point_velocity(tree: KinematicTree, mech: MechanismSpec, q, qdot, body_id: str, local_point) -> np.ndarray:
    """World velocity of a point fixed on ``body_id`` (given in flat-state coordinates)."""
    q = _coords(tree, q)
    qdot = _coords(tree, qdot)
    m = tree.model
    x = np.zeros(3)
    x[: len(local_point)] = local_point
    return _kernels.point_velocity(q, qdot, tree.body_index(body_id), x, m.parent, m.coord, m.sign,
                                   m.axis_u, m.axis_p)


def body_polygons(tree: KinematicTree, mech: MechanismSpec, q) -> dict[str, np.ndarray]:
    """World-frame polygon vertices of each mechanism body (split bodies drawn from the original copy)."""
    placements = forward_kinematics(tree, mech, q)
    out = {}
    for body in mech.bodies:
        flat = np.array([[x, y, 0.0] for x, y in body.polygon])
        out[body.id] = placements[body.id].apply(flat)
    return out
