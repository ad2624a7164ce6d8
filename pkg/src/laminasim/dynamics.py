"""Equations of motion (Kane's method in joint coordinates), RK4 stepping and the two-phase run."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constraints import BaumgarteParams, ConstraintSystem, build_constraints, stabilized_acceleration_rhs
from .errors import BurnInFailedError, NumericalBlowupError, SingularMassError
from .kinematics import KinematicTree, build_tree
from .mechanism import MechanismSpec

MAX_MASS_CONDITION = 1e12


@dataclass(frozen=True)
class DynamicState:
    t: float
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qdot = np.asarray(self.qdot, dtype=float)
        if q.shape != qdot.shape or q.ndim != 1:
            raise ValueError("q and qdot must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot)) and np.isfinite(self.t)):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 1e-4
    burn_in_steps: int = 300
    production_duration: float = 1.0
    baumgarte: BaumgarteParams = field(default_factory=BaumgarteParams)
    constraint_tolerance: float = 1e-6
    hold_torques_during_burn_in: bool = True
    burn_in_dt: float | None = None  # None: same step as production

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.burn_in_dt is not None and not self.burn_in_dt > 0:
            raise ValueError("burn_in_dt must be > 0")
        if self.burn_in_steps < 0:
            raise ValueError("burn_in_steps must be >= 0")
        if not self.constraint_tolerance > 0:
            raise ValueError("constraint_tolerance must be > 0")
        if self.production_duration < 0:
            raise ValueError("production_duration must be >= 0")

    @property
    def effective_burn_in_dt(self) -> float:
        return self.dt if self.burn_in_dt is None else self.burn_in_dt

    @property
    def production_steps(self) -> int:
        return int(round(self.production_duration / self.dt))

    @classmethod
    def from_mechanism(cls, mech: MechanismSpec, **overrides) -> "SimulationConfig":
        """Defaults, then the mechanism file's ``simulation`` block, then non-None overrides."""
        hints = mech.simulation
        values = {
            "dt": hints.dt,
            "burn_in_dt": hints.burn_in_dt,
            "burn_in_steps": hints.burn_in_steps,
            "production_duration": hints.duration,
            "constraint_tolerance": hints.constraint_tolerance,
            "alpha": hints.alpha,
            "beta": hints.beta,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        alpha = values.pop("alpha")
        beta = values.pop("beta")
        baumgarte = BaumgarteParams(
            alpha=BaumgarteParams.alpha if alpha is None else alpha,
            beta=BaumgarteParams.beta if beta is None else beta,
        )
        return cls(baumgarte=baumgarte, **{k: v for k, v in values.items() if v is not None})


@dataclass
class Trajectory:
    joint_ids: tuple[str, ...]
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    constraint_error: np.ndarray
    kinetic: np.ndarray
    potential: np.ndarray

    @classmethod
    def empty(cls, joint_ids) -> "Trajectory":
        n = len(joint_ids)
        z = np.zeros(0)
        return cls(tuple(joint_ids), z, np.zeros((0, n)), np.zeros((0, n)), z.copy(), z.copy(), z.copy())

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> DynamicState:
        return DynamicState(float(self.t[i]), self.q[i].copy(), self.qdot[i].copy())

    @property
    def samples(self):
        return [
            (self.state(i), float(self.constraint_error[i]), float(self.kinetic[i]), float(self.potential[i]))
            for i in range(len(self))
        ]

    @property
    def total_energy(self) -> np.ndarray:
        return self.kinetic + self.potential

    @property
    def final(self) -> DynamicState:
        return self.state(len(self) - 1)

    def header(self) -> list[str]:
        return (
            ["t"]
            + [f"q_{j}" for j in self.joint_ids]
            + [f"qd_{j}" for j in self.joint_ids]
            + ["constraint_err", "ke", "pe"]
        )

    def to_csv(self) -> str:
        n, width = len(self), len(self.joint_ids)
        table = np.hstack([
            self.t.reshape(n, 1), self.q.reshape(n, width), self.qdot.reshape(n, width),
            self.constraint_error.reshape(n, 1), self.kinetic.reshape(n, 1), self.potential.reshape(n, 1),
        ])
        buf = io.StringIO()
        np.savetxt(buf, table, fmt="%.17g", delimiter=",", header=",".join(self.header()), comments="")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


@dataclass(frozen=True)
class EquationsOfMotion:
    mass_matrix: np.ndarray
    rhs: np.ndarray
    qddot: np.ndarray
    constraint_matrix: np.ndarray | None = None
    constraint_rhs: np.ndarray | None = None


def _tree(mech: MechanismSpec, tree: KinematicTree | None) -> KinematicTree:
    return build_tree(mech) if tree is None else tree


def external_torques(mech: MechanismSpec, t: float) -> np.ndarray:
    return np.array([j.torque_at(t) for j in mech.joints], dtype=float)


def _raw_terms(mech, tree, state, tau_ext=None):
    m = tree.model
    if tau_ext is None:
        tau_ext = external_torques(mech, state.t)
    return _kernels.mass_and_forces(state.q, state.qdot, tau_ext, m.parent, m.coord, m.sign, m.axis_u,
                                    m.axis_p, m.mass, m.com, m.inertia, m.stiffness, m.damping, m.rest,
                                    m.gravity)


def generalized_forces(mech: MechanismSpec, tree: KinematicTree | None, state: DynamicState) -> np.ndarray:
    """Joint springs, dampers, scheduled external torques and gravity projected on the coordinates."""
    tree = _tree(mech, tree)
    _, f_active, _ = _raw_terms(mech, tree, state)
    return f_active


def check_mass_matrix(M: np.ndarray) -> None:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_MASS_CONDITION:
        raise SingularMassError(f"mass matrix condition number {cond:.3e} exceeds {MAX_MASS_CONDITION:.0e}")


def assemble_eom(
    mech: MechanismSpec,
    tree: KinematicTree | None,
    cs: ConstraintSystem | None,
    params: BaumgarteParams | None,
    state: DynamicState,
) -> EquationsOfMotion:
    """Mass matrix, right-hand side and q̈, solving the constrained block system when ``cs`` is given."""
    tree = _tree(mech, tree)
    M, f_active, f_inertial = _raw_terms(mech, tree, state)
    check_mass_matrix(M)
    f = f_active + f_inertial
    if cs is None:
        return EquationsOfMotion(M, f, np.linalg.solve(M, f))
    A, b = stabilized_acceleration_rhs(cs, params or BaumgarteParams(), state.q, state.qdot)
    qdd = _kernels.solve_constrained(M, f, np.ascontiguousarray(A), b)
    return EquationsOfMotion(M, f, qdd, A, b)


def energies(mech: MechanismSpec, tree: KinematicTree | None, state: DynamicState) -> tuple[float, float]:
    """Kinetic and potential (gravity + hinge spring) energy in joules."""
    tree = _tree(mech, tree)
    ke, pe = _kernels.energies(state.q, state.qdot, tree.model)
    return float(ke), float(pe)


def _check_finite(q, qd, t):
    x = np.concatenate([q, qd])
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > _kernels.BLOWUP_BOUND:
        raise NumericalBlowupError(f"state blew up at t = {t:.6g} s")


def step(
    state: DynamicState,
    config: SimulationConfig,
    tree: KinematicTree,
    *,
    baumgarte: bool | None = None,
    dt: float | None = None,
) -> DynamicState:
    """One fixed-step RK4 step. Loop constraints are enforced whenever the tree has a cut edge."""
    h = config.dt if dt is None else dt
    enabled = config.baumgarte.enabled if baumgarte is None else baumgarte
    q, qd = _kernels.rk4_step(state.t, state.q, state.qdot, h, tree.model, config.baumgarte.alpha,
                              config.baumgarte.beta, enabled, True, False)
    _check_finite(q, qd, state.t + h)
    return DynamicState(state.t + h, q, qd)


def _run(tree, q0, qd0, t0, dt, nsteps, *, baumgarte, alpha, beta, use_hold, model=None):
    model = tree.model if model is None else model
    T, Q, QD, err, ke, pe, n, failed = _kernels.integrate(
        np.asarray(q0, dtype=float), np.asarray(qd0, dtype=float), float(t0), float(dt), int(nsteps),
        model, float(alpha), float(beta), bool(baumgarte), True, bool(use_hold),
    )
    joint_ids = tuple(sorted(tree.coordinate_index, key=tree.coordinate_index.get))
    traj = Trajectory(joint_ids, T[:n], Q[:n], QD[:n], err[:n], ke[:n], pe[:n])
    if failed:
        raise NumericalBlowupError(f"state blew up at t = {t0 + n * dt:.6g} s")
    return traj


def initial_coordinates(mech: MechanismSpec) -> np.ndarray:
    return np.array([0.0 if j.initial_angle_guess is None else j.initial_angle_guess for j in mech.joints])


def burn_in(mech: MechanismSpec, config: SimulationConfig, tree: KinematicTree | None = None) -> Trajectory:
    """Phase 1: Baumgarte-stabilized run from the rough guess, ending at t = 0."""
    tree = _tree(mech, tree)
    joint_ids = tuple(j.id for j in mech.joints)
    if tree.cut_edge is None or config.burn_in_steps == 0:
        return Trajectory.empty(joint_ids)
    q0 = initial_coordinates(mech)
    dt_b = config.effective_burn_in_dt
    model = tree.model
    if not config.hold_torques_during_burn_in:
        model = model._replace(hold=np.zeros_like(model.hold))
    return _run(tree, q0, np.zeros_like(q0), -config.burn_in_steps * dt_b, dt_b, config.burn_in_steps,
                baumgarte=True, alpha=config.baumgarte.alpha, beta=config.baumgarte.beta, use_hold=True,
                model=model)


def simulate(
    mech: MechanismSpec, config: SimulationConfig, tree: KinematicTree | None = None
) -> tuple[Trajectory, Trajectory]:
    """Two-phase run: stabilized burn-in to close the loop, then free motion from rest.

    Phase 2 restarts at t = 0 from the burned-in angles with zero rates, Baumgarte
    feedback off (acceleration-level closure only) and the t >= 0 torque schedule.
    """
    tree = _tree(mech, tree)
    q0 = initial_coordinates(mech)
    if tree.cut_edge is not None and all(j.initial_angle_guess is None for j in mech.joints):
        raise ValueError("closed-loop mechanisms need an initial_angle_guess on at least one joint")
    M, _, _ = _raw_terms(mech, tree, DynamicState(0.0, q0, np.zeros_like(q0)))
    check_mass_matrix(M)

    phase1 = burn_in(mech, config, tree)
    if len(phase1):
        final_error = float(phase1.constraint_error[-1])
        if not final_error < config.constraint_tolerance:
            raise BurnInFailedError(final_error, config.constraint_tolerance, config.burn_in_steps)
        q_start = phase1.q[-1].copy()
    else:
        q_start = q0
    phase2 = _run(tree, q_start, np.zeros_like(q_start), 0.0, config.dt, config.production_steps,
                  baumgarte=False, alpha=config.baumgarte.alpha, beta=config.baumgarte.beta, use_hold=False)
    return phase1, phase2


def constraint_system(tree: KinematicTree) -> ConstraintSystem | None:
    return None if tree.cut_edge is None else build_constraints(tree)
