"""Hinge stiffness/damping identification from oscillation recordings.

Pipeline: per-body quaternions -> relative quaternion -> signed, unwrapped joint
angle -> trigonometric-series smoothing with analytic derivatives -> linear least
squares on the pendulum equation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from .errors import DegenerateAxisError, RankError, SpectrumError
from .hinge_models import QuadraticModel, SurfaceFit, fit_quadratic_surface

AXIS_ANGLE_MIN = 1e-3  # rad; below this the rotation axis is not trusted
MAX_GAP = 5  # samples bridged by interpolation
DEFAULT_ORDER = 8
PEAK_RATIO = 3.0
RATE_TOLERANCE = 0.01


# -- quaternions (w, x, y, z), Hamilton convention ---------------------------------


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not n > 0:
            raise ValueError("zero quaternion")
        for name in "wxyz":
            object.__setattr__(self, name, float(getattr(self, name)) / n)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        u = np.asarray(axis, dtype=float)
        u = u / np.linalg.norm(u)
        s = np.sin(0.5 * angle)
        return cls(np.cos(0.5 * angle), *(s * u))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(*quat_multiply(self.as_array(), other.as_array()))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.as_array())

    def axis_angle(self) -> tuple[np.ndarray, float]:
        axes, angles = axis_angle(self.as_array()[None, :])
        return axes[0], float(angles[0])


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product on (..., 4) arrays."""
    pw, px, py, pz = np.moveaxis(np.asarray(p, dtype=float), -1, 0)
    qw, qx, qy, qz = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix, branch chosen on the largest diagonal term."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = quat_normalize(np.array(q))
    return q if q[0] >= 0 else -q


def relative_quaternion(qi: Quaternion, qi1: Quaternion) -> Quaternion:
    """Rotation taking frame i to frame i+1: qi1 * conj(qi)."""
    return qi1 * qi.conjugate()


def axis_angle(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axis (n, 3) and non-negative angle (n,) in [0, 2π] of quaternions (n, 4)."""
    q = quat_normalize(np.atleast_2d(q))
    v = q[:, 1:]
    s = np.linalg.norm(v, axis=1)
    angle = 2.0 * np.arctan2(s, q[:, 0])
    axes = np.zeros_like(v)
    ok = s > 0
    axes[ok] = v[ok] / s[ok, None]
    return axes, angle


# -- recordings ----------------------------------------------------------------------


@dataclass
class MocapRecording:
    rate: float  # Hz
    t: np.ndarray  # (n,)
    quaternions: dict  # body id -> (n, 4), NaN rows where missing

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if not self.rate > 0:
            raise ValueError("rate must be > 0")
        if len(self.t) > 1:
            dt = np.diff(self.t)
            if np.any(np.abs(dt * self.rate - 1.0) > RATE_TOLERANCE):
                raise ValueError(f"timestamps are not consistent with {self.rate:g} Hz within 1%")
        clean = {}
        for body, q in self.quaternions.items():
            q = np.array(q, dtype=float).reshape(len(self.t), 4)
            present = ~np.any(np.isnan(q), axis=1)
            norms = np.linalg.norm(q[present], axis=1)
            if np.any(norms == 0):
                raise ValueError(f"zero quaternion for body {body!r}")
            q[present] = q[present] / norms[:, None]
            clean[body] = q
        self.quaternions = clean

    @property
    def bodies(self) -> list[str]:
        return list(self.quaternions)

    def missing(self, body: str) -> np.ndarray:
        return np.any(np.isnan(self.quaternions[body]), axis=1)


def read_mocap_csv(path, rate: float | None = None) -> MocapRecording:
    """Read ``t,<body>_qw,<body>_qx,<body>_qy,<body>_qz,...``; blank cells are missing samples."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0].strip() != "t":
        raise ValueError("mocap CSV must start with a 't' column")
    header = [h.strip() for h in rows[0]]
    bodies: list[str] = []
    for name in header[1:]:
        body, _, comp = name.rpartition("_")
        if comp not in ("qw", "qx", "qy", "qz") or not body:
            raise ValueError(f"unexpected mocap column {name!r}")
        if body not in bodies:
            bodies.append(body)
    data = np.array(
        [[float(c) if c.strip() else np.nan for c in row] for row in rows[1:] if row], dtype=float
    ).reshape(-1, len(header))
    t = data[:, 0]
    if rate is None:
        if len(t) < 2:
            raise ValueError("cannot infer a rate from fewer than two samples")
        rate = 1.0 / float(np.median(np.diff(t)))
    quats = {}
    for body in bodies:
        cols = [header.index(f"{body}_{c}") for c in ("qw", "qx", "qy", "qz")]
        q = data[:, cols]
        q[np.any(np.isnan(q), axis=1)] = np.nan
        quats[body] = q
    return MocapRecording(rate, t, quats)


def write_mocap_csv(rec: MocapRecording, path) -> None:
    header = ["t"] + [f"{b}_{c}" for b in rec.bodies for c in ("qw", "qx", "qy", "qz")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for i, t in enumerate(rec.t):
            row = [repr(float(t))]
            for b in rec.bodies:
                q = rec.quaternions[b][i]
                row += ["" if np.isnan(v) else repr(float(v)) for v in q]
            out.writerow(row)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, stop) index runs where mask is True."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]))


def _fill_gaps(q: np.ndarray, max_gap: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bridge short gaps by component-wise interpolation on a sign-consistent hemisphere.

    Returns (filled quaternions, interpolated mask, still-missing mask).
    """
    q = q.copy()
    missing = np.any(np.isnan(q), axis=1)
    present = np.nonzero(~missing)[0]
    # hemisphere continuity so interpolation never crosses q -> -q
    for a, b in zip(present[:-1], present[1:]):
        if q[b] @ q[a] < 0:
            q[b] = -q[b]
    interpolated = np.zeros(len(q), dtype=bool)
    for start, stop in _runs(missing):
        if start == 0 or stop == len(q) or stop - start > max_gap:
            continue
        a, b = start - 1, stop
        for i in range(start, stop):
            s = (i - a) / (b - a)
            q[i] = (1.0 - s) * q[a] + s * q[b]
        q[start:stop] = quat_normalize(q[start:stop])
        interpolated[start:stop] = True
    return q, interpolated, missing & ~interpolated


@dataclass
class AngleSeries:
    t: np.ndarray
    theta: np.ndarray
    axis: np.ndarray  # reference unit axis defining the positive sense
    interpolated: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.t.shape != self.theta.shape:
            raise ValueError("t and theta must have the same length")
        if self.interpolated is None:
            self.interpolated = np.zeros(len(self.t), dtype=bool)

    def __len__(self) -> int:
        return len(self.t)


def _signed_angles(q_rel: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    axes, angles = axis_angle(q_rel)
    defined = np.nonzero(angles > AXIS_ANGLE_MIN)[0]
    if len(defined) == 0:
        raise DegenerateAxisError("relative rotation stays below 1e-3 rad; axis undefined")
    ref = axes[defined[0]].copy()
    flip = axes @ ref < 0
    signed = np.where(flip, -angles, angles)
    return np.unwrap(signed), ref


def signed_angle_segments(
    rec: MocapRecording, parent: str, child: str, max_gap: int = MAX_GAP
) -> list[AngleSeries]:
    """Signed joint angle per contiguous segment; gaps longer than ``max_gap`` split the series."""
    for body in (parent, child):
        if body not in rec.quaternions:
            raise KeyError(f"body {body!r} not in recording")
    qp, ip, mp = _fill_gaps(rec.quaternions[parent], max_gap)
    qc, ic, mc = _fill_gaps(rec.quaternions[child], max_gap)
    usable = ~(mp | mc)
    q_rel = np.full((len(rec.t), 4), np.nan)
    q_rel[usable] = quat_normalize(quat_multiply(qc[usable], quat_conjugate(qp[usable])))
    runs = _runs(usable)
    if not runs:
        raise ValueError("no usable samples")
    # one reference axis for the whole recording keeps the sign convention consistent
    _, ref = _signed_angles(q_rel[usable])
    out = []
    for start, stop in runs:
        axes, angles = axis_angle(q_rel[start:stop])
        signed = np.where(axes @ ref < 0, -angles, angles)
        out.append(AngleSeries(rec.t[start:stop], np.unwrap(signed), ref, (ip | ic)[start:stop]))
    return out


def signed_angle_series(rec: MocapRecording, parent: str, child: str, max_gap: int = MAX_GAP) -> AngleSeries:
    """Continuous signed angle of ``child`` relative to ``parent``.

    If long dropouts split the recording, the longest segment is returned with a warning.
    """
    segments = signed_angle_segments(rec, parent, child, max_gap)
    if len(segments) > 1:
        warnings.warn(f"recording split into {len(segments)} segments by long gaps; using the longest",
                      stacklevel=2)
    return max(segments, key=len)


# -- trigonometric series -----------------------------------------------------------


@dataclass(frozen=True)
class FourierFit:
    """θ(t) = a0 + e^{-σ(t - t0)} Σ_k [a_k cos(2πk f t) + b_k sin(2πk f t)].

    ``decay`` σ is zero for a plain periodic series.
    """

    fundamental: float  # Hz
    a0: float
    a: np.ndarray
    b: np.ndarray
    decay: float = 0.0  # 1/s
    t0: float = 0.0
    rms: float = 0.0

    @property
    def order(self) -> int:
        return len(self.a)

    def __call__(self, t) -> np.ndarray:
        return fs_derivatives(self, t)[0]


def _basis(t, f, sigma, t0, order):
    t = np.asarray(t, dtype=float)
    env = np.exp(-sigma * (t - t0))
    cols = [np.ones_like(t)]
    for k in range(1, order + 1):
        ph = 2.0 * np.pi * k * f * t
        cols += [env * np.cos(ph), env * np.sin(ph)]
    return np.column_stack(cols)


def _linear_coefficients(t, y, f, sigma, t0, order):
    B = _basis(t, f, sigma, t0, order)
    c, *_ = np.linalg.lstsq(B, y, rcond=None)
    return c, y - B @ c


def estimate_fundamental(t, y) -> float:
    """Dominant spectral peak of the detrended series, refined by a 3-point parabola."""
    t = np.asarray(t, dtype=float)
    raw = np.asarray(y, dtype=float)
    y = signal.detrend(raw)
    dt = float(np.median(np.diff(t)))
    if np.max(np.abs(y), initial=0.0) <= 1e-12 * max(np.max(np.abs(raw), initial=0.0), 1e-300):
        raise SpectrumError("series is constant up to rounding; nothing oscillates")
    mag = np.abs(np.fft.rfft(y))
    if len(mag) < 3:
        raise SpectrumError("series too short for a spectrum")
    body = mag[1:]
    i = int(np.argmax(body)) + 1
    if not mag[i] > PEAK_RATIO * float(np.median(body)):
        raise SpectrumError("no spectral peak exceeds 3x the median magnitude")
    shift = 0.0
    if 1 <= i < len(mag) - 1:
        l, c, r = mag[i - 1], mag[i], mag[i + 1]
        den = l - 2.0 * c + r
        if den != 0:
            shift = 0.5 * (l - r) / den
    return (i + shift) / (len(y) * dt)


def fourier_fit(series: AngleSeries, order: int = DEFAULT_ORDER, *, decay: bool = True) -> FourierFit:
    """Least-squares trigonometric series at the spectral fundamental.

    The fundamental (and, with ``decay``, an exponential envelope rate) is then
    refined by variable projection: the linear coefficients are re-solved inside a
    nonlinear least-squares search over (f, σ). The refinement is skipped when the
    periodic fit is already exact, and kept only if it lowers the residual.
    """
    t = np.asarray(series.t, dtype=float)
    y = np.asarray(series.theta, dtype=float)
    if order < 1:
        raise ValueError("order must be >= 1")
    if len(t) < 2 * order + 2:
        raise ValueError(f"need at least {2 * order + 2} samples for order {order}")
    f0 = estimate_fundamental(t, y)
    duration = t[-1] - t[0]
    if duration * f0 < 2.0:
        raise ValueError("series must span at least two fundamental periods")
    t0 = float(t[0])
    c, r = _linear_coefficients(t, y, f0, 0.0, t0, order)
    f, sigma = f0, 0.0
    scale = max(float(np.std(y)), 1e-300)
    if np.sqrt(np.mean(r**2)) > 1e-10 * scale:

        def residual(p):
            return _linear_coefficients(t, y, p[0], p[1] if decay else 0.0, t0, order)[1] / scale

        df = 0.5 / max(duration, 1e-12)
        sol = optimize.least_squares(
            residual,
            x0=[f0, 0.0],
            bounds=([max(f0 - df, 1e-12), -50.0 if decay else -1e-12], [f0 + df, 50.0 if decay else 1e-12]),
            x_scale=[df, 1.0],
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=200,
        )
        c_new, r_new = _linear_coefficients(t, y, sol.x[0], sol.x[1] if decay else 0.0, t0, order)
        if np.sum(r_new**2) < np.sum(r**2):
            f, sigma, c, r = float(sol.x[0]), float(sol.x[1]) if decay else 0.0, c_new, r_new
    return FourierFit(
        fundamental=float(f),
        a0=float(c[0]),
        a=np.array(c[1::2]),
        b=np.array(c[2::2]),
        decay=float(sigma),
        t0=t0,
        rms=float(np.sqrt(np.mean(r**2))),
    )


def fs_derivatives(fit: FourierFit, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """θ, θ̇, θ̈ of the fitted series, differentiated term by term."""
    t = np.asarray(t, dtype=float)
    env = np.exp(-fit.decay * (t - fit.t0))
    sig = fit.decay
    out = [np.full_like(t, fit.a0), np.zeros_like(t), np.zeros_like(t)]
    for k in range(1, fit.order + 1):
        w = 2.0 * np.pi * k * fit.fundamental
        cos, sin = np.cos(w * t), np.sin(w * t)
        A, B = fit.a[k - 1], fit.b[k - 1]
        for n in range(3):
            out[n] = out[n] + env * (A * cos + B * sin)
            # d/dt of e^{-σt}(A cos + B sin) keeps the same form
            A, B = -sig * A + w * B, -sig * B - w * A
    return out[0], out[1], out[2]


# -- least squares on the pendulum equation ------------------------------------------


@dataclass(frozen=True)
class PendulumProperties:
    inertia_com: float  # kg·m², about the COM, parallel to the hinge
    mass: float  # kg
    lever: float  # m, hinge axis to COM distance

    @property
    def inertia_hinge(self) -> float:
        return self.inertia_com + self.mass * self.lever**2


@dataclass(frozen=True)
class KBEstimate:
    k: float
    b: float
    rms: float
    n_samples: int


def identify_kb(theta, thetadot, thetaddot, props: PendulumProperties, g: float = 9.81) -> KBEstimate:
    """Fit k, b in (I_G + m r²)θ̈ = -kθ - bθ̇ - m g r sin θ by linear least squares."""
    theta = np.asarray(theta, dtype=float)
    thetadot = np.asarray(thetadot, dtype=float)
    thetaddot = np.asarray(thetaddot, dtype=float)
    if not (len(theta) == len(thetadot) == len(thetaddot)) or len(theta) == 0:
        raise ValueError("theta, thetadot and thetaddot must be non-empty and of equal length")
    if not (np.var(theta) > 0 and np.var(thetadot) > 0):
        raise RankError("no excitation: theta or thetadot is constant")
    y = -props.inertia_hinge * thetaddot - props.mass * g * props.lever * np.sin(theta)
    X = np.column_stack([theta, thetadot])
    scale = np.linalg.norm(X, axis=0)
    Xs = X / scale
    sol, _, rank, sv = np.linalg.lstsq(Xs, y, rcond=None)
    if rank < 2 or sv[-1] < 1e-8 * sv[0]:
        raise RankError("theta and thetadot columns are collinear")
    k, b = sol / scale
    rms = float(np.sqrt(np.mean((X @ np.array([k, b]) - y) ** 2)))
    return KBEstimate(float(k), float(b), rms, len(theta))


@dataclass(frozen=True)
class AirDampingFit:
    total: QuadraticModel  # b(a) as measured
    air: QuadraticModel  # b(a) - b_m
    material_damping: float
    fit: SurfaceFit

    def formula(self) -> str:
        c1, c2 = self.total.terms["a"]
        return f"b = {c2:.6g} × a² {'+' if c1 >= 0 else '−'} {abs(c1):.6g} × a + {self.total.constant:.6g}"


def split_air_damping(areas: Sequence[float], damping: Sequence[float], material_damping: float = 0.0) -> AirDampingFit:
    """Quadratic b(a) over body cross-sectional area, split as b = b_m + b_a."""
    if len(areas) != len(damping):
        raise ValueError("areas and damping must have equal length")
    fit = fit_quadratic_surface([(a, b) for a, b in zip(areas, damping)], ["a"])
    total = fit.as_model()
    air = QuadraticModel(total.constant - material_damping, dict(total.terms))
    return AirDampingFit(total, air, float(material_damping), fit)


# -- bridges to the simulator --------------------------------------------------------


def pendulum_properties(mech, joint_id: str) -> PendulumProperties:
    """I_G, m and r for the body hanging from ``joint_id`` (its child), from mechanism geometry."""
    from .mechanism import compute_mass_properties

    joint = mech.joint(joint_id)
    mp = compute_mass_properties(mech.body(joint.child), mech.material_table)
    u = joint.axis_direction
    d = mp.com - np.asarray(joint.axis_p1, dtype=float)
    radial = d - (d @ u) * u
    return PendulumProperties(float(u @ mp.inertia @ u), float(mp.mass), float(np.linalg.norm(radial)))


def recording_from_trajectory(tree, mech, traj, rate: float, bodies: Sequence[str] | None = None) -> MocapRecording:
    """Sample body orientations of a simulated run as a mocap recording at ``rate`` Hz."""
    from .kinematics import forward_kinematics

    sim_dt = float(np.median(np.diff(traj.t)))
    stride = int(round(1.0 / (rate * sim_dt)))
    if stride < 1 or abs(stride * sim_dt * rate - 1.0) > 1e-9:
        raise ValueError(f"rate {rate:g} Hz is not an integer divisor of the simulation rate")
    idx = np.arange(0, len(traj), stride)
    bodies = list(bodies) if bodies is not None else [b.id for b in mech.bodies]
    quats = {b: np.empty((len(idx), 4)) for b in bodies}
    for row, i in enumerate(idx):
        placements = forward_kinematics(tree, mech, traj.q[i])
        for b in bodies:
            quats[b][row] = matrix_to_quat(placements[b].rotation)
    return MocapRecording(rate, traj.t[idx], quats)


@dataclass(frozen=True)
class IdentificationResult:
    estimate: KBEstimate
    fit: FourierFit
    series: AngleSeries

    def as_dict(self) -> dict:
        return {
            "k": self.estimate.k,
            "b": self.estimate.b,
            "rms": self.estimate.rms,
            "n_samples": self.estimate.n_samples,
            "fundamental_hz": self.fit.fundamental,
        }


def identify_from_recording(
    rec: MocapRecording,
    parent: str,
    child: str,
    props: PendulumProperties,
    *,
    order: int = DEFAULT_ORDER,
    g: float = 9.81,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> IdentificationResult:
    """Full pipeline; ``noise`` adds white noise (rad) to the extracted angle for robustness studies."""
    series = signed_angle_series(rec, parent, child)
    if noise > 0:
        rng = np.random.default_rng() if rng is None else rng
        series = AngleSeries(series.t, series.theta + rng.normal(0.0, noise, len(series)), series.axis,
                             series.interpolated)
    fit = fourier_fit(series, order)
    th, thd, thdd = fs_derivatives(fit, series.t)
    return IdentificationResult(identify_kb(th, thd, thdd, props, g), fit, series)
