"""Simulated 4-DOF planar arm above a virtual keyboard.

The arm is the data source for motor babbling and the plant for closed-loop
imitation.  It exposes five modalities per step: joint angles ``q`` (4), a
stereo pair of affine "cameras" looking at the end effector ``v``
(x_L, y_L, x_R, y_R), a binary touch flag ``p``, the key being pressed ``s``
and the commanded joint velocities ``u`` (4).

Everything here is a pure function of an :class:`ArmConfig` and explicit
state values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import io
from .errors import FormatError
from .normalization import Normalization

N_JOINTS = 4
RAW_COLUMNS = (
    "q0", "q1", "q2", "q3",
    "xL", "yL", "xR", "yR",
    "p", "s",
    "u0", "u1", "u2", "u3",
)
Q_COLS = slice(0, 4)
V_COLS = slice(4, 8)
P_COL = 8
S_COL = 9
U_COLS = slice(10, 14)

_HOME = (0.9, -0.7, -0.6, -0.5)
_SPAN = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class ArmConfig:
    link_lengths: tuple = (0.5, 0.4, 0.3, 0.2)
    home: tuple = _HOME
    joint_limits: tuple = tuple((h - _SPAN, h + _SPAN) for h in _HOME)
    dt: float = 0.1
    key_plane_height: float = 0.05
    key_x_range: tuple = (0.2, 1.4)
    num_keys: int = 8
    # camera maps: pixel = A @ e + b
    camera_L: tuple = (((180.0, 15.0), (-10.0, -170.0)), (40.0, 200.0))
    camera_R: tuple = (((175.0, -20.0), (12.0, -165.0)), (-30.0, 195.0))
    babble_amp_max: float = 0.5
    cycle_steps: int = 60
    dls_damping: float = 0.1

    def __post_init__(self):
        if len(self.link_lengths) != N_JOINTS or min(self.link_lengths) <= 0:
            raise ValueError("need 4 positive link lengths")
        if len(self.joint_limits) != N_JOINTS or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("joint limits must be 4 non-degenerate (lo, hi) pairs")
        if self.cycle_steps < 2:
            raise ValueError("cycle_steps must be >= 2")
        if self.num_keys < 1:
            raise ValueError("num_keys must be >= 1")
        aL, aR = self.camera_matrices()
        if abs(np.linalg.det(aL[0])) < 1e-12 or abs(np.linalg.det(aR[0])) < 1e-12:
            raise ValueError("camera maps must be invertible")
        if np.allclose(aL[0], aR[0]) and np.allclose(aL[1], aR[1]):
            raise ValueError("camera maps must be distinct")

    @property
    def omega(self):
        return 1.0 / (self.cycle_steps * self.dt)

    def camera_matrices(self):
        return tuple((np.array(c[0], dtype=float), np.array(c[1], dtype=float))
                     for c in (self.camera_L, self.camera_R))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        def tup(x):
            return tuple(tup(i) for i in x) if isinstance(x, (list, tuple)) else x
        return cls(**{k: tup(v) for k, v in d.items()})


@dataclass(frozen=True)
class ArmState:
    q: np.ndarray
    e: np.ndarray
    p: float
    s: float
    v: np.ndarray

    def raw_row(self, u):
        return np.concatenate([self.q, self.v, [self.p, self.s], u])


def forward_kinematics(q, config: ArmConfig):
    """End-effector position: sum of link vectors at cumulative joint angles."""
    phi = np.cumsum(q)
    lengths = np.asarray(config.link_lengths)
    return np.array([np.sum(lengths * np.cos(phi)), np.sum(lengths * np.sin(phi))])


def jacobian(q, config: ArmConfig):
    phi = np.cumsum(q)
    lengths = np.asarray(config.link_lengths)
    # column j depends on links j..3
    dx = -np.cumsum((lengths * np.sin(phi))[::-1])[::-1]
    dy = np.cumsum((lengths * np.cos(phi))[::-1])[::-1]
    return np.vstack([dx, dy])


def camera(e, config: ArmConfig):
    (aL, bL), (aR, bR) = config.camera_matrices()
    return np.concatenate([aL @ e + bL, aR @ e + bR])


def position_from_camera(v, config: ArmConfig):
    """Recover the 2-D position from the left camera coordinates."""
    aL, bL = config.camera_matrices()[0]
    return np.linalg.solve(aL, np.asarray(v, dtype=float)[:2] - bL)


def key_values(config: ArmConfig):
    """The normalized value of each key, left to right."""
    return (np.arange(config.num_keys) + 1.0) / config.num_keys


def sense_touch_sound(e, config: ArmConfig):
    """Contact flag and pressed-key value for end-effector position ``e``.

    Contact happens at or below the key plane.  The horizontal coordinate is
    quantized into ``num_keys`` equal bins over ``key_x_range`` (positions
    beyond either end press the outermost key) and key ``k`` sounds as
    ``(k + 1) / num_keys``.  Silence is 0.
    """
    if e[1] > config.key_plane_height:
        return 0.0, 0.0
    lo, hi = config.key_x_range
    k = int(np.floor((e[0] - lo) / (hi - lo) * config.num_keys))
    k = min(max(k, 0), config.num_keys - 1)
    return 1.0, float(key_values(config)[k])


def state_from_q(q, config: ArmConfig):
    q = np.asarray(q, dtype=float)
    e = forward_kinematics(q, config)
    p, s = sense_touch_sound(e, config)
    return ArmState(q=q, e=e, p=p, s=s, v=camera(e, config))


def home_state(config: ArmConfig):
    return state_from_q(np.array(config.home, dtype=float), config)


def clamp_joints(q, config: ArmConfig):
    lim = np.asarray(config.joint_limits)
    return np.clip(q, lim[:, 0], lim[:, 1])


def step(state: ArmState, u, config: ArmConfig):
    """Integrate velocity command ``u`` for one ``dt`` with joint-limit clamping."""
    u = np.asarray(u, dtype=float)
    return state_from_q(clamp_joints(state.q + u * config.dt, config), config)


def redundant_pair(config: ArmConfig, q=None):
    """Two distinct joint vectors reaching the same end-effector position.

    The last two links are reflected across the line joining the second joint
    to the end effector ("elbow flip"), which leaves the tip fixed.
    """
    q = np.array(config.home if q is None else q, dtype=float)
    lengths = np.asarray(config.link_lengths)
    phi = np.cumsum(q)
    p2 = np.array([np.sum(lengths[:2] * np.cos(phi[:2])), np.sum(lengths[:2] * np.sin(phi[:2]))])
    tip = forward_kinematics(q, config)
    theta = math.atan2(tip[1] - p2[1], tip[0] - p2[0])
    phi2 = phi.copy()
    phi2[2:] = 2.0 * theta - phi[2:]
    q2 = np.diff(np.concatenate([[0.0], phi2]))
    return q, q2


@dataclass
class BabbleTrace:
    """Raw babbling rows plus the min/max table mapping them into [-1, 1].

    ``rows`` is (N, 14) in :data:`RAW_COLUMNS` order; ``cycle`` holds the
    babbling cycle each row belongs to.
    """

    rows: np.ndarray
    cycle: np.ndarray
    normalization: Normalization = field(default=None)

    def __post_init__(self):
        if self.normalization is None:
            self.normalization = Normalization.fit(self.rows)

    def __len__(self):
        return len(self.rows)

    @property
    def normalized(self):
        return self.normalization.normalize(self.rows)

    def head(self, n):
        return BabbleTrace(self.rows[:n].copy(), self.cycle[:n].copy())


def babble(config: ArmConfig, cycles, seed, start: ArmState | None = None):
    """Random sinusoidal motor babbling.

    Each cycle draws one amplitude per joint from U(-amp, amp) and issues
    ``u_j(k) = alpha_j * sin(2*pi*k / cycle_steps)`` for k = 0..cycle_steps,
    so every cycle starts and ends at zero velocity.  A row stores the state
    reached after issuing the command together with that command.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    rng = np.random.default_rng(seed)
    state = home_state(config) if start is None else start
    phase = np.sin(2.0 * np.pi * np.arange(config.cycle_steps + 1) / config.cycle_steps)
    phase[0] = phase[-1] = 0.0
    amp = config.babble_amp_max
    rows, cyc = [], []
    for c in range(cycles):
        alpha = rng.uniform(-amp, amp, size=N_JOINTS)
        for k in range(config.cycle_steps + 1):
            u = alpha * phase[k]
            state = step(state, u, config)
            rows.append(state.raw_row(u))
            cyc.append(c)
    return BabbleTrace(np.array(rows), np.array(cyc, dtype=np.int64))


def babble_rows(config: ArmConfig, rows, seed):
    """Babble just enough cycles for ``rows`` rows and truncate."""
    per_cycle = config.cycle_steps + 1
    trace = babble(config, max(1, -(-rows // per_cycle)), seed)
    return trace.head(rows)


def ik_oracle_step(q, target_v, config: ArmConfig):
    """Damped-least-squares velocity toward the position seen as ``target_v``.

    ``target_v`` is a raw camera 4-vector; the target position is recovered
    from the left camera.  The step aims to close the gap in one ``dt`` and is
    scaled down uniformly if any joint would exceed the babbling amplitude.
    Returns ``(u, saturated)``.
    """
    q = np.asarray(q, dtype=float)
    target = position_from_camera(target_v, config)
    err = target - forward_kinematics(q, config)
    jac = jacobian(q, config)
    lam2 = config.dls_damping ** 2
    u = jac.T @ np.linalg.solve(jac @ jac.T + lam2 * np.eye(2), err) / config.dt
    peak = np.max(np.abs(u))
    bound = config.babble_amp_max
    saturated = bool(peak > bound)
    if saturated:
        u = u * (bound / peak)
    return u, saturated


def save_trace(path, trace: BabbleTrace, meta=None):
    """Write raw rows plus a ``cycle`` column; the normalization goes in the sidecar."""
    meta = dict(meta or {}, normalization=trace.normalization.to_dict(), rows=len(trace))
    table = np.column_stack([trace.rows, trace.cycle])
    io.write_table(path, table, list(RAW_COLUMNS) + ["cycle"], meta)


def load_trace(path):
    """Inverse of :func:`save_trace`: returns ``(trace, meta)``."""
    table, meta = io.read_table(path)
    if table.ndim != 2 or table.shape[1] != len(RAW_COLUMNS) + 1:
        raise FormatError(f"{path}: expected {len(RAW_COLUMNS) + 1} columns, got {table.shape}")
    norm = meta.pop("normalization", None)
    norm = Normalization.fit(table[:, :-1]) if norm is None else Normalization.from_dict(norm)
    return BabbleTrace(table[:, :-1].copy(), table[:, -1].astype(np.int64), norm), meta
