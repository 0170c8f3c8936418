"""
Two-mode ACC controller.

Mode rule: speed control while the gap is at least the safe distance,
spacing control otherwise. The main controller is a finite-horizon MPC over
the discretized vehicle plant; after an IDS alarm an embedded P/PD
compensator takes over.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DiscretePlant
from .errors import InvalidParameter
from .qp import solve_box_qp


class Mode(str, enum.Enum):
    SPEED = "speed"
    SPACING = "spacing"


class ActiveController(str, enum.Enum):
    MPC = "mpc"
    COMPENSATOR = "compensator"


@dataclass(frozen=True)
class MpcParams:
    horizon_p: int = 30
    horizon_m: int = 2
    w_track: float = 1.0
    w_du: float = 0.1
    w_u: float = 0.0
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if not 1 <= self.horizon_m <= self.horizon_p:
            raise InvalidParameter("need 1 <= horizon_m <= horizon_p")
        if self.w_track <= 0 or self.w_du < 0 or self.w_u < 0:
            raise InvalidParameter("MPC weights must be >= 0 with w_track > 0")


@dataclass(frozen=True)
class AccConfig:
    V_set: float = 30.0
    T_gap: float = 1.4
    D_default: float = 10.0
    a_min: float = -3.0
    a_max: float = 2.0
    mpc: MpcParams = field(default_factory=MpcParams)
    kp_speed: float = 0.5
    kp_space: float = 0.2
    kd_rel: float = 0.6
    # margin both controllers keep above D_safe; boundary chatter stays above it
    spacing_buffer: float = 0.5

    def __post_init__(self):
        if not self.a_min < 0 < self.a_max:
            raise InvalidParameter("need a_min < 0 < a_max")
        if self.V_set <= 0 or self.T_gap < 0 or self.D_default <= 0:
            raise InvalidParameter("need V_set > 0, T_gap >= 0, D_default > 0")
        if self.spacing_buffer < 0:
            raise InvalidParameter("spacing_buffer must be >= 0")

    def clamp(self, u: float) -> float:
        return min(max(u, self.a_min), self.a_max)


@dataclass(frozen=True)
class Measurements:
    v_ego: float
    d_rel: float
    v_rel: float
    # controller's estimate of the lagged acceleration state
    a_est: float = 0.0


@dataclass(frozen=True)
class ControlDecision:
    accel_cmd: float
    mode: Mode
    active_controller: ActiveController
    reference_used: float
    d_safe_used: float


def safe_distance(v_ego: float, T_gap: float, D_default: float) -> float:
    return D_default + T_gap * v_ego


def select_mode(d_rel: float, d_safe: float) -> Mode:
    return Mode.SPEED if d_rel >= d_safe else Mode.SPACING


def _prediction_matrices(plant: DiscretePlant, c: np.ndarray, p: int, m: int):
    """Rows c A^k (k=1..p) and the move-blocked input response matrix."""
    A, B = plant.A_d, plant.B_d
    F = np.empty((p, A.shape[0]))
    markov = np.empty(p)  # c A^(k-1) B
    Ak = np.eye(A.shape[0])
    for k in range(p):
        markov[k] = c @ Ak @ B
        Ak = A @ Ak
        F[k] = c @ Ak
    Phi = np.zeros((p, p))
    for i in range(p):
        Phi[i, : i + 1] = markov[i::-1]
    blocking = np.zeros((p, m))
    for i in range(p):
        blocking[i, min(i, m - 1)] = 1.0
    return F, Phi @ blocking


def tracking_problem(cfg: AccConfig, plant: DiscretePlant, mode: Mode, meas: Measurements,
                     d_safe_ref: float | None = None):
    """Output map, initial state, per-step offsets and reference for the horizon.

    Spacing mode tracks d_rel - T_gap*v_ego toward d_safe_ref - T_gap*v_ego(now),
    i.e. the gap follows the safe distance along the predicted speed. The lead
    speed is held at its current value over the horizon.
    """
    p = cfg.mpc.horizon_p
    z0 = np.array([0.0, meas.v_ego, meas.a_est])
    if mode is Mode.SPEED:
        c = np.array([0.0, 1.0, 0.0])
        offsets = np.zeros(p)
        ref = cfg.V_set
    else:
        if d_safe_ref is None:
            d_safe_ref = safe_distance(meas.v_ego, cfg.T_gap, cfg.D_default) + cfg.spacing_buffer
        v_lead = meas.v_ego + meas.v_rel
        c = np.array([-1.0, -cfg.T_gap, 0.0])
        offsets = meas.d_rel + v_lead * plant.Ts * np.arange(1, p + 1)
        ref = d_safe_ref - cfg.T_gap * meas.v_ego
    return c, z0, offsets, ref


def mpc_qp(cfg: AccConfig, plant: DiscretePlant, mode: Mode, meas: Measurements,
           prev_u: float, d_safe_ref: float | None = None):
    """Hessian and gradient of the horizon cost in the free moves."""
    mp = cfg.mpc
    c, z0, offsets, ref = tracking_problem(cfg, plant, mode, meas, d_safe_ref)
    F, G = _prediction_matrices(plant, c, mp.horizon_p, mp.horizon_m)
    e0 = F @ z0 + offsets - ref
    m = mp.horizon_m
    D = np.eye(m) - np.eye(m, k=-1)
    d0 = np.zeros(m)
    d0[0] = prev_u
    H = 2.0 * (mp.w_track * G.T @ G + mp.w_du * D.T @ D + mp.w_u * np.eye(m))
    g = 2.0 * (mp.w_track * G.T @ e0 - mp.w_du * D.T @ d0)
    return H, g


def mpc_sequence(cfg: AccConfig, plant: DiscretePlant, mode: Mode, meas: Measurements,
                 prev_u: float, d_safe_ref: float | None = None) -> np.ndarray:
    H, g = mpc_qp(cfg, plant, mode, meas, prev_u, d_safe_ref)
    warm = np.full(cfg.mpc.horizon_m, cfg.clamp(prev_u))
    u, _ = solve_box_qp(H, g, cfg.a_min, cfg.a_max, x0=warm,
                        max_iter=cfg.mpc.max_iter, tol=cfg.mpc.tol)
    return u


def mpc_step(cfg: AccConfig, plant: DiscretePlant, mode: Mode, meas: Measurements,
             prev_u: float, d_safe_ref: float | None = None) -> float:
    _check_finite(meas)
    u = mpc_sequence(cfg, plant, mode, meas, prev_u, d_safe_ref)
    return cfg.clamp(float(u[0]))


def p_step(cfg: AccConfig, mode: Mode, meas: Measurements,
           d_safe_ref: float | None = None) -> float:
    _check_finite(meas)
    if mode is Mode.SPEED:
        u = cfg.kp_speed * (cfg.V_set - meas.v_ego)
    else:
        if d_safe_ref is None:
            d_safe_ref = safe_distance(meas.v_ego, cfg.T_gap, cfg.D_default) + cfg.spacing_buffer
        u = cfg.kp_space * (meas.d_rel - d_safe_ref) + cfg.kd_rel * meas.v_rel
    return cfg.clamp(u)


def control_step(cfg: AccConfig, plant: DiscretePlant, meas: Measurements,
                 alarm_latched: bool, prev_u: float,
                 d_safe_used: float | None = None) -> ControlDecision:
    """One controller tick.

    ``d_safe_used`` is the safe distance as seen inside the ACC unit (possibly
    tampered with); only the MPC consumes it. The compensator recomputes its
    own safe distance from the measured speed.
    """
    d_safe = safe_distance(meas.v_ego, cfg.T_gap, cfg.D_default)
    if alarm_latched:
        d_ref = d_safe + cfg.spacing_buffer
        mode = select_mode(meas.d_rel, d_ref)
        u = p_step(cfg, mode, meas, d_ref)
        active = ActiveController.COMPENSATOR
        used = d_safe
    else:
        used = d_safe if d_safe_used is None else d_safe_used
        d_ref = used + cfg.spacing_buffer
        mode = select_mode(meas.d_rel, d_ref)
        u = mpc_step(cfg, plant, mode, meas, prev_u, d_ref)
        active = ActiveController.MPC
    reference = cfg.V_set if mode is Mode.SPEED else d_ref
    return ControlDecision(u, mode, active, reference, used)


def _check_finite(meas: Measurements) -> None:
    if not all(math.isfinite(x) for x in (meas.v_ego, meas.d_rel, meas.v_rel, meas.a_est)):
        raise InvalidParameter(f"non-finite measurements: {meas}")
