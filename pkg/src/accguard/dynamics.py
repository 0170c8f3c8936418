"""
Longitudinal vehicle dynamics.

Both vehicles share the plant G(s) = 1 / (s (0.5 s + 1)) from commanded
acceleration to velocity. The state-space realization carries position
alongside so that one matrix exponential gives an exact zero-order-hold
step for position, velocity and the lagged acceleration:

    x' = v
    v' = a_lag
    a_lag' = 2 (u - a_lag)

The car-following laws (follow-the-leader, optimal velocity and their sum)
are provided as alternative driver models for the ego vehicle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParameter, InvalidState, SingularityError

ACTUATOR_POLE = -2.0
D_EPS = 0.1


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float
    a_lag: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.v, self.a_lag], dtype=float)

    @classmethod
    def from_array(cls, z) -> "VehicleState":
        return cls(float(z[0]), float(z[1]), float(z[2]))

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.v) and math.isfinite(self.a_lag)


@dataclass(frozen=True, eq=False)
class DiscretePlant:
    """ZOH discretization of the vehicle plant; state order (x, v, a_lag)."""

    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    Ts: float


def continuous_plant():
    A = np.array([[0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0],
                  [0.0, 0.0, ACTUATOR_POLE]])
    B = np.array([0.0, 0.0, -ACTUATOR_POLE])
    C = np.array([0.0, 1.0, 0.0])
    return A, B, C


def discretize_plant(Ts: float) -> DiscretePlant:
    if not (Ts > 0 and math.isfinite(Ts)):
        raise InvalidParameter(f"sample time must be positive, got {Ts!r}")
    A, B, C = continuous_plant()
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = B
    E = expm(M * Ts)
    A_d = E[:n, :n]
    B_d = E[:n, n]
    for arr in (A_d, B_d, C):
        arr.setflags(write=False)
    return DiscretePlant(A_d=A_d, B_d=B_d, C_d=C, Ts=float(Ts))


def step_vehicle(state: VehicleState, plant: DiscretePlant, accel_cmd: float) -> VehicleState:
    if not (state.is_finite() and math.isfinite(accel_cmd)):
        raise InvalidState(f"non-finite vehicle input: {state}, u={accel_cmd!r}")
    z = plant.A_d @ state.as_array() + plant.B_d * accel_cmd
    return VehicleState.from_array(z)


# -- car-following behavior models --------------------------------------------

VelocityFunction = Callable[[float], float]


@dataclass(frozen=True)
class SaturatingLinear:
    """fv(r) = clamp(offset + gain * r, v_min, v_max)."""

    offset: float = 25.0
    gain: float = 1.0
    v_min: float = 0.0
    v_max: float = 35.0

    def __call__(self, r: float) -> float:
        return min(max(self.offset + self.gain * r, self.v_min), self.v_max)


def follow_leader_accel(alpha: float, v_rel: float, d_rel: float, d_eps: float = D_EPS) -> float:
    if abs(d_rel) <= d_eps:
        raise SingularityError(f"spacing {d_rel!r} m within guard {d_eps} m")
    return alpha * v_rel / d_rel


def optimal_velocity_accel(beta: float, fv: VelocityFunction, v_lead: float, v_ego: float,
                           *, argument: str = "relative_velocity",
                           d_rel: float | None = None) -> float:
    # fv's argument follows the written law (relative velocity) unless the
    # spacing reading is requested explicitly.
    if argument == "relative_velocity":
        r = v_lead - v_ego
    elif argument == "spacing":
        if d_rel is None:
            raise InvalidParameter("spacing argument requires d_rel")
        r = d_rel
    else:
        raise InvalidParameter(f"unknown ovm argument {argument!r}")
    out = beta * (fv(r) - v_ego)
    if not math.isfinite(out):
        raise InvalidState("non-finite optimal-velocity output")
    return out


def combined_accel(alpha: float, beta: float, fv: VelocityFunction, v_lead: float,
                   v_ego: float, d_rel: float, *, argument: str = "relative_velocity",
                   d_eps: float = D_EPS) -> float:
    fl = 0.0 if alpha == 0 else follow_leader_accel(alpha, v_lead - v_ego, d_rel, d_eps)
    ov = optimal_velocity_accel(beta, fv, v_lead, v_ego, argument=argument, d_rel=d_rel)
    return fl + ov


def first_order_velocity(fv: VelocityFunction, d_rel: float) -> float:
    """Velocity chosen directly from spacing (no inertia)."""
    return fv(d_rel)


# -- lead vehicle --------------------------------------------------------------

@dataclass(frozen=True)
class LeadProfile:
    """Piecewise-constant acceleration commands ``(t_start, accel)``."""

    segments: tuple[tuple[float, float], ...] = (
        (0.0, 0.0), (15.0, -1.0), (20.0, 0.0), (50.0, 1.0), (55.0, 0.0),
    )

    def __post_init__(self):
        segs = tuple((float(t), float(a)) for t, a in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs or segs[0][0] != 0.0:
            raise InvalidParameter("lead profile must start at t=0")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidParameter("lead profile start times must be strictly increasing")

    def accel_at(self, t: float) -> float:
        accel = self.segments[0][1]
        for t_start, a in self.segments:
            if t + 1e-9 >= t_start:
                accel = a
            else:
                break
        return accel

    def check_velocity(self, v0: float, horizon: float) -> None:
        """Reject profiles whose integrated velocity goes negative before ``horizon``."""
        v = v0
        bounds = [t for t, _ in self.segments if t < horizon] + [horizon]
        for (t0, a), t1 in zip(self.segments, bounds[1:]):
            v += a * (t1 - t0)
            if v < 0:
                raise InvalidParameter(
                    f"lead profile drives velocity negative ({v:.3f} m/s at t={t1:g} s)")


def advance_lead(state: VehicleState, profile: LeadProfile, t: float, Ts: float,
                 plant: DiscretePlant | None = None) -> VehicleState:
    if t < 0:
        raise InvalidParameter("t must be non-negative")
    if plant is None or plant.Ts != Ts:
        plant = discretize_plant(Ts)
    return step_vehicle(state, plant, profile.accel_at(t))


def simulate_inputs(state: VehicleState, plant: DiscretePlant,
                    inputs: Sequence[float]) -> list[VehicleState]:
    """States after each input, starting state excluded."""
    out = []
    for u in inputs:
        state = step_vehicle(state, plant, u)
        out.append(state)
    return out
