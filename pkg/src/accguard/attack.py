"""
Covert attacks on the ACC unit.

SPIKE adds a short positive acceleration burst to the actuation command,
fired at the first instant after ``t_attack`` where the gap is near its
minimum. REFERENCE_BIAS slowly lowers the safe distance the controller
tracks. Both are identities before onset.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import InvalidParameter


class Scenario(str, enum.Enum):
    NONE = "none"
    SPIKE = "spike"
    REFERENCE_BIAS = "reference_bias"


@dataclass(frozen=True)
class AttackSpec:
    scenario: Scenario = Scenario.NONE
    t_attack: float = 40.0
    spike_amplitude: float = 2.0
    spike_duration: float = 1.0
    arm_margin: float = 0.1
    bias_target: float = 5.0
    bias_ramp_time: float = 60.0
    # what the vehicle can physically do; applied after the attacker's addition
    a_min_phys: float = -3.0
    a_max_phys: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.t_attack < 0:
            raise InvalidParameter("t_attack must be >= 0")
        if self.scenario is Scenario.SPIKE and self.spike_duration <= 0:
            raise InvalidParameter("spike_duration must be > 0")
        if self.scenario is Scenario.REFERENCE_BIAS and (
                self.bias_target < 0 or self.bias_ramp_time <= 0):
            raise InvalidParameter("need bias_target >= 0 and bias_ramp_time > 0")
        if self.arm_margin < 0:
            raise InvalidParameter("arm_margin must be >= 0")


def tamper_actuation(spec: AttackSpec, t: float, u: float, onset: float | None = None) -> float:
    """Actuation seen by the plant. ``onset`` is when the spike actually fired
    (defaults to ``t_attack``)."""
    if spec.scenario is not Scenario.SPIKE:
        return u
    start = spec.t_attack if onset is None else onset
    if start <= t < start + spec.spike_duration:
        return min(max(u + spec.spike_amplitude, spec.a_min_phys), spec.a_max_phys)
    return u


def reference_bias(spec: AttackSpec, t: float) -> float:
    if spec.scenario is not Scenario.REFERENCE_BIAS or t < spec.t_attack:
        return 0.0
    return spec.bias_target * min(1.0, (t - spec.t_attack) / spec.bias_ramp_time)


def tamper_reference(spec: AttackSpec, t: float, d_safe: float) -> float:
    if spec.scenario is not Scenario.REFERENCE_BIAS or t < spec.t_attack:
        return d_safe
    return max(0.0, d_safe - reference_bias(spec, t))


def spike_trigger_armed(spec: AttackSpec, d_rel: float, d_safe: float) -> bool:
    return d_rel <= d_safe * (1.0 + spec.arm_margin)
