"""
Closed-loop harness: lead and ego plants, ACC controller, attack injection,
IDS and the controller switch.

Per step, in order: measure, compute and (maybe) tamper the safe distance,
select the mode, compute the command with the active controller, run the
IDS on the fresh measurement, tamper the actuation, advance both vehicles.
An alarm raised at step k takes effect at step k+1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackSpec, Scenario, spike_trigger_armed, tamper_actuation, tamper_reference
from .controller import (AccConfig, ActiveController, Measurements, Mode, control_step,
                         safe_distance, select_mode)
from .dynamics import (LeadProfile, SaturatingLinear, VehicleState, advance_lead,
                       combined_accel, discretize_plant, follow_leader_accel,
                       optimal_velocity_accel, step_vehicle)
from .errors import InvalidParameter, SingularityError
from .ids import IdsBundle, IdsParams, IdsState, detect, fit_ids, predict, push

TRACE_COLUMNS = (
    "t", "x_lead", "v_lead", "x_ego", "v_ego", "a_cmd", "a_applied", "d_rel",
    "d_safe_true", "d_safe_used", "mode", "active_controller", "y_nn", "residual", "alarm",
)

EGO_BEHAVIORS = ("acc", "follow_leader", "optimal_velocity", "combined")


@dataclass(frozen=True)
class InitialConditions:
    x_lead: float = 50.0
    x_ego: float = 10.0
    v_lead: float = 25.0
    v_ego: float = 20.0


@dataclass(frozen=True)
class NoiseParams:
    velocity_std: float = 0.0
    distance_std: float = 0.0

    def __post_init__(self):
        if self.velocity_std < 0 or self.distance_std < 0:
            raise InvalidParameter("noise std must be >= 0")


@dataclass(frozen=True)
class DriverModel:
    """Alternative ego behavior replacing the ACC loop (``model != 'acc'``)."""

    model: str = "acc"
    alpha: float = 1.0
    beta: float = 0.5
    ovm_argument: str = "relative_velocity"
    fv: SaturatingLinear = field(default_factory=SaturatingLinear)

    def __post_init__(self):
        if self.model not in EGO_BEHAVIORS:
            raise InvalidParameter(f"unknown ego behavior {self.model!r}")
        if self.ovm_argument not in ("relative_velocity", "spacing"):
            raise InvalidParameter(f"unknown ovm argument {self.ovm_argument!r}")

    def accel(self, v_lead: float, v_ego: float, d_rel: float) -> float:
        if self.model == "follow_leader":
            return follow_leader_accel(self.alpha, v_lead - v_ego, d_rel)
        if self.model == "optimal_velocity":
            return optimal_velocity_accel(self.beta, self.fv, v_lead, v_ego,
                                          argument=self.ovm_argument, d_rel=d_rel)
        return combined_accel(self.alpha, self.beta, self.fv, v_lead, v_ego, d_rel,
                              argument=self.ovm_argument)


@dataclass(frozen=True)
class SimConfig:
    duration: float = 80.0
    Ts: float = 0.1
    initial: InitialConditions = field(default_factory=InitialConditions)
    acc: AccConfig = field(default_factory=AccConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    ids: IdsParams = field(default_factory=IdsParams)
    compensate: bool = True
    lead_profile: LeadProfile = field(default_factory=LeadProfile)
    noise: NoiseParams = field(default_factory=NoiseParams)
    driver: DriverModel = field(default_factory=DriverModel)
    seed: int = 0

    def __post_init__(self):
        if not self.duration > 0 or not self.Ts > 0:
            raise InvalidParameter("duration and Ts must be > 0")
        if not self.initial.x_lead > self.initial.x_ego:
            raise InvalidParameter("lead vehicle must start ahead of the ego vehicle")
        self.lead_profile.check_velocity(self.initial.v_lead, self.duration)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.Ts))


@dataclass
class SimTrace:
    columns: dict
    attack_onset: float | None = None
    first_alarm_time: float | None = None
    collision: bool = False
    exceedances: int = 0
    ids: IdsBundle | None = None
    Ts: float = 0.1

    def __len__(self):
        return len(self.columns["t"])

    def __getitem__(self, name):
        return self.columns[name]


@dataclass(frozen=True)
class Metrics:
    detection_latency: float | None
    min_d_rel: float
    violation_duration: float
    steady_gap_deficit: float
    collision: bool
    first_alarm_time: float | None = None
    attack_onset: float | None = None
    exceedances: int = 0

    def to_dict(self) -> dict:
        return {
            "detection_latency": self.detection_latency,
            "min_d_rel": self.min_d_rel,
            "violation_duration": self.violation_duration,
            "steady_gap_deficit": self.steady_gap_deficit,
            "collision": self.collision,
            "first_alarm_time": self.first_alarm_time,
            "attack_onset": self.attack_onset,
            "exceedances": self.exceedances,
        }


class _Recorder:
    def __init__(self):
        self.cols = {name: [] for name in TRACE_COLUMNS}

    def add(self, **row):
        for name in TRACE_COLUMNS:
            self.cols[name].append(row[name])

    def arrays(self) -> dict:
        out = {}
        for name, vals in self.cols.items():
            if name in ("mode", "active_controller"):
                out[name] = np.array(vals, dtype=object)
            elif name == "alarm":
                out[name] = np.array(vals, dtype=bool)
            else:
                out[name] = np.array(vals, dtype=float)
        return out


def _simulate(cfg: SimConfig, bundle: IdsBundle | None = None, stop_time: float | None = None,
              train_online: bool = True) -> SimTrace:
    plant = discretize_plant(cfg.Ts)
    acc, attack, ip = cfg.acc, cfg.attack, cfg.ids
    rng = np.random.default_rng(cfg.seed)
    use_acc = cfg.driver.model == "acc"
    ids_on = ip.enabled and use_acc

    lead = VehicleState(cfg.initial.x_lead, cfg.initial.v_lead)
    ego = VehicleState(cfg.initial.x_ego, cfg.initial.v_ego)
    n_steps = cfg.n_steps
    if stop_time is not None:
        n_steps = min(n_steps, int(round(stop_time / cfg.Ts)))

    rec = _Recorder()
    ids_state = IdsState(depth=max(ip.n_u, ip.n_y))
    safe_u, safe_y, safe_mode, safe_t = [], [], [], []
    prev_u = 0.0
    a_est = 0.0
    onset = None
    collision = False
    exceedances = 0
    lag_pole, lag_gain = plant.A_d[2, 2], plant.B_d[2]

    for i in range(n_steps + 1):
        t = i * cfg.Ts
        d_rel = lead.x - ego.x
        d_safe_true = safe_distance(ego.v, acc.T_gap, acc.D_default)
        if d_rel <= 0:
            collision = True
            rec.add(t=t, x_lead=lead.x, v_lead=lead.v, x_ego=ego.x, v_ego=ego.v,
                    a_cmd=math.nan, a_applied=math.nan, d_rel=d_rel, d_safe_true=d_safe_true,
                    d_safe_used=math.nan, mode=select_mode(d_rel, d_safe_true).value,
                    active_controller=rec.cols["active_controller"][-1] if i else "mpc",
                    y_nn=math.nan, residual=math.nan, alarm=ids_state.alarm_latched)
            break

        if cfg.noise.velocity_std > 0 or cfg.noise.distance_std > 0:
            nv, nd, nr = rng.normal(0.0, 1.0, 3)
            v_m = ego.v + cfg.noise.velocity_std * nv
            d_m = d_rel + cfg.noise.distance_std * nd
            vr_m = (lead.v - ego.v) + cfg.noise.velocity_std * nr
        else:
            v_m, d_m, vr_m = ego.v, d_rel, lead.v - ego.v
        meas = Measurements(v_ego=v_m, d_rel=d_m, v_rel=vr_m, a_est=a_est)

        if use_acc:
            d_safe_ctrl = safe_distance(v_m, acc.T_gap, acc.D_default)
            d_safe_att = tamper_reference(attack, t, d_safe_ctrl)
            switched = ids_state.alarm_latched and cfg.compensate
            dec = control_step(acc, plant, meas, switched, prev_u, d_safe_att)
            u_cmd, mode, active = dec.accel_cmd, dec.mode, dec.active_controller
            d_safe_used = dec.d_safe_used
        else:
            try:
                u_cmd = acc.clamp(cfg.driver.accel(v_m + vr_m, v_m, d_m))
            except SingularityError:
                u_cmd = acc.a_min
            mode = select_mode(d_m, safe_distance(v_m, acc.T_gap, acc.D_default))
            active = ActiveController.MPC
            d_safe_used = safe_distance(v_m, acc.T_gap, acc.D_default)

        # one-shot spike latch: fires at the first armed sample at/after t_attack
        if (attack.scenario is Scenario.SPIKE and onset is None and use_acc
                and active is ActiveController.MPC and t >= attack.t_attack - 1e-9
                and spike_trigger_armed(attack, d_m, d_safe_used)):
            onset = t
        if attack.scenario is Scenario.REFERENCE_BIAS and onset is None and t >= attack.t_attack - 1e-9:
            onset = attack.t_attack

        y_nn = residual = math.nan
        if ids_on:
            if bundle is None and t < ip.safe_end - 1e-9:
                safe_u.append(u_cmd)
                safe_y.append(v_m)
                safe_mode.append(mode)
                safe_t.append(t)
            elif bundle is None and train_online:
                bundle = fit_ids(safe_u, safe_y, safe_mode, safe_t, ip)
            if bundle is not None and t >= ip.safe_end - 1e-9 and ids_state.ready(bundle.model):
                y_nn = predict(bundle.model, ids_state.u_hist, ids_state.y_hist)
                residual = v_m - y_nn
                if bundle.thresholds.exceeds(mode, residual):
                    exceedances += 1
                mismatch = (active is ActiveController.MPC and
                            abs(d_safe_used - safe_distance(v_m, acc.T_gap, acc.D_default))
                            > ip.ref_tol)
                ids_state = detect(ids_state, bundle.thresholds, mode, v_m, y_nn, t,
                                   ip.n_consec, extra_exceedance=mismatch)
            ids_state = push(ids_state, u_cmd, v_m)

        # the attacker lives in the ACC unit; the compensator's output bypasses it
        if onset is not None and active is ActiveController.MPC and use_acc:
            u_applied = tamper_actuation(attack, t, u_cmd, onset)
        else:
            u_applied = u_cmd

        rec.add(t=t, x_lead=lead.x, v_lead=lead.v, x_ego=ego.x, v_ego=ego.v, a_cmd=u_cmd,
                a_applied=u_applied, d_rel=d_rel, d_safe_true=d_safe_true,
                d_safe_used=d_safe_used, mode=mode.value, active_controller=active.value,
                y_nn=y_nn, residual=residual, alarm=ids_state.alarm_latched)

        if i == n_steps:
            break
        a_est = lag_pole * a_est + lag_gain * u_cmd
        prev_u = u_cmd
        lead = advance_lead(lead, cfg.lead_profile, t, cfg.Ts, plant)
        ego = step_vehicle(ego, plant, u_applied)

    trace = SimTrace(columns=rec.arrays(), attack_onset=onset,
                     first_alarm_time=ids_state.first_alarm_time, collision=collision,
                     exceedances=exceedances, ids=bundle, Ts=cfg.Ts)
    trace.safe_data = (safe_u, safe_y, safe_mode, safe_t)
    return trace


def compute_metrics(trace: SimTrace, attack: AttackSpec, final_window: float = 10.0) -> Metrics:
    if len(trace) == 0:
        raise InvalidParameter("empty trace")
    t = trace["t"]
    d_rel = trace["d_rel"]
    d_safe = trace["d_safe_true"]
    onset = trace.attack_onset if attack.scenario is not Scenario.NONE else None
    latency = None
    if onset is not None and trace.first_alarm_time is not None:
        latency = round(trace.first_alarm_time - onset, 9)
    tail = t >= t[-1] - final_window + 1e-9
    return Metrics(
        detection_latency=latency,
        min_d_rel=float(np.min(d_rel)),
        violation_duration=float(np.count_nonzero(d_rel < d_safe) * trace.Ts),
        steady_gap_deficit=float(np.mean(d_safe[tail] - d_rel[tail])),
        collision=trace.collision,
        first_alarm_time=trace.first_alarm_time,
        attack_onset=onset,
        exceedances=trace.exceedances,
    )


def run_scenario(cfg: SimConfig, bundle: IdsBundle | None = None):
    """Run one configured scenario; returns ``(trace, metrics)``.

    Without a pre-trained ``bundle`` the IDS trains itself on the run's own
    safe interval and starts monitoring at ``cfg.ids.safe_end``.
    """
    trace = _simulate(cfg, bundle)
    return trace, compute_metrics(trace, cfg.attack)


def train_ids(cfg: SimConfig) -> IdsBundle:
    """Simulate only the safe interval and fit the IDS on it."""
    ip = cfg.ids
    trace = _simulate(cfg, stop_time=min(ip.safe_end, cfg.duration), train_online=False)
    u, y, modes, times = trace.safe_data
    return fit_ids(u, y, modes, times, ip)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, str):
        return value
    return format(float(value), ".9g")


def write_trace_csv(trace: SimTrace, path) -> None:
    cols = [trace.columns[name] for name in TRACE_COLUMNS]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
