import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from accguard.attack import AttackSpec, Scenario
from accguard.config import preset_config
from accguard.controller import Mode
from accguard.errors import InvalidParameter
from accguard.ids import IdsParams, predict_series
from accguard.sim import (TRACE_COLUMNS, DriverModel, InitialConditions, NoiseParams, SimConfig,
                          SimTrace, compute_metrics, run_scenario, train_ids, write_trace_csv)
from runs import run_preset

PRESETS = ("nominal", "attack1_nocomp", "attack1_comp", "attack2_nocomp", "attack2_comp")
PLANT_COLUMNS = ("x_lead", "v_lead", "x_ego", "v_ego", "a_cmd", "a_applied", "d_rel",
                 "d_safe_true", "d_safe_used", "mode", "active_controller")


class TestConfigValidation:
    def test_lead_must_be_ahead(self):
        with pytest.raises(InvalidParameter):
            SimConfig(initial=InitialConditions(x_lead=10, x_ego=10))

    def test_positive_duration(self):
        with pytest.raises(InvalidParameter):
            SimConfig(duration=0)
        with pytest.raises(InvalidParameter):
            SimConfig(Ts=-0.1)

    def test_noise_nonnegative(self):
        with pytest.raises(InvalidParameter):
            NoiseParams(velocity_std=-1)

    def test_driver_model_name(self):
        with pytest.raises(InvalidParameter):
            DriverModel(model="telepathic")


@pytest.mark.parametrize("name", PRESETS)
class TestTraceInvariants:
    def test_gap_definition(self, name):
        tr = run_preset(name)[0]
        np.testing.assert_array_equal(tr["d_rel"], tr["x_lead"] - tr["x_ego"])

    def test_time_grid(self, name):
        tr = run_preset(name)[0]
        np.testing.assert_array_equal(tr["t"], np.arange(len(tr)) * 0.1)

    def test_kinematic_consistency(self, name):
        tr = run_preset(name)[0]
        cfg = preset_config(name)
        bound = 0.5 * max(abs(cfg.acc.a_min), cfg.acc.a_max) * cfg.Ts ** 2 + 1e-9
        for veh in ("ego", "lead"):
            x, v = tr["x_" + veh], tr["v_" + veh]
            assert np.max(np.abs(np.diff(x) - v[:-1] * cfg.Ts)) <= bound

    def test_velocity_sane(self, name):
        tr = run_preset(name)[0]
        assert tr["v_ego"].min() >= 0 and tr["v_ego"].max() <= 40

    def test_commands_clamped(self, name):
        tr = run_preset(name)[0]
        assert np.all(tr["a_cmd"] >= -3) and np.all(tr["a_cmd"] <= 2)
        assert np.all(tr["a_applied"] >= -3) and np.all(tr["a_applied"] <= 2)

    def test_alarm_monotone(self, name):
        alarm = run_preset(name)[0]["alarm"].astype(int)
        assert np.all(np.diff(alarm) >= 0)

    def test_metric_bounds(self, name):
        tr, m, _ = run_preset(name)
        cfg = preset_config(name)
        assert m.violation_duration <= cfg.duration
        assert m.min_d_rel <= tr["d_rel"][0]
        assert not m.collision


class TestNominal:
    def test_no_alarm_and_safe_after_transient(self):
        tr, m, _ = run_preset("nominal")
        assert m.detection_latency is None and m.first_alarm_time is None
        assert not tr["alarm"].any()
        late = tr["t"] >= 10.0
        assert np.all(tr["d_rel"][late] >= tr["d_safe_true"][late])

    def test_ids_is_passive_without_attack(self):
        on = run_preset("nominal")[0]
        off = run_scenario(replace(preset_config("nominal"), ids=IdsParams(enabled=False)))[0]
        for col in PLANT_COLUMNS:
            assert np.array_equal(on[col], off[col]), col

    def test_no_attack_matches_zero_amplitude_spike(self):
        # a spike of zero size must leave the loop bit-identical to no attack
        base = run_preset("nominal")[0]
        cfg = preset_config("nominal")
        silent = replace(cfg, attack=AttackSpec(Scenario.SPIKE, spike_amplitude=0.0))
        other = run_scenario(silent)[0]
        for col in PLANT_COLUMNS:
            assert np.array_equal(base[col], other[col]), col


class TestAttackPaths:
    def _onset_index(self, trace):
        return int(round(trace.attack_onset / trace.Ts))

    def test_spike_only_touches_actuation(self):
        base = run_preset("nominal")[0]
        atk = run_preset("attack1_nocomp")[0]
        i0 = self._onset_index(atk)
        assert atk.attack_onset >= 40.0
        # identical through the onset sample; the spike shows only in a_applied
        for col in PLANT_COLUMNS:
            if col != "a_applied":
                assert np.array_equal(base[col][: i0 + 1], atk[col][: i0 + 1]), col
        assert atk["a_applied"][i0] != base["a_applied"][i0]
        assert np.array_equal(atk["a_cmd"][: i0 + 1], base["a_cmd"][: i0 + 1])

    def test_bias_only_touches_reference(self):
        base = run_preset("nominal", duration=100.0)[0]
        atk = run_preset("attack2_nocomp")[0]
        assert np.array_equal(atk["a_cmd"], atk["a_applied"])
        i0 = self._onset_index(atk)
        for col in PLANT_COLUMNS:
            assert np.array_equal(base[col][: i0 + 1], atk[col][: i0 + 1]), col
        # the controller reads the lowered reference at once; the vehicles
        # feel it one plant step later
        assert atk["d_safe_used"][i0 + 1] < atk["d_safe_true"][i0 + 1]
        for col in ("x_lead", "v_lead", "x_ego", "v_ego", "d_rel"):
            assert base[col][i0 + 1] == atk[col][i0 + 1], col
        assert atk["v_ego"][i0 + 2] != base["v_ego"][i0 + 2]

    def test_spike_residual_soundness(self):
        tr = run_preset("attack1_comp")[0]
        th = tr.ids.thresholds
        i0 = self._onset_index(tr)
        modes = tr["mode"]
        hits = [th.exceeds(Mode(modes[i]), tr["residual"][i])
                for i in range(i0, i0 + 3)]
        assert any(hits)

    def test_compensator_takes_over_next_step(self):
        tr = run_preset("attack1_comp")[0]
        i_alarm = int(round(tr.first_alarm_time / tr.Ts))
        assert tr["active_controller"][i_alarm] == "mpc"
        assert set(tr["active_controller"][i_alarm + 1:]) == {"compensator"}

    def test_no_compensation_keeps_mpc(self):
        tr = run_preset("attack1_nocomp")[0]
        assert tr.first_alarm_time is not None
        assert set(tr["active_controller"]) == {"mpc"}


class TestIdentifierOnClosedLoop:
    def test_held_out_residuals(self):
        tr = run_preset("nominal")[0]
        th = tr.ids.thresholds
        seg = (tr["t"] >= 35.0) & (tr["t"] < 40.0)
        for mode in th.mu:
            sel = seg & (tr["mode"] == mode.value)
            if sel.sum() > 2:
                assert np.std(tr["residual"][sel]) <= 2 * th.sigma[mode]

    def test_train_ids_matches_online(self):
        offline = train_ids(preset_config("nominal"))
        online = run_preset("nominal")[0].ids
        assert np.array_equal(offline.model.W1, online.model.W1)
        assert offline.thresholds.mu == online.thresholds.mu

    def test_trained_rmse(self):
        bundle = run_preset("nominal")[0].ids
        assert bundle.model.train_rmse < 1e-3 and bundle.model.val_rmse < 1e-3

    def test_calibration_false_alarm_rate(self):
        cfg = preset_config("nominal")
        cfg = replace(cfg, ids=replace(cfg.ids, k=3.0))
        tr = run_scenario(cfg)[0]
        u, y, modes, t = tr.safe_data
        pred = predict_series(tr.ids.model, u, y)
        keep = ~np.isnan(pred) & (np.asarray(t) >= cfg.ids.calib_start)
        th = tr.ids.thresholds
        hit = np.array([th.exceeds(Mode(m), yy - p)
                        for m, yy, p, k in zip(modes, y, pred, keep) if k])
        assert np.mean(hit[1:] & hit[:-1]) <= 0.001


class TestMetrics:
    def _trace(self, d_rel, d_safe, alarm_t=None, onset=None):
        n = len(d_rel)
        cols = {c: np.zeros(n) for c in TRACE_COLUMNS}
        cols["t"] = np.arange(n) * 0.1
        cols["d_rel"] = np.asarray(d_rel, float)
        cols["d_safe_true"] = np.asarray(d_safe, float)
        return SimTrace(columns=cols, attack_onset=onset, first_alarm_time=alarm_t)

    def test_no_alarm(self):
        m = compute_metrics(self._trace([40] * 5, [38] * 5), AttackSpec(Scenario.SPIKE))
        assert m.detection_latency is None
        assert m.violation_duration == 0

    def test_latency(self):
        tr = self._trace([40] * 5, [38] * 5, alarm_t=40.2, onset=40.0)
        assert compute_metrics(tr, AttackSpec(Scenario.SPIKE)).detection_latency == 0.2

    def test_deficit_and_violation(self):
        d = np.full(300, 30.0)
        m = compute_metrics(self._trace(d, np.full(300, 33.0)), AttackSpec())
        assert m.steady_gap_deficit == pytest.approx(3.0)
        assert m.violation_duration == pytest.approx(30.0)
        assert m.min_d_rel == 30.0

    def test_empty_trace(self):
        with pytest.raises(InvalidParameter):
            compute_metrics(SimTrace(columns={c: np.array([]) for c in TRACE_COLUMNS}),
                            AttackSpec())


class TestCollisionAndDrivers:
    def test_collision_terminates(self):
        cfg = replace(preset_config("nominal"),
                      initial=InitialConditions(x_lead=15, x_ego=10, v_lead=0, v_ego=30),
                      lead_profile=replace(preset_config("nominal").lead_profile,
                                           segments=((0.0, 0.0),)),
                      ids=IdsParams(enabled=False))
        tr, m = run_scenario(cfg)
        assert m.collision and tr["d_rel"][-1] <= 0
        assert len(tr) < cfg.n_steps + 1

    @pytest.mark.parametrize("model", ["follow_leader", "optimal_velocity", "combined"])
    def test_alternative_drivers_run(self, model):
        cfg = replace(preset_config("nominal"), duration=20.0, driver=DriverModel(model=model))
        tr, m = run_scenario(cfg)
        assert len(tr) == 201
        assert np.all(np.isnan(tr["residual"]))


class TestNoise:
    def test_seeded_noise_reproducible(self):
        cfg = replace(preset_config("nominal"), duration=20.0,
                      noise=NoiseParams(velocity_std=0.05, distance_std=0.2),
                      ids=IdsParams(enabled=False))
        a, _ = run_scenario(cfg)
        b, _ = run_scenario(cfg)
        c, _ = run_scenario(replace(cfg, seed=1))
        assert np.array_equal(a["a_cmd"], b["a_cmd"])
        assert not np.array_equal(a["a_cmd"], c["a_cmd"])


def test_csv_format(tmp_path):
    tr = run_preset("attack1_comp")[0]
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == len(tr) + 1
    i = TRACE_COLUMNS.index
    assert rows[1][i("mode")] in ("speed", "spacing")
    assert {r[i("alarm")] for r in rows[1:]} == {"0", "1"}
    for r in rows[1:]:
        for c in ("x_ego", "v_ego", "d_rel"):
            digits = r[i(c)].lstrip("-").replace(".", "").split("e")[0].lstrip("0")
            assert len(digits) <= 9
    assert float(rows[-1][i("d_rel")]) == pytest.approx(tr["d_rel"][-1], rel=1e-8)
    assert math.isnan(float(rows[1][i("y_nn")]))
