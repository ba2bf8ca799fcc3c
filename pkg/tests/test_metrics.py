# Copyright 2023 The HIP team, University Hospital of Lausanne (CHUV), Switzerland & Contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import json

import numpy as np
import pytest

from crn_csa.process.csa import ChannelSelector, make_policy
from crn_csa.process.errors import InvalidParams, ZeroElapsed
from crn_csa.process.macsim import (
    Actor,
    EventKind,
    EventLog,
    StateSpan,
    TxState,
    perfect_rendezvous,
    run_tx,
)
from crn_csa.process.metrics import (
    EnergyModel,
    SimReport,
    benchmark_throughput,
    build_report,
    energy,
    energy_from_log,
    first_vacancy_delay,
    frame_counts,
    switch_rate,
    throughput,
    time_series,
    vacancy_delays,
)
from crn_csa.process.traffic import (
    PuState,
    PuTrace,
    constant_trace,
    generate_traces,
    idle_trace,
)

from conftest import MS, S


def _run(params, models, horizon, seed=8):
    traces = generate_traces(models, horizon, seed)
    selector = ChannelSelector(make_policy("generalized_predictive", models))
    tx = run_tx(params, selector, traces, horizon)
    return tx, perfect_rendezvous(tx)


def test_throughput():
    assert throughput(10, 1000, 5 * S) == pytest.approx(2000.0)
    assert throughput(0, 1500, S) == 0.0
    with pytest.raises(ZeroElapsed):
        throughput(1, 1500, 0)


def test_switch_rate():
    assert switch_rate(6, 3 * S) == pytest.approx(2.0)
    assert switch_rate(0, S) == 0.0
    with pytest.raises(ZeroElapsed):
        switch_rate(1, -1)


def test_benchmark_throughput(default_params):
    assert benchmark_throughput(default_params) == pytest.approx(6000 / 1.005)
    longer = default_params.with_values(t_pu_allow=3000 * MS)
    assert benchmark_throughput(longer) > benchmark_throughput(default_params)


def test_energy_of_sensing_and_switches():
    model = EnergyModel()
    by_state, switching = energy([StateSpan(TxState.SENSING, 0, 0, S)], 3, model)
    assert by_state["sensing"] == pytest.approx(0.040)
    assert by_state["transmitting"] == 0.0
    assert switching == pytest.approx(60e-6)
    by_state, switching = energy([], 0, model)
    assert sum(by_state.values()) == 0.0 and switching == 0.0


def test_energy_model_rejects_negative_power():
    with pytest.raises(InvalidParams):
        EnergyModel(p_sense=-1.0)
    assert EnergyModel().power_mw(TxState.BACKOFF) == pytest.approx(69.5)


def test_first_vacancy_after_two_busy_channels(default_params, symmetric_model):
    params = default_params.with_values(n_channels=3)
    horizon = 2 * S
    traces = [
        constant_trace(0, horizon, PuState.ON),
        constant_trace(1, horizon, PuState.ON),
        idle_trace(2, horizon),
    ]
    policy = make_policy("round_robin", [symmetric_model] * 3, (0.9, 0.5, 0.1))
    tx = run_tx(params, ChannelSelector(policy), traces, horizon)
    vacancy = first_vacancy_delay(tx.log, horizon)
    assert vacancy.found
    assert vacancy.delay_ns == 3 * params.t_sense + 2 * params.t_switch == 170 * MS


def test_first_vacancy_on_an_idle_channel(default_params, symmetric_model):
    selector = ChannelSelector(make_policy("greedy", [symmetric_model]))
    tx = run_tx(default_params, selector, [idle_trace(0, S)], S)
    assert first_vacancy_delay(tx.log, S).delay_ns == default_params.t_sense


def test_first_vacancy_not_found(default_params, symmetric_model):
    horizon = 3 * S
    selector = ChannelSelector(make_policy("greedy", [symmetric_model]))
    tx = run_tx(default_params, selector, [constant_trace(0, horizon, PuState.ON)], horizon)
    vacancy = first_vacancy_delay(tx.log, horizon)
    assert not vacancy.found
    assert vacancy.delay_ns == horizon


def _returning_pu(horizon, return_ns):
    """Channel 0 idle until `return_ns` and busy afterwards, channel 1 always idle."""
    starts = np.array([0, return_ns], dtype=np.int64)
    ends = np.array([return_ns, horizon], dtype=np.int64)
    return [PuTrace(0, starts, ends, np.array([False, True])), idle_trace(1, horizon)]


def test_vacancy_delay_counts_from_the_pu_return(default_params, symmetric_model):
    params = default_params.with_values(n_channels=2)
    horizon = 10 * S
    traces = _returning_pu(horizon, 1500 * MS)
    policy = make_policy("round_robin", [symmetric_model] * 2, (0.9, 0.1))
    tx = run_tx(params, ChannelSelector(policy), traces, horizon)
    # busy at the sensing ending at 2050 ms, then a switch and an idle sensing of channel 1
    assert vacancy_delays(tx.sensings, traces) == [2115 * MS - 1500 * MS]
    rx = perfect_rendezvous(tx)
    report = build_report(tx, rx, params, EnergyModel(), horizon, traces=traces)
    assert report.vacancy_episodes == 1
    assert report.mean_vacancy_delay_ns == pytest.approx(615 * MS)
    assert build_report(tx, rx, params, EnergyModel(), horizon).vacancy_episodes == 0


def test_vacancy_delay_grows_with_the_inter_sensing_duration(default_params, symmetric_model):
    horizon = 20 * S
    traces = _returning_pu(horizon, 1500 * MS)
    delays = []
    for allow in (500, 1000, 3000):
        params = default_params.with_values(n_channels=2, t_pu_allow=allow * MS)
        policy = make_policy("round_robin", [symmetric_model] * 2, (0.9, 0.1))
        tx = run_tx(params, ChannelSelector(policy), traces, horizon)
        (delay,) = vacancy_delays(tx.sensings, traces)
        delays.append(delay)
    assert delays == sorted(delays)
    assert delays[0] < delays[-1]


def test_no_vacancy_episode_without_pu_return(default_params, symmetric_model):
    params = default_params.with_values(n_channels=2)
    horizon = 5 * S
    traces = [idle_trace(0, horizon), idle_trace(1, horizon)]
    selector = ChannelSelector(make_policy("greedy", [symmetric_model] * 2))
    tx = run_tx(params, selector, traces, horizon)
    assert vacancy_delays(tx.sensings, traces) == []


def test_energy_recomputed_from_the_log(default_params, hed_model):
    params = default_params.with_values(n_channels=3)
    horizon = 60 * S
    tx, _ = _run(params, [hed_model] * 3, horizon)
    model = EnergyModel()
    assert energy_from_log(tx.log, horizon, model) == energy(tx.spans, tx.switches, model)
    exported = EventLog.from_frame(tx.log.to_frame())
    assert energy_from_log(exported, horizon, model) == energy(tx.spans, tx.switches, model)


def test_frame_counts_match_the_run(default_params, hed_model):
    params = default_params.with_values(n_channels=2)
    tx, _ = _run(params, [hed_model] * 2, 30 * S)
    assert frame_counts(tx.log) == (tx.transmitted, tx.collided)


def test_report_of_an_empty_horizon(default_params, symmetric_model):
    selector = ChannelSelector(make_policy("greedy", [symmetric_model]))
    tx = run_tx(default_params, selector, [idle_trace(0, S)], 0)
    report = build_report(tx, perfect_rendezvous(tx), default_params, EnergyModel(), 0)
    assert report.throughput_bps == 0.0
    assert report.switch_count == 0
    assert report.energy_total == 0.0
    assert report.frames == {"transmitted": 0, "collided": 0, "delivered": 0}


def test_report_fields(default_params, hed_model):
    params = default_params.with_values(n_channels=3)
    horizon = 60 * S
    tx, rx = _run(params, [hed_model] * 3, horizon)
    model = EnergyModel()
    report = build_report(tx, rx, params, model, horizon, "generalized_predictive", 8, "abc")
    assert report.switch_count == tx.switches
    assert report.switch_delay_total_ns == tx.switches * model.t_switch_delay
    assert report.frames["delivered"] == rx.delivered_count
    assert report.throughput_bps == pytest.approx(throughput(rx.delivered_count, 1500, horizon))
    if report.avg_throughput_series:
        assert report.avg_throughput_series[-1][1] == pytest.approx(
            throughput(rx.delivered_count, 1500, report.avg_throughput_series[-1][0])
        )
    parsed = json.loads(report.to_json())
    assert parsed["energy_total"] == pytest.approx(report.energy_total)
    assert SimReport.from_dict(parsed) == report


def test_time_series_ends_at_the_report_values(default_params, hed_model):
    params = default_params.with_values(n_channels=2)
    horizon = 20 * S
    tx, rx = _run(params, [hed_model] * 2, horizon)
    model = EnergyModel()
    series = time_series(tx, rx, params, model, S)
    report = build_report(tx, rx, params, model, horizon)
    assert list(series.columns) == ["time_ns", "throughput_bps", "switches_cum", "energy_j"]
    assert len(series) == 20
    assert np.all(np.diff(series["switches_cum"]) >= 0)
    assert np.all(np.diff(series["energy_j"]) >= 0)
    last = series.iloc[-1]
    assert last["throughput_bps"] == pytest.approx(report.throughput_bps)
    assert last["switches_cum"] == report.switch_count
    assert last["energy_j"] == pytest.approx(report.energy_total)
    with pytest.raises(InvalidParams):
        time_series(tx, rx, params, model, 0)


def test_switch_events_carry_the_transmitter_actor(default_params, hed_model):
    params = default_params.with_values(n_channels=3)
    tx, _ = _run(params, [hed_model] * 3, 20 * S)
    assert all(e.actor is Actor.TX for e in tx.log.of_kind(EventKind.SWITCH))
