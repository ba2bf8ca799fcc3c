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

"""End-to-end checks of the simulator on scaled-down versions of the shipped scenarios."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from crn_csa.process.checks import (
    check_equivalence,
    check_exponential,
    check_negative_correlation,
    check_oracle,
    check_positive_correlation,
    check_three_phase,
)
from crn_csa.process.csa import PolicyKind
from crn_csa.process.scenario import aggregate, parse_config, run_experiment

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
GP = PolicyKind.GENERALIZED_PREDICTIVE.value
PE = PolicyKind.PREDICTIVE_EXPONENTIAL.value


def _load(name, **changes):
    path = CONFIG_DIR / name
    return replace(parse_config(path.read_text(), str(path)), **changes)


def _means(config, metric):
    table = aggregate(run_experiment(config))
    return table[f"{metric}_mean"].to_numpy()


def _paired(result, metric):
    """Per sweep value, the metric of both predictive policies in seed order."""
    values = {}
    for grid, _, policy, report in result.reports():
        values.setdefault(grid, {}).setdefault(policy, []).append(getattr(report, metric))
    return {grid: (np.array(v[GP]), np.array(v[PE])) for grid, v in values.items()}


def test_closed_form_against_a_million_trials():
    result = check_oracle(1_000_000, np.random.default_rng(20230501))
    assert result.passed, result.detail


def test_closed_form_reductions():
    rng = np.random.default_rng(1)
    assert check_exponential(rng).passed
    assert check_three_phase(rng).passed


def test_predictive_equals_greedy_over_long_runs():
    result = check_equivalence(np.random.default_rng(2), 30, 10_000)
    assert result.passed, result.detail


def test_correlation_structure_over_a_thousand_slots():
    assert check_positive_correlation(np.random.default_rng(3), horizon=1000).passed
    assert check_negative_correlation(np.random.default_rng(3), horizon=1000).passed


def test_benchmark_throughput_grows_with_inter_sensing_duration():
    config = _load("benchmark.ini", seeds=[1, 2])
    throughput = _means(config, "throughput_bps")
    assert np.all(np.diff(throughput) >= 0)
    assert throughput[1] == pytest.approx(5962, rel=0.01)


def test_hed_aware_selection_switches_less_on_bimodal_idle_times():
    config = _load("switch_rate_hed.ini")
    paired = _paired(run_experiment(config), "switch_rate_per_s")
    assert sorted(paired) == sorted(config.grid)
    for grid, (hed_aware, exponential) in paired.items():
        assert hed_aware.size == exponential.size == 30
        reduction = 1.0 - hed_aware / exponential
        assert np.sum(reduction >= 0.05) >= 25, (grid, reduction)
        assert hed_aware.mean() <= 0.95 * exponential.mean(), grid


def test_hed_aware_selection_delivers_more_at_every_switching_time():
    config = _load("throughput_six_channels.ini")
    paired = _paired(run_experiment(config), "throughput_bps")
    assert len(paired) == 4
    for grid, (hed_aware, exponential) in paired.items():
        assert hed_aware.size == 30
        assert hed_aware.mean() > exponential.mean(), grid


def test_hed_aware_selection_spends_less_switching_energy():
    config = _load("switch_energy.ini")
    paired = _paired(run_experiment(config), "energy_switch_total")
    [(hed_aware, exponential)] = list(paired.values())
    assert hed_aware.size == 30
    assert hed_aware.mean() < exponential.mean()
    assert np.sum(hed_aware < exponential) > 15


@pytest.mark.parametrize("name", ["throughput_duty_half.ini", "throughput_duty_mix.ini"])
def test_throughput_under_pu_activity_falls_with_inter_sensing_duration(name):
    table = aggregate(run_experiment(_load(name)))
    for policy in (GP, PE):
        throughput = table.loc[table["policy"] == policy, "throughput_bps_mean"].to_numpy()
        assert throughput.size >= 3
        assert np.all(np.diff(throughput) <= 0), (policy, throughput)
        assert throughput[0] > throughput[-1]


def test_switch_rate_falls_as_the_duty_cycle_lengthens():
    table = aggregate(run_experiment(_load("duty_cycle_length.ini")))
    for policy in (GP, PE):
        switch_rate = table.loc[table["policy"] == policy, "switch_rate_per_s_mean"].to_numpy()
        assert np.all(np.diff(switch_rate) < 0), (policy, switch_rate)


def test_vacancy_delay_grows_with_inter_sensing_duration():
    result = run_experiment(_load("vacancy_delay.ini"))
    table = aggregate(result)
    for policy in (GP, PE):
        delay = table.loc[table["policy"] == policy, "mean_vacancy_delay_ns_mean"].to_numpy()
        assert np.all(np.diff(delay) > 0), (policy, delay)
    assert all(r.vacancy_episodes > 0 for _, _, _, r in result.reports())


def test_comparative_scenarios_are_paired_and_deterministic():
    config = _load("switch_energy.ini", horizon=30_000_000_000, seeds=[1, 2])
    first = run_experiment(config)
    second = run_experiment(config, jobs=2)
    assert aggregate(first).to_csv(index=False) == aggregate(second).to_csv(index=False)
    for grid, seed in {(g, s) for g, s, _, _ in first.reports()}:
        hashes = {r.trace_hash for g, s, _, r in first.reports() if (g, s) == (grid, seed)}
        assert len(hashes) == 1
    assert "delta_switch_energy_pct" in aggregate(first).columns
