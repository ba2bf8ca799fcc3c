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

from pathlib import Path

import pytest

from crn_csa.process.csa import PolicyKind
from crn_csa.process.errors import ConfigError, ParseError
from crn_csa.process.scenario import (
    aggregate,
    override_seeds,
    parse_config,
    parse_duration,
    parse_seeds,
    run_cell,
    run_experiment,
    run_scenario,
    trace_hashes,
)
from crn_csa.process.traffic import trace_hash

from conftest import MS, S

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
POLICIES = ["generalized_predictive", "predictive_exponential", "round_robin"]

TWO_CHANNELS = """
[scenario]
horizon = 20s
seeds = 1..3
policies = generalized_predictive, predictive_exponential, round_robin
reference_policy = predictive_exponential

[mac]
t_pu_allow = 1000ms

[channel.0]
on = exp(2.0)
off = hed(0.9:10, 0.1:0.1)
duty_cycle = 0.3

[channel.1]
on = exp(1.0)
off = exp(1.0)
initial_omega = 0.8
"""


def _config(text=TWO_CHANNELS, **changes):
    config = parse_config(text, "inline.ini")
    for key, value in changes.items():
        setattr(config, key, value)
    return config


@pytest.mark.parametrize(
    "text, expected",
    [
        ("40ms", 40 * MS),
        ("1.5s", 1_500_000_000),
        ("250", 250),
        ("50us", 50_000),
        ("1e-3s", MS),
        ("0.0000005ms", 1),
    ],
)
def test_parse_duration(text, expected):
    assert parse_duration(text) == expected


@pytest.mark.parametrize("text", ["abc", "10 min", "-5ms", ""])
def test_parse_duration_rejects_bad_values(text):
    with pytest.raises(ParseError):
        parse_duration(text)


def test_parse_seeds():
    assert parse_seeds("1..3, 7") == [1, 2, 3, 7]
    assert parse_seeds("42") == [42]
    with pytest.raises(ConfigError):
        parse_seeds(" , ")
    with pytest.raises(ParseError):
        parse_seeds("one")


def test_parse_config():
    config = _config()
    assert config.mac.n_channels == 2
    assert config.horizon == 20 * S
    assert config.seeds == [1, 2, 3]
    assert config.policies[1] is PolicyKind.PREDICTIVE_EXPONENTIAL
    assert config.reference_policy is PolicyKind.PREDICTIVE_EXPONENTIAL
    assert config.channels[0].model.duty_cycle == pytest.approx(0.3)
    assert config.channels[1].initial_omega == 0.8
    assert config.output_directory == Path("inline")
    assert config.grid == [""]


@pytest.mark.parametrize(
    "extra, error",
    [
        ("[channel.3]\non = exp(1)\noff = exp(1)\n", ConfigError),
        ("[radio]\ngain = 3\n", ConfigError),
        ("[energy]\np_cpu = 3\n", ConfigError),
        ("[outputs]\nformat = xml\n", ConfigError),
        ("[sweep]\nparameter = t_sense\n", ConfigError),
        ("[sweep]\nparameter = colour\nvalues = red\n", ConfigError),
        ("[channel.2]\non = exp(1)\n", ConfigError),
        ("[channel.2]\non = exp(1)\noff = exp(1)\nactive = maybe\n", ParseError),
        ("[channel.2]\non = exp(1)\noff = exp(1)\ninitial_omega = 2\n", ConfigError),
        ("[channel.2\non = exp(1)\n", ParseError),
    ],
)
def test_invalid_config(extra, error):
    with pytest.raises(error):
        parse_config(TWO_CHANNELS + "\n" + extra)


def test_inconsistent_scenario_section():
    with pytest.raises(ConfigError):
        parse_config(TWO_CHANNELS.replace("= predictive_exponential\n", "= greedy\n"))
    with pytest.raises(ConfigError):
        parse_config(TWO_CHANNELS.replace("horizon = 20s", "horizon = 20s\nwarmup = 1s"))
    with pytest.raises(ConfigError):
        parse_config("[scenario]\nhorizon = 1s\n")


def test_sweep_cells():
    config = parse_config(TWO_CHANNELS + "\n[sweep]\nparameter = t_pu_allow\nvalues = 500ms, 2s\n")
    assert config.grid == ["500ms", "2s"]
    _, mac = config.cell("2s")
    assert mac.t_pu_allow == 2 * S
    scaled = parse_config(TWO_CHANNELS + "\n[sweep]\nparameter = scale\nvalues = 1, 10\n")
    channels, _ = scaled.cell("10")
    assert channels[1].model.mean_off == pytest.approx(10.0)
    assert channels[1].model.duty_cycle == pytest.approx(0.5)


def test_every_shipped_config_parses():
    files = sorted(CONFIG_DIR.glob("*.ini"))
    assert files
    for path in files:
        config = parse_config(path.read_text(), str(path))
        assert config.channels


def test_empty_horizon_gives_a_zero_report():
    config = _config(horizon=0)
    outcome = run_scenario(config, PolicyKind.GENERALIZED_PREDICTIVE, 1)
    assert outcome.report.throughput_bps == 0.0
    assert outcome.report.energy_total == 0.0


def test_run_scenario_is_deterministic():
    config = _config()
    first = run_scenario(config, PolicyKind.RANDOM, 5).report
    second = run_scenario(config, PolicyKind.RANDOM, 5).report
    assert first.to_json() == second.to_json()


def test_seed_does_not_reach_a_channel_without_primary_user():
    text = (
        "[scenario]\nhorizon = 10s\nseeds = 1..3\n\n"
        "[channel.0]\non = exp(1)\noff = exp(1)\nactive = no\n"
    )
    config = parse_config(text)
    reports = [
        run_scenario(config, PolicyKind.GENERALIZED_PREDICTIVE, seed).report for seed in (1, 2, 3)
    ]
    for report in reports:
        report.seed = None
    assert reports[0] == reports[1] == reports[2]
    assert reports[0].frames["collided"] == 0


def test_policies_of_a_cell_share_the_traces():
    cell = run_cell(_config(), 0, 4)
    hashes = {outcome.report.trace_hash for outcome in cell.outcomes.values()}
    assert len(hashes) == 1
    assert set(cell.outcomes) == set(POLICIES)
    assert cell.traces is None


def test_cell_keeps_the_shared_traces_when_exported():
    cell = run_cell(_config(trace_out=True), 0, 4)
    assert [t.channel for t in cell.traces] == [0, 1]
    for outcome in cell.outcomes.values():
        assert outcome.report.trace_hash == trace_hash(cell.traces)
        assert outcome.events is not None


def test_aggregate_with_paired_deltas():
    result = run_experiment(_config())
    table = aggregate(result)
    assert len(table) == 3
    assert list(table["policy"]) == POLICIES
    assert (table["n_seeds"] == 3).all()
    for column in ("delta_switch_rate_pct", "delta_throughput_pct", "delta_switch_energy_pct"):
        assert column in table.columns
    reference = table[table["policy"] == "predictive_exponential"].iloc[0]
    assert reference["delta_throughput_pct"] == pytest.approx(0.0)
    hashes = trace_hashes(result)
    assert hashes.groupby("seed")["trace_hash"].nunique().eq(1).all()


def test_parallel_run_matches_sequential_run():
    config = override_seeds(_config(), None)
    sequential = aggregate(run_experiment(config, jobs=1))
    parallel = aggregate(run_experiment(config, jobs=2))
    assert sequential.equals(parallel)


def test_override_seeds():
    assert override_seeds(_config(), 9).seeds == [9]
    assert override_seeds(_config(), None).seeds == [1, 2, 3]


def test_scanning_receiver_with_series():
    text = TWO_CHANNELS.replace(
        "horizon = 20s", "horizon = 20s\nrendezvous_mode = cogmac_lite\nseries_step = 1s"
    )
    config = parse_config(text)
    outcome = run_scenario(config, PolicyKind.GREEDY, 2, keep_events=True)
    frames = outcome.report.frames
    assert frames["delivered"] <= frames["transmitted"] - frames["collided"]
    assert len(outcome.series) == 20
    assert {"PU", "TX"} <= set(outcome.events["actor"]) <= {"PU", "RX", "TX"}
