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

"""Module that runs simulation experiments described by scenario files.

A scenario file is an INI file (see `docs/config_format.rst`)::

    [scenario]
    horizon = 120s
    seeds = 1..30
    policies = generalized_predictive, predictive_exponential
    reference_policy = predictive_exponential

    [mac]
    t_pu_allow = 1000ms

    [channel.0]
    on = exp(2.0)
    off = hed(0.9:10, 0.1:0.1)
    duty_cycle = 0.3

An experiment is a grid of cells `(sweep value, seed)`. In each cell the PU
traces are generated once and every policy runs over them (paired design).
"""

import configparser
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from crn_csa.process.csa import ChannelSelector, PolicyKind, make_policy
from crn_csa.process.dist import OnOffModel, parse_distribution
from crn_csa.process.errors import ConfigError, ParseError
from crn_csa.process.macsim import (
    EventLog,
    MacParams,
    check_receiver_timeout,
    perfect_rendezvous,
    pu_event_log,
    run_rx,
    run_tx,
)
from crn_csa.process.metrics import EnergyModel, SimReport, build_report, time_series
from crn_csa.process.traffic import (
    PuTrace,
    StartState,
    generate,
    idle_trace,
    scale_duty_cycle_length,
    trace_hash,
    with_duty_cycle,
)

LOGGER = logging.getLogger(__name__)

UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(ns|us|ms|s)?\s*$")

RENDEZVOUS_MODES = ("perfect", "cogmac_lite")
# Spawn key of the random stream of the `random` policy, away from channel indices
SELECTOR_STREAM = 1_000_000
MAC_DURATIONS = [f.name for f in fields(MacParams) if f.name.startswith("t_")]
SWEEP_PARAMETERS = MAC_DURATIONS + ["scale", "duty_cycle"]
AGGREGATE_METRICS = [
    "throughput_bps",
    "switch_rate_per_s",
    "energy_switch_total",
    "energy_total",
    "first_vacancy_delay_ns",
    "mean_vacancy_delay_ns",
]
SECTION_KEYS = {
    "scenario": {
        "horizon",
        "seeds",
        "policies",
        "reference_policy",
        "rendezvous_mode",
        "start_state",
        "series_step",
    },
    "channel": {"on", "off", "scale", "duty_cycle", "initial_omega", "active"},
    "sweep": {"parameter", "values"},
    "outputs": {"directory", "trace_out"},
}
DELTA_COLUMNS = {
    "switch_rate_per_s": "delta_switch_rate_pct",
    "throughput_bps": "delta_throughput_pct",
    "energy_switch_total": "delta_switch_energy_pct",
}


def parse_duration(text):
    """Convert a duration such as `40ms`, `1.5s` or `250` (ns) to integer nanoseconds.

    Values are rounded half up to the nanosecond.
    """
    match = _DURATION.match(str(text))
    if not match:
        raise ParseError(
            f"Cannot parse duration '{text}' (expected a number with unit ns, us, ms or s)."
        )
    try:
        value = Decimal(match.group(1)) * UNITS[match.group(2) or "ns"]
    except InvalidOperation:
        raise ParseError(f"Cannot parse duration '{text}'.")
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def parse_seeds(text):
    """Parse a seed list such as `1, 2, 7` or a range `1..30`."""
    seeds = []
    for token in str(text).split(","):
        token = token.strip()
        if not token:
            continue
        try:
            if ".." in token:
                first, last = token.split("..", 1)
                seeds.extend(range(int(first), int(last) + 1))
            else:
                seeds.append(int(token))
        except ValueError:
            raise ParseError(f"Cannot parse seed '{token}'.")
    if not seeds:
        raise ConfigError("At least one seed is required.")
    if any(s < 0 or s >= 2**64 for s in seeds):
        raise ConfigError("Seeds must be 64-bit nonnegative integers.")
    return seeds


def _parse_bool(text, key):
    value = str(text).strip().lower()
    if value in ("yes", "true", "on", "1"):
        return True
    if value in ("no", "false", "off", "0"):
        return False
    raise ParseError(f"'{key}' must be yes or no (got '{text}').")


def _parse_float(text, key):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"'{key}' must be a number (got '{text}').")


@dataclass(frozen=True)
class ChannelConfig:
    """One channel of a scenario.

    Parameters
    ----------
    model : OnOffModel
        PU activity model (after duty cycle and scale adjustments).

    initial_omega : float, optional
        Initial belief, the stationary idle probability when omitted.

    active : bool
        False for channels without PU.
    """

    model: OnOffModel
    initial_omega: Optional[float] = None
    active: bool = True


@dataclass(frozen=True)
class Sweep:
    parameter: str
    values: List[str]


@dataclass
class ScenarioConfig:
    """Experiment definition read from a scenario file."""

    channels: List[ChannelConfig]
    mac: MacParams
    policies: List[PolicyKind]
    energy: EnergyModel = field(default_factory=EnergyModel)
    horizon: int = 60 * UNITS["s"]
    seeds: List[int] = field(default_factory=lambda: [0])
    rendezvous_mode: str = "perfect"
    start_state: StartState = StartState.STATIONARY_MIX
    reference_policy: Optional[PolicyKind] = None
    sweep: Optional[Sweep] = None
    series_step: Optional[int] = None
    output_directory: Path = Path("results")
    trace_out: bool = False
    source: str = ""

    def __post_init__(self):
        if not self.channels:
            raise ConfigError("A scenario needs at least one [channel.N] section.")
        if not self.policies:
            raise ConfigError("A scenario needs at least one policy.")
        if self.mac.n_channels != len(self.channels):
            self.mac = replace(self.mac, n_channels=len(self.channels))
        if self.rendezvous_mode not in RENDEZVOUS_MODES:
            raise ConfigError(
                f"rendezvous_mode must be one of {RENDEZVOUS_MODES} "
                f"(got '{self.rendezvous_mode}')."
            )
        if self.horizon < 0:
            raise ConfigError(f"The horizon must be nonnegative (got {self.horizon} ns).")
        if self.reference_policy is not None and self.reference_policy not in self.policies:
            raise ConfigError(
                f"The reference policy {self.reference_policy.value} is not listed in policies."
            )

    @property
    def models(self):
        return [c.model for c in self.channels]

    @property
    def grid(self):
        """Sweep values as written, or a single empty label without sweep."""
        return list(self.sweep.values) if self.sweep else [""]

    def cell(self, grid_value):
        """Channel configs and MAC parameters of one sweep value."""
        channels, mac = self.channels, self.mac
        if not self.sweep:
            return channels, mac
        parameter = self.sweep.parameter
        if parameter in MAC_DURATIONS:
            mac = replace(mac, **{parameter: parse_duration(grid_value)})
        elif parameter == "scale":
            factor = _parse_float(grid_value, "sweep value")
            channels = [
                replace(c, model=scale_duty_cycle_length(c.model, factor)) for c in channels
            ]
        elif parameter == "duty_cycle":
            duty = _parse_float(grid_value, "sweep value")
            channels = [replace(c, model=with_duty_cycle(c.model, duty)) for c in channels]
        return channels, mac


def _check_keys(section, allowed, name):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key(s) {unknown} in section [{name}].")


def _parse_channel(section, name):
    _check_keys(section, SECTION_KEYS["channel"], name)
    for key in ("on", "off"):
        if key not in section:
            raise ConfigError(f"Section [{name}] must define '{key}'.")
    model = OnOffModel(parse_distribution(section["on"]), parse_distribution(section["off"]))
    if "scale" in section:
        model = scale_duty_cycle_length(model, _parse_float(section["scale"], f"{name}.scale"))
    if "duty_cycle" in section:
        model = with_duty_cycle(model, _parse_float(section["duty_cycle"], f"{name}.duty_cycle"))
    omega = None
    if "initial_omega" in section:
        omega = _parse_float(section["initial_omega"], f"{name}.initial_omega")
        if not 0.0 <= omega <= 1.0:
            raise ConfigError(f"{name}.initial_omega must lie in [0, 1] (got {omega}).")
    active = _parse_bool(section.get("active", "yes"), f"{name}.active")
    return ChannelConfig(model, omega, active)


def _parse_mac(section):
    values = {}
    for key, text in section.items():
        if key in MAC_DURATIONS:
            values[key] = parse_duration(text)
        elif key == "frame_size_bits":
            try:
                values[key] = int(text)
            except ValueError:
                raise ParseError(f"frame_size_bits must be an integer (got '{text}').")
        else:
            raise ConfigError(f"Unknown key '{key}' in section [mac].")
    return values


def _parse_energy(section):
    values = {}
    for key, text in section.items():
        if key == "t_switch_delay":
            values[key] = parse_duration(text)
        elif key in ("p_sense", "p_transmit", "p_idle", "e_switch"):
            values[key] = _parse_float(text, f"energy.{key}")
        else:
            raise ConfigError(f"Unknown key '{key}' in section [energy].")
    return EnergyModel(**values)


def parse_config(text, source=""):
    """Parse the content of a scenario file.

    Parameters
    ----------
    text : str
        INI content.

    source : str
        File name used in messages and as default output location.

    Returns
    -------
    ScenarioConfig
        Validated experiment definition.

    Raises
    ------
    ParseError
        If a value or the INI structure cannot be parsed.

    ConfigError
        If the scenario is inconsistent.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<scenario>")
    except configparser.Error as e:
        raise ParseError(f"Malformed scenario file {source}: {e}")

    channel_sections = []
    for name in parser.sections():
        match = re.fullmatch(r"channel\.(\d+)", name)
        if match:
            channel_sections.append((int(match.group(1)), name))
        elif name not in ("scenario", "mac", "energy", "sweep", "outputs"):
            raise ConfigError(f"Unknown section [{name}] in {source}.")
    channel_sections.sort()
    if [index for index, _ in channel_sections] != list(range(len(channel_sections))):
        raise ConfigError(
            "Channel sections must be numbered [channel.0], [channel.1], ... without gaps."
        )
    channels = [_parse_channel(parser[name], name) for _, name in channel_sections]

    scenario = parser["scenario"] if parser.has_section("scenario") else {}
    _check_keys(scenario, SECTION_KEYS["scenario"], "scenario")
    policies = [
        PolicyKind.from_string(p)
        for p in scenario.get("policies", "generalized_predictive").split(",")
        if p.strip()
    ]
    reference = scenario.get("reference_policy")
    mac_section = parser["mac"] if parser.has_section("mac") else {}
    mac = MacParams(n_channels=max(1, len(channels)), **_parse_mac(mac_section))
    energy = _parse_energy(parser["energy"]) if parser.has_section("energy") else EnergyModel()

    sweep = None
    if parser.has_section("sweep"):
        section = parser["sweep"]
        _check_keys(section, SECTION_KEYS["sweep"], "sweep")
        parameter = section.get("parameter", "").strip()
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(
                f"Sweep parameter must be one of {SWEEP_PARAMETERS} (got '{parameter}')."
            )
        values = [v.strip() for v in section.get("values", "").split(",") if v.strip()]
        if not values:
            raise ConfigError("The sweep needs at least one value.")
        for value in values:
            if parameter in MAC_DURATIONS:
                number = parse_duration(value)
            else:
                number = _parse_float(value, "sweep value")
            if number <= 0:
                raise ConfigError(f"Sweep values must be positive (got '{value}').")
        sweep = Sweep(parameter, values)

    outputs = parser["outputs"] if parser.has_section("outputs") else {}
    _check_keys(outputs, SECTION_KEYS["outputs"], "outputs")
    default_directory = Path(source).with_suffix("") if source else Path("results")
    series_step = scenario.get("series_step")
    config = ScenarioConfig(
        channels=channels,
        mac=mac,
        policies=policies,
        energy=energy,
        horizon=parse_duration(scenario.get("horizon", "60s")),
        seeds=parse_seeds(scenario.get("seeds", "0")),
        rendezvous_mode=scenario.get("rendezvous_mode", "perfect").strip(),
        start_state=StartState.from_string(scenario.get("start_state", "stationary_mix")),
        reference_policy=PolicyKind.from_string(reference) if reference else None,
        sweep=sweep,
        series_step=parse_duration(series_step) if series_step else None,
        output_directory=Path(outputs.get("directory", str(default_directory))),
        trace_out=_parse_bool(outputs.get("trace_out", "no"), "outputs.trace_out"),
        source=source,
    )
    for grid_value in config.grid:
        config.cell(grid_value)
    return config


@dataclass
class RunOutcome:
    """Report and raw results of one simulation run."""

    report: SimReport
    events: Optional[pd.DataFrame] = None
    series: Optional[pd.DataFrame] = None


def make_traces(channels, horizon, seed, start_state):
    """PU traces of a cell; inactive channels get an idle trace."""
    return [
        generate(c.model, horizon, seed, start_state, channel=a)
        if c.active
        else idle_trace(a, horizon)
        for a, c in enumerate(channels)
    ]


def run_scenario(config, policy, seed, grid_value="", traces=None, keep_events=False):
    """Run one policy over one cell of a scenario.

    Parameters
    ----------
    config : ScenarioConfig
        Experiment definition.

    policy : PolicyKind
        Channel selection algorithm.

    seed : int
        Seed of the PU traces and of the random policy.

    grid_value : str
        Sweep value of the cell.

    traces : list of PuTrace, optional
        Pre-generated traces shared with other policies.

    keep_events : bool
        Keep the event log table in the outcome.

    Returns
    -------
    RunOutcome
        Metrics of the run.
    """
    channels, mac = config.cell(grid_value)
    horizon = config.horizon
    if horizon == 0:
        return RunOutcome(build_report(None, None, mac, config.energy, 0, policy.value, seed))
    if traces is None:
        traces = make_traces(channels, horizon, seed, config.start_state)
    omega = [c.initial_omega for c in channels]
    initial = None if all(w is None for w in omega) else [
        c.model.idle_probability if c.initial_omega is None else c.initial_omega for c in channels
    ]
    csa = make_policy(policy, [c.model for c in channels], initial)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(SELECTOR_STREAM,)))
    selector = ChannelSelector(csa, rng)
    cogmac = config.rendezvous_mode == "cogmac_lite"
    tx = run_tx(mac, selector, traces, horizon, repeat_initial=cogmac)
    if cogmac:
        check_receiver_timeout(mac)
        rx = run_rx(mac, traces, tx, horizon)
    else:
        rx = perfect_rendezvous(tx)
    report = build_report(
        tx, rx, mac, config.energy, horizon, policy.value, seed, trace_hash(traces), traces
    )
    outcome = RunOutcome(report)
    if keep_events:
        outcome.events = EventLog.merge(pu_event_log(traces), tx.log, rx.log).to_frame()
    if config.series_step:
        outcome.series = time_series(tx, rx, mac, config.energy, config.series_step)
    return outcome


@dataclass
class CellResult:
    grid_index: int
    seed: int
    outcomes: Dict[str, RunOutcome]
    traces: Optional[List[PuTrace]] = None


def run_cell(config, grid_index, seed):
    """Run every policy of a scenario over the shared traces of one cell."""
    grid_value = config.grid[grid_index]
    channels, _ = config.cell(grid_value)
    traces = None
    if config.horizon > 0:
        traces = make_traces(channels, config.horizon, seed, config.start_state)
    outcomes = {
        policy.value: run_scenario(
            config, policy, seed, grid_value, traces, keep_events=config.trace_out
        )
        for policy in config.policies
    }
    LOGGER.info(f"> Cell {grid_value or '-'} / seed {seed} done")
    result = CellResult(grid_index, seed, outcomes)
    if config.trace_out and traces is not None:
        result.traces = traces
    return result


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    cells: List[CellResult]

    def reports(self):
        """`(grid value, seed, policy, SimReport)` tuples in deterministic order."""
        order = {p.value: i for i, p in enumerate(self.config.policies)}
        rows = [
            (
                cell.grid_index,
                cell.seed,
                order[policy],
                self.config.grid[cell.grid_index],
                policy,
                o.report,
            )
            for cell in self.cells
            for policy, o in cell.outcomes.items()
        ]
        rows.sort(key=lambda r: r[:3])
        return [(r[3], r[1], r[4], r[5]) for r in rows]


def run_experiment(config, jobs=1):
    """Run every cell of an experiment, in parallel when `jobs > 1`.

    Results are sorted by `(sweep value, seed)` and do not depend on `jobs`.
    """
    tasks = [(g, s) for g in range(len(config.grid)) for s in config.seeds]
    LOGGER.info(
        f"> Running {len(tasks)} cells x {len(config.policies)} policies "
        f"({config.mac.n_channels} channels, horizon {config.horizon} ns)"
    )
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, config, g, s) for g, s in tasks]
            cells = [f.result() for f in futures]
    else:
        cells = [run_cell(config, g, s) for g, s in tasks]
    cells.sort(key=lambda c: (c.grid_index, c.seed))
    return ExperimentResult(config, cells)


def _paired_delta(values, reference):
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(reference != 0, (values - reference) / reference * 100.0, np.nan)
    if np.all(np.isnan(delta)):
        return float("nan")
    return float(np.nanmean(delta))


def aggregate(result):
    """Mean and sample standard deviation of the metrics across seeds.

    With several policies, `delta_*_pct` columns hold the mean over seeds of
    the paired relative difference to the reference policy, in percent.

    Returns
    -------
    pandas.DataFrame
        One row per `(sweep value, policy)`.
    """
    config = result.config
    reference = (config.reference_policy or config.policies[0]).value
    records = [
        {
            "grid": grid,
            "seed": seed,
            "policy": policy,
            **{m: getattr(r, m) for m in AGGREGATE_METRICS},
        }
        for grid, seed, policy, r in result.reports()
    ]
    table = pd.DataFrame(records)
    rows = []
    for grid_value in config.grid:
        for policy in config.policies:
            in_grid = table["grid"] == grid_value
            subset = table[in_grid & (table["policy"] == policy.value)].sort_values("seed")
            row = {
                "parameter": config.sweep.parameter if config.sweep else "",
                "value": grid_value,
                "policy": policy.value,
                "n_seeds": len(subset),
            }
            for metric in AGGREGATE_METRICS:
                values = subset[metric].to_numpy(dtype=float)
                row[f"{metric}_mean"] = float(np.mean(values))
                row[f"{metric}_std"] = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
            if len(config.policies) > 1:
                base = table[in_grid & (table["policy"] == reference)].sort_values("seed")
                for metric, column in DELTA_COLUMNS.items():
                    row[column] = _paired_delta(
                        subset[metric].to_numpy(dtype=float), base[metric].to_numpy(dtype=float)
                    )
            rows.append(row)
    return pd.DataFrame(rows)


def trace_hashes(result):
    """Trace hash of every `(sweep value, seed, policy)`, to verify the paired design."""
    return pd.DataFrame(
        [(grid, seed, policy, r.trace_hash) for grid, seed, policy, r in result.reports()],
        columns=["value", "seed", "policy", "trace_hash"],
    )


def override_seeds(config, seed):
    """Copy of a config running a single seed."""
    if seed is None:
        return config
    return replace(config, seeds=[int(seed)])
