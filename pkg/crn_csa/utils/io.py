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

"""Module for input/output operations with files involved in the crn_csa simulator."""

import json
import logging
import re
from pathlib import Path

import pandas as pd

from crn_csa.process.errors import ConfigError
from crn_csa.process.metrics import SimReport
from crn_csa.process.scenario import aggregate, parse_config, trace_hashes
from crn_csa.process.traffic import traces_from_frame, traces_to_frame

LOGGER = logging.getLogger(__name__)


def load_csv(csv_file: str):
    """Load content of a CSV file.

    Parameters
    ----------
    csv_file : str
        Path to CSV file.

    Returns
    -------
    data : pd.DataFrame
        Dataframe loaded from CSV file.
    """
    return pd.read_csv(csv_file)


def save_csv(data: pd.DataFrame, csv_file):
    """Save a dataframe to a CSV file without index, creating parent directories."""
    csv_file = Path(csv_file)
    csv_file.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(csv_file, index=False)


def load_json(json_file: str):
    """Load content of a JSON file.

    Parameters
    ----------
    json_file : str
        Path to JSON file.

    Returns
    -------
    data : dict
        Dictionary loaded from JSON file.
    """
    with open(json_file) as f:
        return json.load(f)


def load_scenario(config_file):
    """Load and validate a scenario file.

    Raises
    ------
    ConfigError
        If the file does not exist.
    """
    config_file = Path(config_file)
    if not config_file.is_file():
        raise ConfigError(f"Scenario file {config_file} does not exist.")
    return parse_config(config_file.read_text(), str(config_file))


def save_report(report: SimReport, json_file):
    """Save a simulation report in JSON format with sorted keys."""
    json_file = Path(json_file)
    json_file.parent.mkdir(parents=True, exist_ok=True)
    json_file.write_text(report.to_json() + "\n")


def load_report(json_file):
    """Load a simulation report saved by `save_report`."""
    return SimReport.from_dict(load_json(json_file))


def save_traces(traces, csv_file):
    """Save PU traces in CSV format (`channel,state,start_ns,end_ns`)."""
    save_csv(traces_to_frame(traces), csv_file)


def load_traces(csv_file):
    """Load PU traces saved by `save_traces`."""
    return traces_from_frame(load_csv(csv_file))


def _slug(text):
    return re.sub(r"[^A-Za-z0-9.]+", "_", str(text)).strip("_") or "base"


def save_experiment(result, output_dir):
    """Write the outputs of an experiment.

    Files are `aggregate.csv`, `trace_hashes.csv`, one JSON report per run
    under `runs/`, and, when traces are kept, the PU traces, event logs and
    time series of every cell under `traces/`.

    Returns
    -------
    pathlib.Path
        Path of the aggregate table.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    for grid, seed, policy, report in result.reports():
        save_report(report, output_dir / "runs" / f"{_slug(grid)}_seed{seed}_{policy}.json")
    for cell in result.cells:
        label = f"{_slug(result.config.grid[cell.grid_index])}_seed{cell.seed}"
        if cell.traces is not None:
            save_traces(cell.traces, output_dir / "traces" / f"{label}_pu.csv")
        for policy, outcome in cell.outcomes.items():
            if outcome.events is not None:
                save_csv(outcome.events, output_dir / "traces" / f"{label}_{policy}_events.csv")
            if outcome.series is not None:
                save_csv(outcome.series, output_dir / "series" / f"{label}_{policy}.csv")
    save_csv(trace_hashes(result), output_dir / "trace_hashes.csv")
    aggregate_file = output_dir / "aggregate.csv"
    save_csv(aggregate(result), aggregate_file)
    LOGGER.info(f"> Results saved in {output_dir}")
    return aggregate_file
