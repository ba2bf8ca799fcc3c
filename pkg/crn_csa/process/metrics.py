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

"""Module that computes the evaluation metrics of a simulation run.

Metrics are the average throughput at the receiver, the channel switch rate
of the transmitter, the delay to find a vacant channel and the energy spent
by the transmitter.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from crn_csa.process.csa import SensingResult
from crn_csa.process.errors import InvalidParams, ZeroElapsed
from crn_csa.process.macsim import (
    Actor,
    EventKind,
    TxState,
    n_frames,
    parse_frame_detail,
    spans_from_log,
)
from crn_csa.process.traffic import next_busy_start

LOGGER = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000

SERIES_COLUMNS = ["time_ns", "throughput_bps", "switches_cum", "energy_j"]


@dataclass(frozen=True)
class EnergyModel:
    """Power draw of the secondary transmitter.

    Parameters
    ----------
    p_sense : float
        Sensing power in mW.

    p_transmit : float
        Transmission power in mW.

    p_idle : float
        Power in mW while backing off or switching between RX and TX modes.

    e_switch : float
        Energy of one channel switch in µJ.

    t_switch_delay : int
        Hardware delay of one channel switch in ns.
    """

    p_sense: float = 40.0
    p_transmit: float = 16.9
    p_idle: float = 69.5
    e_switch: float = 20.0
    t_switch_delay: int = 50_000

    def __post_init__(self):
        for name in ("p_sense", "p_transmit", "p_idle", "e_switch", "t_switch_delay"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidParams(
                    f"Energy model parameter {name} must be nonnegative (got {value})."
                )

    def power_mw(self, state):
        """Power drawn in a transmitter state; channel switching is billed per switch."""
        if state is TxState.SENSING:
            return self.p_sense
        if state is TxState.TRANSMITTING:
            return self.p_transmit
        if state is TxState.SWITCHING_CHANNEL:
            return 0.0
        return self.p_idle


@dataclass(frozen=True)
class VacancyDelay:
    """Delay from the start of a run to its first idle sensing, and whether one occurred."""

    delay_ns: int
    found: bool


@dataclass
class SimReport:
    """Metrics of one simulation run.

    Field names are the keys of the JSON report.
    """

    horizon_ns: int = 0
    throughput_bps: float = 0.0
    avg_throughput_series: List[Tuple[int, float]] = field(default_factory=list)
    switch_count: int = 0
    switch_rate_per_s: float = 0.0
    switch_delay_total_ns: int = 0
    first_vacancy_delay_ns: int = 0
    first_vacancy_found: bool = False
    mean_vacancy_delay_ns: float = 0.0
    vacancy_episodes: int = 0
    energy_by_state: Dict[str, float] = field(default_factory=dict)
    energy_switch_total: float = 0.0
    frames: Dict[str, int] = field(
        default_factory=lambda: {"transmitted": 0, "collided": 0, "delivered": 0}
    )
    policy: str = ""
    seed: Optional[int] = None
    trace_hash: str = ""

    @property
    def energy_total(self):
        return sum(self.energy_by_state.values()) + self.energy_switch_total

    def to_dict(self):
        report = asdict(self)
        report["avg_throughput_series"] = [list(point) for point in self.avg_throughput_series]
        report["energy_total"] = self.energy_total
        return report

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, report):
        report = dict(report)
        report.pop("energy_total", None)
        series = report.get("avg_throughput_series", [])
        report["avg_throughput_series"] = [tuple(p) for p in series]
        return cls(**report)


def _seconds(elapsed_ns, what):
    if elapsed_ns <= 0:
        raise ZeroElapsed(f"Cannot compute the {what} over {elapsed_ns} ns.")
    return elapsed_ns / NS_PER_S


def throughput(frames_delivered, frame_size_bits, elapsed_ns):
    """Average throughput `N_F * frame_size / t` in bits per second.

    Raises
    ------
    ZeroElapsed
        If `elapsed_ns <= 0`.
    """
    return frames_delivered * frame_size_bits / _seconds(elapsed_ns, "throughput")


def switch_rate(switches, elapsed_ns):
    """Channel switches per second."""
    return switches / _seconds(elapsed_ns, "switch rate")


def benchmark_throughput(params):
    """Throughput of a transmitter that always finds its channel idle."""
    frames = n_frames(params)
    burst = frames * (params.t_frame + params.t_inter)
    cycle = params.t_sense + params.t_tx_mode + burst + params.t_rx_mode
    return throughput(frames, params.frame_size_bits, cycle)


def first_vacancy_delay(log, horizon):
    """Time from the start of the run to the first idle sensing result.

    Parameters
    ----------
    log : EventLog
        Transmitter event log.

    horizon : int
        Simulated time, returned when no idle channel was found.

    Returns
    -------
    VacancyDelay
        Delay in nanoseconds and whether an idle channel was found.
    """
    for event in log.of_kind(EventKind.SENSE, Actor.TX):
        if event.detail == "idle":
            return VacancyDelay(event.time_ns, True)
    LOGGER.warning(f"No idle channel found within {horizon} ns")
    return VacancyDelay(horizon, False)


def vacancy_delays(sensings, traces):
    """Delays from each PU return on the operating channel to the next idle sensing.

    The operating channel is the one last sensed idle. An episode starts when
    the PU turns ON on it, which the transmitter only notices at its next
    sensing, and ends at the next idle sensing on any channel. Episodes still
    open at the horizon are dropped.

    Parameters
    ----------
    sensings : list of Sensing
        Sensing results of the transmitter, in time order.

    traces : list of PuTrace
        PU activity of every channel.

    Returns
    -------
    list of int
        Delay of every completed episode in nanoseconds.
    """
    delays = []
    operating = returned = None
    for sensing in sensings:
        if sensing.result is SensingResult.IDLE:
            if returned is not None:
                delays.append(sensing.time_ns - returned)
            operating, returned = sensing, None
        elif operating is not None and sensing.channel == operating.channel:
            returned = next_busy_start(traces[sensing.channel], operating.time_ns)
            operating = None
    return delays


def energy(spans, switches, model):
    """Energy spent by the transmitter.

    Parameters
    ----------
    spans : list of StateSpan
        Time-accounted transmitter states.

    switches : int
        Number of channel switches.

    model : EnergyModel
        Power figures.

    Returns
    -------
    energy_by_state : dict
        Joules spent in every state, keyed by state name.

    energy_switch_total : float
        Joules spent switching channels.
    """
    by_state = {}
    for state in TxState:
        dwell = sum(s.duration_ns for s in spans if s.state is state)
        by_state[state.value] = model.power_mw(state) * 1e-3 * dwell / NS_PER_S
    return by_state, switches * model.e_switch * 1e-6


def energy_from_log(log, horizon, model):
    """Recompute the transmitter energy from an event log alone."""
    spans = spans_from_log(log, horizon)
    switches = len(log.of_kind(EventKind.SWITCH, Actor.TX))
    return energy(spans, switches, model)


def frame_counts(log):
    """Transmitted and collided frames recorded in a transmitter log."""
    transmitted = collided = 0
    for event in log:
        if event.actor is Actor.TX and event.kind is EventKind.FRAME:
            transmitted += 1
            collided += parse_frame_detail(event.detail)[1]
    return transmitted, collided


def delivery_series(delivered, frame_size_bits):
    """Average throughput at each delivery instant, `(time_ns, bps)` points."""
    times = sorted(f.end_ns for f in delivered)
    return [(t, throughput(i + 1, frame_size_bits, t)) for i, t in enumerate(times)]


def build_report(
    tx_result,
    rx_result,
    params,
    model,
    horizon,
    policy="",
    seed=None,
    trace_hash="",
    traces=None,
):
    """Assemble the `SimReport` of one run.

    An empty horizon yields an all-zero report. The episode vacancy delay
    needs the PU `traces` and stays zero without them.
    """
    report = SimReport(horizon_ns=int(horizon), policy=policy, seed=seed, trace_hash=trace_hash)
    if horizon <= 0:
        report.energy_by_state = {state.value: 0.0 for state in TxState}
        return report
    delivered = rx_result.delivered_count
    report.throughput_bps = throughput(delivered, params.frame_size_bits, horizon)
    report.avg_throughput_series = delivery_series(rx_result.delivered, params.frame_size_bits)
    report.switch_count = tx_result.switches
    report.switch_rate_per_s = switch_rate(tx_result.switches, horizon)
    report.switch_delay_total_ns = tx_result.switches * model.t_switch_delay
    vacancy = first_vacancy_delay(tx_result.log, horizon)
    report.first_vacancy_delay_ns = vacancy.delay_ns
    report.first_vacancy_found = vacancy.found
    if traces is not None:
        delays = vacancy_delays(tx_result.sensings, traces)
        report.vacancy_episodes = len(delays)
        report.mean_vacancy_delay_ns = float(np.mean(delays)) if delays else 0.0
    report.energy_by_state, report.energy_switch_total = energy(
        tx_result.spans, tx_result.switches, model
    )
    report.frames = {
        "transmitted": tx_result.transmitted,
        "collided": tx_result.collided,
        "delivered": delivered,
    }
    return report


def time_series(tx_result, rx_result, params, model, step_ns):
    """Sample the throughput, cumulative switches and cumulative energy on a time grid.

    Parameters
    ----------
    tx_result : TxResult
        Transmitter run.

    rx_result : RxResult
        Receiver run.

    params : MacParams
        MAC timings (frame size).

    model : EnergyModel
        Power figures.

    step_ns : int
        Grid step in nanoseconds.

    Returns
    -------
    pandas.DataFrame
        Table with the columns `time_ns,throughput_bps,switches_cum,energy_j`.
    """
    if step_ns <= 0:
        raise InvalidParams(f"The series step must be positive (got {step_ns} ns).")
    horizon = tx_result.horizon
    grid = np.arange(step_ns, horizon + 1, step_ns, dtype=np.int64)
    deliveries = np.sort(np.array([f.end_ns for f in rx_result.delivered], dtype=np.int64))
    switch_times = np.sort(np.array(
        [e.time_ns for e in tx_result.log.of_kind(EventKind.SWITCH, Actor.TX)], dtype=np.int64
    ))
    starts = np.array([s.start_ns for s in tx_result.spans], dtype=np.int64)
    ends = np.array([s.end_ns for s in tx_result.spans], dtype=np.int64)
    power = np.array([model.power_mw(s.state) for s in tx_result.spans], dtype=float)

    rows = []
    for t in grid:
        n_delivered = int(np.searchsorted(deliveries, t, side="right"))
        n_switches = int(np.searchsorted(switch_times, t, side="right"))
        dwell = np.clip(np.minimum(ends, t) - starts, 0, None)
        joules = float(np.sum(power * 1e-3 * dwell / NS_PER_S))
        joules += n_switches * model.e_switch * 1e-6
        rows.append(
            (int(t), throughput(n_delivered, params.frame_size_bits, int(t)), n_switches, joules)
        )
    return pd.DataFrame(rows, columns=SERIES_COLUMNS)
