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

"""Module that simulates the MAC layer of the secondary transmitter and receiver.

The transmitter loop is: sense the operating channel for `t_sense`; when it
is idle, switch to TX mode, transmit a burst of frames, switch back to RX
mode and sense again; when it is busy, ask the CSA for a new channel and
switch to it. After `n_channels` consecutive busy sensings the transmitter
backs off for `t_backoff`.

The receiver scans the channels, locks on a channel carrying energy, leaves
it when the energy comes from the primary user and resumes scanning when no
frame arrives within `t_timeout`.

Both sides run as `simpy` processes with integer nanosecond timestamps.
"""

import bisect
import enum
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import List

import pandas as pd
import simpy

from crn_csa.process.csa import SensingResult
from crn_csa.process.errors import ConfigError
from crn_csa.process.traffic import busy_during

LOGGER = logging.getLogger(__name__)

MS = 1_000_000

EVENT_COLUMNS = ["time_ns", "actor", "event", "channel", "detail"]


@dataclass(frozen=True)
class MacParams:
    """PHY and MAC timings of the secondary network, in integer nanoseconds.

    Defaults are the values measured on the wireless test-bed, with a
    sensing duration of 40 ms and an inter-sensing duration (`t_pu_allow`)
    of 1 s.
    """

    t_sense: int = 40 * MS
    t_frame: int = 200 * MS
    t_inter: int = 0
    t_tx_mode: int = 15 * MS
    t_rx_mode: int = 150 * MS
    t_switch: int = 25 * MS
    t_backoff: int = 4 * MS
    t_timeout: int = 700 * MS
    t_pu_allow: int = 1000 * MS
    n_channels: int = 1
    frame_size_bits: int = 1500

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"MAC parameter {f.name} must be an integer (got {value!r}).")
            if value < 0:
                raise ConfigError(f"MAC parameter {f.name} must be nonnegative (got {value}).")
        if self.n_channels < 1:
            raise ConfigError(f"n_channels must be at least 1 (got {self.n_channels}).")
        if self.frame_size_bits < 1:
            raise ConfigError(f"frame_size_bits must be positive (got {self.frame_size_bits}).")
        if self.t_sense == 0:
            raise ConfigError("t_sense must be positive.")
        if self.t_frame == 0:
            raise ConfigError("t_frame must be positive.")

    def with_values(self, **changes):
        return replace(self, **changes)


class TxState(enum.Enum):
    SENSING = "sensing"
    SWITCHING_CHANNEL = "switching_channel"
    SWITCHING_TO_TX = "switching_to_tx"
    TRANSMITTING = "transmitting"
    SWITCHING_TO_RX = "switching_to_rx"
    BACKOFF = "backoff"


class RxState(enum.Enum):
    SCANNING = "scanning"
    LOCKED = "locked"


class Actor(enum.IntEnum):
    """Event source, valued by its priority at equal timestamps."""

    PU = 0
    TX = 1
    RX = 2


class EventKind(enum.Enum):
    PU_ON = "pu_on"
    PU_OFF = "pu_off"
    SENSE = "sense"
    SWITCH = "switch"
    STATE = "state"
    FRAME = "frame"
    SCAN = "scan"
    LOCK = "lock"
    LEAVE = "leave"
    TIMEOUT = "timeout"
    DELIVER = "deliver"


@dataclass(frozen=True)
class Event:
    time_ns: int
    actor: Actor
    kind: EventKind
    channel: int
    detail: str = ""


class EventLog:
    """Time-ordered list of simulation events.

    Events of one actor are appended in nondecreasing time; `merge` orders
    events of several actors by `(time, actor priority, insertion order)`.
    """

    def __init__(self, events=None):
        self.events: List[Event] = list(events or [])

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def append(self, time_ns, actor, kind, channel, detail=""):
        self.events.append(Event(int(time_ns), actor, kind, int(channel), detail))

    def of_kind(self, kind, actor=None):
        """Events of one kind, optionally restricted to one actor."""
        return [e for e in self.events if e.kind is kind and (actor is None or e.actor is actor)]

    @classmethod
    def merge(cls, *logs):
        events = [event for log in logs for event in log]
        order = sorted(
            range(len(events)), key=lambda i: (events[i].time_ns, int(events[i].actor), i)
        )
        return cls(events[i] for i in order)

    def to_frame(self):
        """Table with the columns `time_ns,actor,event,channel,detail`."""
        return pd.DataFrame(
            [(e.time_ns, e.actor.name, e.kind.value, e.channel, e.detail) for e in self.events],
            columns=EVENT_COLUMNS,
        )

    @classmethod
    def from_frame(cls, frame):
        missing = [c for c in EVENT_COLUMNS if c not in frame.columns]
        if missing:
            raise ConfigError(f"The event table must contain the columns: {missing}.")
        log = cls()
        for row in frame.itertuples(index=False):
            detail = "" if pd.isna(row.detail) else str(row.detail)
            log.append(row.time_ns, Actor[row.actor], EventKind(row.event), row.channel, detail)
        return log


def pu_event_log(traces):
    """Events marking every ON/OFF transition of the primary users."""
    log = EventLog()
    for trace in traces:
        for on, start in zip(trace.on, trace.starts):
            log.append(start, Actor.PU, EventKind.PU_ON if on else EventKind.PU_OFF, trace.channel)
    return EventLog.merge(log)


@dataclass
class Frame:
    """A frame sent by the secondary transmitter.

    Repeated initial frames share the sequence number of the frame they repeat.
    """

    seq: int
    channel: int
    start_ns: int
    end_ns: int
    collided: bool = False
    repeat: bool = False


def format_frame_detail(seq, collided, repeat=False):
    """Detail field of a frame event, e.g. `12:ok` or `12:collided:repeat`."""
    detail = f"{seq}:{'collided' if collided else 'ok'}"
    return detail + ":repeat" if repeat else detail


def parse_frame_detail(detail):
    """Return `(seq, collided, repeat)` from a frame event detail."""
    parts = detail.split(":")
    return int(parts[0]), parts[1] == "collided", "repeat" in parts[2:]


@dataclass
class StateSpan:
    state: TxState
    channel: int
    start_ns: int
    end_ns: int

    @property
    def duration_ns(self):
        return self.end_ns - self.start_ns


@dataclass
class Sensing:
    time_ns: int
    channel: int
    result: SensingResult


@dataclass
class TxResult:
    """Outcome of a transmitter run."""

    horizon: int
    log: EventLog = field(default_factory=EventLog)
    frames: List[Frame] = field(default_factory=list)
    spans: List[StateSpan] = field(default_factory=list)
    sensings: List[Sensing] = field(default_factory=list)
    switches: int = 0

    @property
    def transmitted(self):
        return len(self.frames)

    @property
    def collided(self):
        return sum(f.collided for f in self.frames)


@dataclass
class RxResult:
    """Frames delivered by the receiver, one entry per unique sequence number."""

    log: EventLog = field(default_factory=EventLog)
    delivered: List[Frame] = field(default_factory=list)

    @property
    def delivered_count(self):
        return len(self.delivered)


@dataclass(frozen=True)
class RepeatTime:
    duration_ns: int
    repetitions: int


def n_frames(params):
    """Number of frames transmitted between two sensings.

    Parameters
    ----------
    params : MacParams
        MAC timings.

    Returns
    -------
    int
        `floor((t_pu_allow - t_rx_mode - t_tx_mode) / (t_frame + t_inter))`,
        0 when the transmission window is negative.
    """
    window = params.t_pu_allow - params.t_rx_mode - params.t_tx_mode
    if window <= 0:
        return 0
    return window // (params.t_frame + params.t_inter)


def min_repeat_time(params):
    """Minimum repetition time of initial frames so the scanning receiver finds the transmitter.

    Returns
    -------
    RepeatTime
        `N_c t_sense + (N_c - 1) t_switch` and the number of frame
        repetitions needed to cover it.
    """
    duration = params.n_channels * params.t_sense + (params.n_channels - 1) * params.t_switch
    return RepeatTime(duration, math.ceil(duration / params.t_frame))


def check_receiver_timeout(params):
    """Raise `ConfigError` when `t_timeout` is too short for the receiver to wait for a burst."""
    burst = params.t_tx_mode + params.t_rx_mode + params.t_sense + params.t_frame
    floor = max(3 * params.t_frame, burst)
    if params.t_timeout < floor:
        raise ConfigError(
            f"t_timeout must be at least {floor} ns for the receiver (got {params.t_timeout} ns)."
        )


class SecondaryTransmitter:
    """Transmitter state machine running as a simpy process.

    Parameters
    ----------
    env : simpy.Environment
        Simulation environment.

    params : MacParams
        MAC timings.

    selector : crn_csa.process.csa.ChannelSelector
        Channel selection algorithm.

    traces : list of PuTrace
        PU activity of every channel.

    horizon : int
        End of the simulation in nanoseconds.

    repeat_initial : bool
        Repeat the first frame sent on a new channel to help rendezvous.
    """

    def __init__(self, env, params, selector, traces, horizon, repeat_initial=False):
        self.env = env
        self.params = params
        self.selector = selector
        self.traces = traces
        self.result = TxResult(horizon)
        self.n_frames = n_frames(params)
        self.repetitions = min_repeat_time(params).repetitions if repeat_initial else 1
        self._seq = 0
        self._fresh_channel = True
        env.process(self.start_process())

    def _span(self, state, channel, duration):
        if duration > 0:
            self._log(EventKind.STATE, channel, state.value)
            span = StateSpan(state, channel, self.env.now, self.env.now + duration)
            self.result.spans.append(span)
        return self.env.timeout(duration)

    def _log(self, kind, channel, detail=""):
        self.result.log.append(self.env.now, Actor.TX, kind, channel, detail)

    def start_process(self):
        channel = self.selector.select(self.env.now)
        consecutive_busy = 0
        while self.env.now < self.result.horizon:
            result = yield self.env.process(self.sense(channel))
            if result is None:
                return
            if result is SensingResult.IDLE:
                consecutive_busy = 0
                yield self.env.process(self.transmit(channel))
                continue
            consecutive_busy += 1
            if consecutive_busy >= self.params.n_channels:
                yield self._span(TxState.BACKOFF, channel, self.params.t_backoff)
                consecutive_busy = 0
                target = self.selector.select(self.env.now)
            else:
                target = self.selector.select(self.env.now, exclude=channel)
            if target != channel:
                yield self.env.process(self.switch(channel, target))
                channel = target

    def sense(self, channel):
        start = self.env.now
        if start >= self.result.horizon:
            return None
        yield self._span(TxState.SENSING, channel, self.params.t_sense)
        busy = busy_during(self.traces[channel], start, self.env.now)
        result = SensingResult.BUSY if busy else SensingResult.IDLE
        self.selector.observe(channel, result, self.env.now)
        self.result.sensings.append(Sensing(self.env.now, channel, result))
        self._log(EventKind.SENSE, channel, result.name.lower())
        return result

    def switch(self, source, target):
        self._log(EventKind.SWITCH, target, f"{source}->{target}")
        self.result.switches += 1
        self._fresh_channel = True
        yield self._span(TxState.SWITCHING_CHANNEL, target, self.params.t_switch)

    def transmit(self, channel):
        yield self._span(TxState.SWITCHING_TO_TX, channel, self.params.t_tx_mode)
        for index in range(self.n_frames):
            repeat = self._fresh_channel and 0 < index < self.repetitions
            if not repeat:
                self._seq += 1
            start = self.env.now
            yield self._span(TxState.TRANSMITTING, channel, self.params.t_frame)
            if self.env.now > self.result.horizon:
                return
            collided = busy_during(self.traces[channel], start, self.env.now)
            self._log(EventKind.FRAME, channel, format_frame_detail(self._seq, collided, repeat))
            frame = Frame(self._seq, channel, start, self.env.now, collided, repeat)
            self.result.frames.append(frame)
            yield self._span(TxState.TRANSMITTING, channel, self.params.t_inter)
        self._fresh_channel = False
        yield self._span(TxState.SWITCHING_TO_RX, channel, self.params.t_rx_mode)


def _close_spans(result):
    """Clip the state spans to the horizon."""
    spans = []
    for span in result.spans:
        if span.start_ns >= result.horizon:
            break
        spans.append(replace(span, end_ns=min(span.end_ns, result.horizon)))
    result.spans = spans
    result.log = EventLog(e for e in result.log if e.time_ns <= result.horizon)
    return result


def spans_from_log(log, horizon):
    """Rebuild the transmitter state spans from the state events of a log."""
    entries = [
        e
        for e in log
        if e.actor is Actor.TX and e.kind is EventKind.STATE and e.time_ns < horizon
    ]
    spans = []
    for current, following in zip(entries, entries[1:] + [None]):
        end = horizon if following is None else following.time_ns
        spans.append(StateSpan(TxState(current.detail), current.channel, current.time_ns, end))
    return spans


def run_tx(params, selector, traces, horizon, repeat_initial=False):
    """Run the secondary transmitter over the PU traces.

    Parameters
    ----------
    params : MacParams
        MAC timings.

    selector : crn_csa.process.csa.ChannelSelector
        Channel selection algorithm with its own belief state.

    traces : list of PuTrace
        PU activity of every channel, covering the horizon.

    horizon : int
        Simulated time in nanoseconds.

    repeat_initial : bool
        Repeat the first frame after each channel switch (rendezvous support).

    Returns
    -------
    TxResult
        Event log, frames, state spans, sensings and switch count.

    Raises
    ------
    ConfigError
        If the parameters leave no room for a frame or do not match the traces.
    """
    if len(traces) != params.n_channels or selector.policy.n_channels != params.n_channels:
        raise ConfigError(
            f"Got {len(traces)} traces and a {selector.policy.n_channels}-channel policy "
            f"for {params.n_channels} channels."
        )
    if n_frames(params) == 0:
        raise ConfigError(
            f"t_pu_allow ({params.t_pu_allow} ns) leaves no room for a frame after "
            f"t_tx_mode + t_rx_mode ({params.t_tx_mode + params.t_rx_mode} ns)."
        )
    if horizon <= 0:
        return TxResult(0)
    for trace in traces:
        if trace.horizon < horizon:
            raise ConfigError(
                f"The trace of channel {trace.channel} ends at {trace.horizon} ns, "
                f"before {horizon} ns."
            )
    env = simpy.Environment()
    transmitter = SecondaryTransmitter(env, params, selector, traces, horizon, repeat_initial)
    env.run(until=horizon + 1)
    result = _close_spans(transmitter.result)
    LOGGER.debug(
        f"> Transmitter: {result.transmitted} frames, {result.collided} collided, "
        f"{result.switches} switches"
    )
    return result


class SecondaryReceiver:
    """Receiver state machine replaying the frames of a transmitter run."""

    def __init__(self, env, params, traces, frames, horizon):
        self.env = env
        self.params = params
        self.traces = traces
        self.horizon = horizon
        self.frames = {a: [] for a in range(params.n_channels)}
        for frame in frames:
            self.frames[frame.channel].append(frame)
        self.starts = {a: [f.start_ns for f in fs] for a, fs in self.frames.items()}
        self.result = RxResult()
        self._seen = set()
        self.state = RxState.SCANNING
        env.process(self.start_process())

    def _log(self, kind, channel, detail=""):
        self.result.log.append(self.env.now, Actor.RX, kind, channel, detail)

    def _next_frame(self, channel, after, before):
        index = bisect.bisect_left(self.starts[channel], after)
        if index < len(self.frames[channel]) and self.frames[channel][index].start_ns < before:
            return self.frames[channel][index]
        return None

    def _frame_on_air(self, channel, t0, t1):
        index = bisect.bisect_left(self.starts[channel], t1) - 1
        return index >= 0 and self.frames[channel][index].end_ns > t0

    def start_process(self):
        channel = 0
        while self.env.now < self.horizon:
            start = self.env.now
            self._log(EventKind.SCAN, channel)
            yield self.env.timeout(self.params.t_sense)
            if self.env.now > self.horizon:
                return
            if busy_during(self.traces[channel], start, self.env.now):
                self._log(EventKind.LEAVE, channel, "pu")
            elif self._frame_on_air(channel, start, self.env.now):
                yield self.env.process(self.locked(channel))
            channel = (channel + 1) % self.params.n_channels
            if self.params.n_channels > 1:
                yield self.env.timeout(self.params.t_switch)

    def locked(self, channel):
        self._log(EventKind.LOCK, channel)
        self.state = RxState.LOCKED
        deadline = self.env.now + self.params.t_timeout
        while True:
            end = min(deadline, self.horizon)
            frame = self._next_frame(channel, self.env.now, end)
            if frame is None:
                yield self.env.timeout(max(0, end - self.env.now))
                self._log(EventKind.TIMEOUT, channel)
                self.state = RxState.SCANNING
                return
            yield self.env.timeout(frame.end_ns - self.env.now)
            if frame.collided:
                self._log(EventKind.LEAVE, channel, "pu")
                self.state = RxState.SCANNING
                return
            if frame.seq not in self._seen:
                self._seen.add(frame.seq)
                self.result.delivered.append(frame)
                self._log(EventKind.DELIVER, channel, str(frame.seq))
            deadline = self.env.now + self.params.t_timeout


def run_rx(params, traces, tx_result, horizon):
    """Replay a transmitter run at a scanning receiver.

    Parameters
    ----------
    params : MacParams
        MAC timings.

    traces : list of PuTrace
        PU activity the transmitter run used.

    tx_result : TxResult
        Transmitter run.

    horizon : int
        Simulated time in nanoseconds.

    Returns
    -------
    RxResult
        Delivered frames (unique sequence numbers) and the receiver event log.
    """
    if horizon <= 0:
        return RxResult()
    env = simpy.Environment()
    receiver = SecondaryReceiver(env, params, traces, tx_result.frames, horizon)
    env.run(until=horizon + 1)
    result = receiver.result
    result.log = EventLog(e for e in result.log if e.time_ns <= horizon)
    LOGGER.debug(f"> Receiver: {result.delivered_count} frames delivered")
    return result


def perfect_rendezvous(tx_result):
    """Receiver always listening on the operating channel; every clean frame is delivered."""
    result = RxResult()
    seen = set()
    for frame in tx_result.frames:
        if not frame.collided and frame.seq not in seen:
            seen.add(frame.seq)
            result.delivered.append(frame)
            result.log.append(
                frame.end_ns, Actor.RX, EventKind.DELIVER, frame.channel, str(frame.seq)
            )
    return result
