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

"""Module that generates the primary-user (PU) occupancy of the channels.

The activity of the PU on each channel is an alternating renewal process of
ON (busy) and OFF (idle) holding times drawn from an `OnOffModel`. Generated
traces are materialized as integer-nanosecond intervals so that the event
engine of `crn_csa.process.macsim` can query them exactly.
"""

import enum
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from crn_csa.process.dist import OnOffModel, ExpDist, equilibrium, sample, scale
from crn_csa.process.errors import InvalidParams, OutOfHorizon

LOGGER = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
# Holding times are clipped to this value before integer conversion
MAX_INTERVAL_NS = 2**62

TRACE_COLUMNS = ["channel", "state", "start_ns", "end_ns"]


class PuState(enum.Enum):
    """Occupancy state of a channel."""

    ON = "ON"
    OFF = "OFF"


class StartState(enum.Enum):
    """How the first interval of a trace is drawn.

    `STATIONARY_OFF` and `STATIONARY_ON` start the process at a renewal
    epoch in the given state. `STATIONARY_MIX` starts ON with probability
    equal to the duty cycle and draws the first holding time from the
    residual-life distribution, so the trace is stationary from time zero.
    """

    STATIONARY_OFF = "stationary_off"
    STATIONARY_ON = "stationary_on"
    STATIONARY_MIX = "stationary_mix"

    @classmethod
    def from_string(cls, text):
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise InvalidParams(f"Unknown start state '{text}' (expected one of: {choices}).")


@dataclass(frozen=True, eq=False)
class PuTrace:
    """Materialized PU activity of one channel over `[0, horizon)`.

    Parameters
    ----------
    channel : int
        Channel index.

    starts : numpy.ndarray
        Interval start times in nanoseconds, strictly increasing, `starts[0] == 0`.

    ends : numpy.ndarray
        Interval end times in nanoseconds, `ends[i] == starts[i + 1]` and
        `ends[-1] == horizon`.

    on : numpy.ndarray
        Boolean array, True for the ON intervals. States alternate.

    model : OnOffModel, optional
        Model the trace was drawn from (None for replayed or constant traces).

    seed : int, optional
        Global seed the trace was drawn with.
    """

    channel: int
    starts: np.ndarray
    ends: np.ndarray
    on: np.ndarray
    model: Optional[OnOffModel] = None
    seed: Optional[int] = None
    _on_ends: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        on_ends = np.cumsum(np.where(self.on, self.ends - self.starts, 0))
        object.__setattr__(self, "_on_ends", on_ends)

    @property
    def horizon(self):
        return int(self.ends[-1]) if self.ends.size else 0

    @property
    def n_intervals(self):
        return int(self.starts.size)

    @property
    def intervals(self):
        """List of `(PuState, start_ns, end_ns)` tuples."""
        return [
            (PuState.ON if on else PuState.OFF, int(s), int(e))
            for on, s, e in zip(self.on, self.starts, self.ends)
        ]

    def on_time(self):
        """Total ON time of the trace in nanoseconds."""
        return int(self._on_ends[-1]) if self._on_ends.size else 0

    def duty_cycle(self):
        """Fraction of the horizon the PU is ON."""
        return self.on_time() / self.horizon if self.horizon else 0.0


def channel_rng(seed, channel):
    """Random stream of one channel, spawned from the global seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(channel,)))


def _quantize(d, rng, size):
    """Draw `size` holding times in integer nanoseconds, resampling zero-length ones."""
    values = np.minimum(np.floor(sample(d, rng, size) * NS_PER_S + 0.5), MAX_INTERVAL_NS)
    values = values.astype(np.int64)
    empty = values <= 0
    while empty.any():
        redraw = sample(d, rng, int(empty.sum())) * NS_PER_S
        redraw = np.minimum(np.floor(redraw + 0.5), MAX_INTERVAL_NS)
        values[empty] = redraw.astype(np.int64)
        empty = values <= 0
    return values


def generate(model, horizon, seed, start_state=StartState.STATIONARY_MIX, channel=0):
    """Generate the PU activity of one channel.

    Parameters
    ----------
    model : OnOffModel
        ON/OFF model of the channel.

    horizon : int
        Length of the trace in nanoseconds.

    seed : int
        Global seed; the channel stream is spawned from `(seed, channel)`.

    start_state : StartState
        How the first interval is drawn.

    channel : int
        Channel index.

    Returns
    -------
    PuTrace
        Alternating intervals tiling `[0, horizon)`. The last interval is
        truncated at the horizon.
    """
    if horizon <= 0:
        raise InvalidParams(f"The trace horizon must be positive (got {horizon} ns).")
    if isinstance(start_state, str):
        start_state = StartState.from_string(start_state)
    rng = channel_rng(seed, channel)

    if start_state is StartState.STATIONARY_MIX:
        first_on = bool(rng.random() < model.duty_cycle)
        first_dist = equilibrium(model.on if first_on else model.off)
    else:
        first_on = start_state is StartState.STATIONARY_ON
        first_dist = model.on if first_on else model.off
    durations = [_quantize(first_dist, rng, 1)]
    states = [np.array([first_on])]
    total = int(durations[0][0])
    next_on = not first_on

    cycle_ns = (model.mean_on + model.mean_off) * NS_PER_S
    chunk = int(min(max(16, 1.1 * horizon / cycle_ns + 16), 1_000_000))
    while total < horizon:
        on_draws = _quantize(model.on, rng, chunk)
        off_draws = _quantize(model.off, rng, chunk)
        pair = (on_draws, off_draws) if next_on else (off_draws, on_draws)
        durations.append(np.column_stack(pair).ravel())
        states.append(np.tile([next_on, not next_on], chunk))
        total += int(durations[-1].sum())

    durations = np.concatenate(durations)
    on = np.concatenate(states)
    ends = np.cumsum(durations)
    last = int(np.searchsorted(ends, horizon, side="left"))
    ends = ends[: last + 1]
    ends[-1] = horizon
    starts = np.concatenate(([0], ends[:-1]))
    LOGGER.debug(f"> Generated {last + 1} PU intervals on channel {channel} (seed {seed})")
    return PuTrace(channel, starts, ends, on[: last + 1].copy(), model, seed)


def generate_traces(models, horizon, seed, start_state=StartState.STATIONARY_MIX):
    """Generate one independent trace per channel model."""
    return [generate(m, horizon, seed, start_state, channel=a) for a, m in enumerate(models)]


def constant_trace(channel, horizon, state):
    """Trace holding a single state over the whole horizon."""
    if horizon <= 0:
        raise InvalidParams(f"The trace horizon must be positive (got {horizon} ns).")
    return PuTrace(
        channel,
        np.array([0], dtype=np.int64),
        np.array([horizon], dtype=np.int64),
        np.array([PuState(state) is PuState.ON]),
    )


def idle_trace(channel, horizon):
    """Trace of a channel without primary user."""
    return constant_trace(channel, horizon, PuState.OFF)


def _check_time(trace, t):
    if t < 0 or t >= trace.horizon:
        raise OutOfHorizon(
            f"Time {t} ns is outside the trace of channel {trace.channel} "
            f"(horizon {trace.horizon} ns)."
        )


def state_at(trace, t):
    """State of the channel at time `t`; a boundary belongs to the interval starting there.

    Raises
    ------
    OutOfHorizon
        If `t` lies outside `[0, horizon)`.
    """
    _check_time(trace, t)
    index = int(np.searchsorted(trace.starts, t, side="right")) - 1
    return PuState.ON if trace.on[index] else PuState.OFF


def busy_during(trace, t0, t1):
    """Whether the PU is ON at any instant of the window `[t0, t1)`.

    The window is clipped to the horizon; an empty window is a point query at `t0`.
    """
    _check_time(trace, t0)
    t1 = min(t1, trace.horizon)
    if t1 <= t0:
        return state_at(trace, t0) is PuState.ON
    first = int(np.searchsorted(trace.starts, t0, side="right")) - 1
    last = int(np.searchsorted(trace.starts, t1, side="left"))
    return bool(trace.on[first:last].any())


def next_busy_start(trace, t):
    """Start of the first ON interval beginning at or after `t`, None if the PU stays idle."""
    index = int(np.searchsorted(trace.starts, t, side="left"))
    # states alternate
    for candidate in (index, index + 1):
        if candidate < trace.n_intervals and trace.on[candidate]:
            return int(trace.starts[candidate])
    return None


def on_time_between(trace, t0, t1):
    """ON time of the PU within `[t0, t1)` in nanoseconds."""
    t0 = max(t0, 0)
    t1 = min(t1, trace.horizon)
    if t1 <= t0:
        return 0
    first = int(np.searchsorted(trace.starts, t0, side="right")) - 1
    last = int(np.searchsorted(trace.starts, t1, side="left"))
    starts = np.maximum(trace.starts[first:last], t0)
    ends = np.minimum(trace.ends[first:last], t1)
    return int(np.sum(np.where(trace.on[first:last], ends - starts, 0)))


def scale_duty_cycle_length(model, factor):
    """Stretch the mean ON and OFF times of a model by `factor`, keeping its duty cycle."""
    return OnOffModel(scale(model.on, factor), scale(model.off, factor))


def with_duty_cycle(model, duty_cycle):
    """Rescale the ON rate of a model so its duty cycle equals `duty_cycle`.

    The OFF distribution is kept, the mean ON time becomes
    `duty_cycle / (1 - duty_cycle) * E(Y)`.
    """
    if not 0.0 < duty_cycle < 1.0:
        raise InvalidParams(f"The duty cycle must lie in (0, 1) (got {duty_cycle}).")
    mean_on = duty_cycle / (1.0 - duty_cycle) * model.mean_off
    return OnOffModel(ExpDist(1.0 / mean_on), model.off)


def traces_to_frame(traces):
    """Convert traces to a `channel,state,start_ns,end_ns` table."""
    frames = [
        pd.DataFrame(
            {
                "channel": trace.channel,
                "state": np.where(trace.on, PuState.ON.value, PuState.OFF.value),
                "start_ns": trace.starts,
                "end_ns": trace.ends,
            },
            columns=TRACE_COLUMNS,
        )
        for trace in traces
    ]
    if not frames:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def traces_from_frame(frame):
    """Rebuild traces from a table written by `traces_to_frame`.

    Raises
    ------
    InvalidParams
        If the intervals of a channel do not tile time with alternating states.
    """
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise InvalidParams(f"The trace table must contain the columns: {missing}.")
    traces = []
    for channel, rows in frame.groupby("channel", sort=True):
        rows = rows.sort_values("start_ns")
        starts = rows["start_ns"].to_numpy(dtype=np.int64)
        ends = rows["end_ns"].to_numpy(dtype=np.int64)
        on = (rows["state"].astype(str).str.upper() == PuState.ON.value).to_numpy()
        if starts[0] != 0 or np.any(ends[:-1] != starts[1:]) or np.any(ends <= starts):
            raise InvalidParams(f"Intervals of channel {channel} do not tile time from 0.")
        if np.any(on[1:] == on[:-1]):
            raise InvalidParams(f"States of channel {channel} do not alternate.")
        traces.append(PuTrace(int(channel), starts, ends, on))
    return traces


def trace_hash(traces):
    """Short SHA-256 digest identifying the PU activity of a set of traces."""
    digest = hashlib.sha256()
    for trace in traces:
        digest.update(np.int64(trace.channel).tobytes())
        digest.update(trace.starts.astype(np.int64).tobytes())
        digest.update(trace.ends.astype(np.int64).tobytes())
        digest.update(trace.on.astype(np.uint8).tobytes())
    return digest.hexdigest()[:16]
