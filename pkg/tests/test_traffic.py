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

import numpy as np
import pandas as pd
import pytest

from crn_csa.process.dist import ExpDist, OnOffModel
from crn_csa.process.errors import InvalidParams, OutOfHorizon
from crn_csa.process.traffic import (
    PuState,
    PuTrace,
    StartState,
    busy_during,
    constant_trace,
    generate,
    generate_traces,
    idle_trace,
    next_busy_start,
    on_time_between,
    scale_duty_cycle_length,
    state_at,
    trace_hash,
    traces_from_frame,
    traces_to_frame,
    with_duty_cycle,
)

from conftest import MS, S


def _trace(on, bounds):
    bounds = np.asarray(bounds, dtype=np.int64)
    return PuTrace(0, bounds[:-1], bounds[1:], np.asarray(on))


def test_generated_trace_tiles_the_horizon(hed_model):
    trace = generate(hed_model, 60 * S, seed=3)
    assert trace.starts[0] == 0
    assert trace.horizon == 60 * S
    np.testing.assert_array_equal(trace.ends[:-1], trace.starts[1:])
    assert np.all(trace.ends > trace.starts)
    assert np.all(trace.on[1:] != trace.on[:-1])


def test_generation_is_deterministic_per_seed_and_channel(hed_model):
    a = generate_traces([hed_model] * 2, 30 * S, seed=11)
    b = generate_traces([hed_model] * 2, 30 * S, seed=11)
    c = generate_traces([hed_model] * 2, 30 * S, seed=12)
    assert trace_hash(a) == trace_hash(b)
    assert trace_hash(a) != trace_hash(c)
    assert not np.array_equal(a[0].starts[:5], a[1].starts[:5])


def test_long_trace_reaches_the_model_duty_cycle():
    model = OnOffModel(ExpDist(2.0), ExpDist(0.5))
    trace = generate(model, 400_000 * S, seed=5)
    assert trace.duty_cycle() == pytest.approx(model.duty_cycle, abs=0.01)


@pytest.mark.parametrize(
    "start_state, first_on",
    [
        (StartState.STATIONARY_OFF, False),
        (StartState.STATIONARY_ON, True),
        ("stationary_on", True),
    ],
)
def test_start_state(symmetric_model, start_state, first_on):
    assert bool(generate(symmetric_model, 10 * S, 1, start_state).on[0]) is first_on


def test_generate_rejects_empty_horizon(symmetric_model):
    with pytest.raises(InvalidParams):
        generate(symmetric_model, 0, 1)
    with pytest.raises(InvalidParams):
        StartState.from_string("warm")


def test_state_at_boundaries():
    trace = _trace([False, True, False], [0, 10 * MS, 20 * MS, 30 * MS])
    assert state_at(trace, 0) is PuState.OFF
    assert state_at(trace, 10 * MS - 1) is PuState.OFF
    assert state_at(trace, 10 * MS) is PuState.ON
    assert state_at(trace, 20 * MS) is PuState.OFF
    for t in (-1, 30 * MS):
        with pytest.raises(OutOfHorizon):
            state_at(trace, t)


def test_busy_during_is_half_open():
    trace = _trace([False, True, False], [0, 10 * MS, 20 * MS, 30 * MS])
    assert not busy_during(trace, 0, 10 * MS)
    assert busy_during(trace, 0, 10 * MS + 1)
    assert busy_during(trace, 19 * MS, 21 * MS)
    assert not busy_during(trace, 20 * MS, 40 * MS)
    assert busy_during(trace, 15 * MS, 15 * MS)


def test_next_busy_start():
    trace = _trace([False, True, False, True], [0, 10 * MS, 20 * MS, 30 * MS, 40 * MS])
    assert next_busy_start(trace, 0) == 10 * MS
    assert next_busy_start(trace, 10 * MS) == 10 * MS
    assert next_busy_start(trace, 12 * MS) == 30 * MS
    assert next_busy_start(trace, 31 * MS) is None
    assert next_busy_start(idle_trace(0, S), 0) is None


def test_on_time_between():
    trace = _trace([False, True, False], [0, 10 * MS, 20 * MS, 30 * MS])
    assert on_time_between(trace, 0, 30 * MS) == 10 * MS
    assert on_time_between(trace, 15 * MS, 25 * MS) == 5 * MS
    assert on_time_between(trace, 25 * MS, 20 * MS) == 0
    assert trace.on_time() == 10 * MS
    assert trace.duty_cycle() == pytest.approx(1 / 3)


def test_constant_traces():
    trace = idle_trace(2, S)
    assert trace.channel == 2
    assert trace.intervals == [(PuState.OFF, 0, S)]
    assert busy_during(constant_trace(0, S, PuState.ON), 0, S)
    with pytest.raises(InvalidParams):
        idle_trace(0, 0)


def test_scaling_keeps_the_duty_cycle(hed_model):
    scaled = scale_duty_cycle_length(hed_model, 10.0)
    assert scaled.duty_cycle == pytest.approx(hed_model.duty_cycle)
    assert scaled.mean_off == pytest.approx(10 * hed_model.mean_off)


def test_with_duty_cycle_keeps_the_off_time(hed_model):
    model = with_duty_cycle(hed_model, 0.8)
    assert model.duty_cycle == pytest.approx(0.8)
    assert model.off == hed_model.off
    with pytest.raises(InvalidParams):
        with_duty_cycle(hed_model, 1.0)


def test_trace_table_round_trip(hed_model):
    traces = generate_traces([hed_model] * 3, 20 * S, seed=2)
    frame = traces_to_frame(traces)
    assert list(frame.columns) == ["channel", "state", "start_ns", "end_ns"]
    assert set(frame["state"]) <= {"ON", "OFF"}
    assert trace_hash(traces_from_frame(frame)) == trace_hash(traces)


def test_trace_table_validation():
    gap = pd.DataFrame(
        {"channel": [0, 0], "state": ["ON", "OFF"], "start_ns": [0, 5], "end_ns": [4, 9]}
    )
    with pytest.raises(InvalidParams):
        traces_from_frame(gap)
    repeated = pd.DataFrame(
        {"channel": [0, 0], "state": ["ON", "ON"], "start_ns": [0, 5], "end_ns": [5, 9]}
    )
    with pytest.raises(InvalidParams):
        traces_from_frame(repeated)
    with pytest.raises(InvalidParams):
        traces_from_frame(pd.DataFrame({"channel": [0]}))
