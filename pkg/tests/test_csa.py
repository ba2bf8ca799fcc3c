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
import pytest

from crn_csa.process.checks import check_negative_correlation, check_positive_correlation
from crn_csa.process.csa import (
    BeliefState,
    ChannelSelector,
    PolicyKind,
    SensingResult,
    SlotChain,
    compare_slotted,
    equivalence_check,
    greedy_update,
    initial_belief,
    make_policy,
    make_slotted_policy,
    occupancy_sensor,
    omega_predictive,
    predictive_slotted_step,
    round_robin_order,
    select_channel,
    simulate_chain_occupancy,
    slot_transition,
)
from crn_csa.process.dist import ExpDist, OnOffModel
from crn_csa.process.errors import InvalidParams, NeverSensed
from crn_csa.process.idleprob import p_off_off

from conftest import MS, S


def test_policy_kind_from_string():
    assert PolicyKind.from_string(" Greedy ") is PolicyKind.GREEDY
    assert PolicyKind.from_string("generalized_predictive").uses_tables
    assert not PolicyKind.ROUND_ROBIN.uses_tables
    with pytest.raises(InvalidParams):
        PolicyKind.from_string("myopic")


def test_select_channel_breaks_ties_by_lowest_index():
    policy = make_slotted_policy("greedy", [SlotChain(0.8, 0.2)] * 3, (0.5, 0.5, 0.5))
    assert select_channel(policy, [0.3, 0.7, 0.7]) == 1
    assert select_channel(policy, [0.5, 0.5, 0.5]) == 0


def test_slot_transition_recursion():
    chain = SlotChain(0.8, 0.2)
    assert slot_transition(chain, 0) == (1.0, 0.0)
    assert slot_transition(chain, 1) == pytest.approx((0.8, 0.2))
    assert slot_transition(chain, 2) == pytest.approx((0.68, 0.32))
    p11, p01 = slot_transition(chain, 200)
    assert p11 == pytest.approx(0.5) and p01 == pytest.approx(0.5)
    with pytest.raises(InvalidParams):
        slot_transition(chain, -1)


def test_slot_chain_rejects_bad_probabilities():
    with pytest.raises(InvalidParams):
        SlotChain(1.2, 0.1)


def test_greedy_update():
    policy = make_slotted_policy("greedy", [SlotChain(0.8, 0.2)] * 2, (0.5, 1.0))
    idle = greedy_update(policy, [0.5, 1.0], 0, SensingResult.IDLE)
    busy = greedy_update(policy, [0.5, 1.0], 0, SensingResult.BUSY)
    np.testing.assert_allclose(idle, [1.0, 0.8])
    np.testing.assert_allclose(busy, [0.0, 0.8])


def test_initial_belief_of_never_sensed_channel():
    policy = make_slotted_policy("generalized_predictive", [SlotChain(0.8, 0.2)], (0.3,))
    assert initial_belief(policy, 0, 0) == pytest.approx(0.3)
    assert initial_belief(policy, 0, 1) == pytest.approx(0.38)
    assert initial_belief(policy, 0, 500) == pytest.approx(0.5)


def test_omega_predictive_uses_the_last_result(symmetric_model):
    policy = make_policy("generalized_predictive", [symmetric_model] * 2)
    history = BeliefState.initial(policy.initial_omega)
    with pytest.raises(NeverSensed):
        omega_predictive(policy, 0, S, history)
    now = round(np.log(2.0) * S)
    history.record(0, SensingResult.IDLE, 0)
    history.record(1, SensingResult.BUSY, 0)
    assert omega_predictive(policy, 0, now, history) == pytest.approx(0.625, abs=1e-8)
    assert omega_predictive(policy, 1, now, history) == pytest.approx(0.375, abs=1e-8)


def test_predictive_exponential_matches_the_mean_off_time(hed_model):
    policy = make_policy("predictive_exponential", [hed_model])
    assert policy.tables[0].model.off.rate == pytest.approx(1.0 / 1.09)
    assert policy.tables[0].model.on == hed_model.on


def test_make_policy_checks_the_initial_belief_length(symmetric_model):
    with pytest.raises(InvalidParams):
        make_policy("greedy", [symmetric_model] * 2, (0.5,))


def test_slotted_step_numbers_slots_from_one():
    policy = make_slotted_policy("generalized_predictive", [SlotChain(0.8, 0.2)] * 2, (0.5, 0.5))
    state = BeliefState.initial(policy.initial_omega)
    with pytest.raises(InvalidParams):
        predictive_slotted_step(policy, state, 0, lambda a, k: SensingResult.IDLE)
    chosen, result, new_state = predictive_slotted_step(
        policy, state, 1, lambda a, k: SensingResult.BUSY
    )
    assert (chosen, result) == (0, SensingResult.BUSY)
    assert new_state.last_sensed_slot == [1, None]
    assert state.last_sensed_slot == [None, None]


def test_predictive_and_greedy_coincide(hed_model, symmetric_model, three_phase_model, rng):
    models = [hed_model, symmetric_model, three_phase_model, hed_model]
    report = equivalence_check(models, None, 500, rng)
    assert report.equivalent
    assert report.max_belief_gap <= 1e-12
    assert report.predictive_choices == report.greedy_choices


def test_equivalence_over_zero_slots(symmetric_model, rng):
    report = equivalence_check([symmetric_model] * 3, None, 0, rng)
    assert report.slots == 0
    assert report.equivalent


def test_evaluations_grow_linearly_with_channels(rng):
    for n in (2, 4, 8):
        chains = [SlotChain(0.9, 0.3)] * n
        initial = tuple(rng.uniform(0.1, 0.9, n))
        policy = make_slotted_policy("generalized_predictive", chains, initial)
        idle = simulate_chain_occupancy(chains, initial, 100, rng)
        report = compare_slotted(policy, 100, occupancy_sensor(idle))
        assert report.predictive_evaluations == 100 * n
        assert report.greedy_evaluations == 100 * n


def test_positive_correlation_visits_round_robin():
    assert check_positive_correlation(np.random.default_rng(7)).passed


def test_negative_correlation_structure():
    assert check_negative_correlation(np.random.default_rng(7)).passed


def test_round_robin_order():
    assert round_robin_order((0.5, 0.9, 0.7)) == [1, 2, 0]
    assert round_robin_order((0.5, 0.5, 0.9)) == [2, 0, 1]


def test_round_robin_selector_cycles(symmetric_model):
    policy = make_policy("round_robin", [symmetric_model] * 3, (0.5, 0.9, 0.7))
    selector = ChannelSelector(policy)
    assert [selector.select(k * MS) for k in range(6)] == [1, 2, 0, 1, 2, 0]


def test_random_selector_needs_a_stream_and_honours_exclude(symmetric_model, rng):
    policy = make_policy("random", [symmetric_model] * 3)
    with pytest.raises(InvalidParams):
        ChannelSelector(policy)
    selector = ChannelSelector(policy, rng)
    choices = {selector.select(0, exclude=1) for _ in range(100)}
    assert choices == {0, 2}


def test_single_channel_selector_ignores_exclude(symmetric_model):
    selector = ChannelSelector(make_policy("generalized_predictive", [symmetric_model]))
    assert selector.select(0, exclude=0) == 0


def test_predictive_selector_prefers_recently_idle_channel(hed_model):
    policy = make_policy("generalized_predictive", [hed_model] * 2, (0.5, 0.5))
    selector = ChannelSelector(policy)
    selector.observe(0, SensingResult.IDLE, 0)
    selector.observe(1, SensingResult.BUSY, 0)
    beliefs = selector.beliefs(100 * MS)
    assert beliefs[0] == pytest.approx(p_off_off(policy.tables[0], 0.1))
    assert selector.select(100 * MS) == 0
    assert selector.select(100 * MS, exclude=0) == 1


def test_greedy_selector_matches_predictive_on_exponential_channels(symmetric_model):
    models = [
        symmetric_model,
        OnOffModel(ExpDist(0.5), ExpDist(2.0)),
        OnOffModel(ExpDist(3.0), ExpDist(1.0)),
    ]
    greedy = ChannelSelector(make_policy("greedy", models))
    predictive = ChannelSelector(make_policy("generalized_predictive", models))
    outcomes = [(0, SensingResult.BUSY), (1, SensingResult.IDLE), (2, SensingResult.BUSY)]
    now = 0
    for channel, result in outcomes:
        now += 300 * MS
        greedy.observe(channel, result, now)
        predictive.observe(channel, result, now)
    np.testing.assert_allclose(greedy.beliefs(now + S), predictive.beliefs(now + S), atol=1e-12)
