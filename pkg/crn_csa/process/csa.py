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

"""Module that provides the channel selection algorithms (CSA).

Five policies share one interface:

- `generalized_predictive`: beliefs from the idle probability tables of the
  true ON/OFF models (hyper-exponential aware).
- `predictive_exponential`: the same framework with tables built from
  exponential OFF models matching each channel's mean OFF time.
- `greedy`: myopic POMDP sensing policy that propagates a belief vector
  one step at a time.
- `round_robin`: cycles through the channels in descending order of the
  initial belief vector.
- `random`: uniformly random channel.

Two access modes are supported. In the slotted mode, used to study the
structure of the policies, every channel is described by a `SlotChain`
(probabilities of being idle one slot after an idle or a busy observation)
and beliefs are k-step probabilities of that chain. In the event-driven mode,
used by the MAC simulator through `ChannelSelector`, beliefs are evaluated
from the idle probability tables at the exact elapsed time.
"""

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from crn_csa.process.dist import OnOffModel, moment_matched_exponential
from crn_csa.process.errors import InvalidParams, NeverSensed
from crn_csa.process.idleprob import IdleProbTable, build_table, p_off_off, p_on_off
from crn_csa.process.traffic import PuState, StartState, generate_traces, state_at

LOGGER = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


class SensingResult(enum.IntEnum):
    """Outcome of sensing a channel (`S = 1` idle, `S = 0` busy)."""

    BUSY = 0
    IDLE = 1


class PolicyKind(enum.Enum):
    """Channel selection policies, valued by their config selector string."""

    GENERALIZED_PREDICTIVE = "generalized_predictive"
    PREDICTIVE_EXPONENTIAL = "predictive_exponential"
    GREEDY = "greedy"
    ROUND_ROBIN = "round_robin"
    RANDOM = "random"

    @classmethod
    def from_string(cls, text):
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise InvalidParams(f"Unknown CSA policy '{text}' (expected one of: {choices}).")

    @property
    def uses_tables(self):
        return self in (
            PolicyKind.GENERALIZED_PREDICTIVE,
            PolicyKind.PREDICTIVE_EXPONENTIAL,
            PolicyKind.GREEDY,
        )


@dataclass(frozen=True)
class SlotChain:
    """One-slot transition probabilities of a channel.

    Parameters
    ----------
    p11 : float
        Probability the channel is idle one slot after being observed idle.

    p01 : float
        Probability the channel is idle one slot after being observed busy.
    """

    p11: float
    p01: float

    def __post_init__(self):
        for name in ("p11", "p01"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidParams(
                    f"Slot transition probability {name} must lie in [0, 1] (got {value})."
                )

    def propagate(self, omega):
        """Belief one slot later, `omega p11 + (1 - omega) p01`."""
        return omega * self.p11 + (1.0 - omega) * self.p01


def slot_transition(chain, k):
    """Return the k-step probabilities `(p11(k), p01(k))` of a chain."""
    if k < 0:
        raise InvalidParams(f"The number of steps must be nonnegative (got {k}).")
    series = TransitionSeries(chain)
    return series.p11(k), series.p01(k)


def slot_chain(table, slot_duration_ns):
    """Build the `SlotChain` of a channel from its table at one slot duration."""
    dt = slot_duration_ns / NS_PER_S
    return SlotChain(p_off_off(table, dt), p_on_off(table, dt))


class TransitionSeries:
    """k-step probabilities `p11(k)` and `p01(k)` of a `SlotChain`.

    Values are computed by the recursion `p(k) = p(k-1) p11 + (1 - p(k-1)) p01`
    starting from `p11(0) = 1` and `p01(0) = 0`, and cached.
    """

    def __init__(self, chain):
        self.chain = chain
        self._p11 = [1.0]
        self._p01 = [0.0]

    def _extend_to(self, k):
        while len(self._p11) <= k:
            self._p11.append(self.chain.propagate(self._p11[-1]))
            self._p01.append(self.chain.propagate(self._p01[-1]))

    def p11(self, k):
        self._extend_to(k)
        return self._p11[k]

    def p01(self, k):
        self._extend_to(k)
        return self._p01[k]


@dataclass
class CsaPolicy:
    """Channel selection policy with its per-channel probability models.

    Parameters
    ----------
    kind : PolicyKind
        Policy.

    initial_omega : tuple of float
        Initial belief vector, one probability of idleness per channel.

    tables : tuple of IdleProbTable
        Per-channel tables (empty for round robin and random).

    chains : tuple of SlotChain
        Per-channel one-slot chains (slotted mode only).

    slot_duration_ns : int, optional
        Slot duration (slotted mode only).
    """

    kind: PolicyKind
    initial_omega: Tuple[float, ...]
    tables: Tuple[IdleProbTable, ...] = ()
    chains: Tuple[SlotChain, ...] = ()
    slot_duration_ns: Optional[int] = None
    _series: List[TransitionSeries] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.initial_omega = tuple(float(w) for w in self.initial_omega)
        n = len(self.initial_omega)
        if n < 1:
            raise InvalidParams("A policy needs at least one channel.")
        if any(not 0.0 <= w <= 1.0 for w in self.initial_omega):
            raise InvalidParams(f"Initial beliefs must lie in [0, 1] (got {self.initial_omega}).")
        if self.kind.uses_tables and not self.chains and len(self.tables) != n:
            raise InvalidParams(
                f"Policy {self.kind.value} needs {n} tables, got {len(self.tables)}."
            )
        if self.chains and len(self.chains) != n:
            raise InvalidParams(
                f"Policy {self.kind.value} needs {n} slot chains, got {len(self.chains)}."
            )
        self._series = [TransitionSeries(chain) for chain in self.chains]

    @property
    def n_channels(self):
        return len(self.initial_omega)

    def series(self, channel):
        if not self._series:
            raise InvalidParams("Slotted operations need a policy built with slot chains.")
        return self._series[channel]


def default_initial_omega(models):
    """Stationary idle probabilities `E(Y)/(E(X)+E(Y))` of the channels."""
    return tuple(model.idle_probability for model in models)


def make_policy(kind, models, initial_omega=None, slot_duration_ns=None):
    """Build a policy for a list of channel models.

    Parameters
    ----------
    kind : PolicyKind or str
        Policy kind or its selector string.

    models : list of OnOffModel
        True channel models.

    initial_omega : sequence of float, optional
        Initial belief vector, defaults to the stationary idle probabilities.

    slot_duration_ns : int, optional
        When given, slot chains are derived from the tables for slotted operation.

    Returns
    -------
    CsaPolicy
        The policy. `predictive_exponential` tables are built from exponential
        OFF models with the true mean OFF time of each channel.
    """
    if isinstance(kind, str):
        kind = PolicyKind.from_string(kind)
    if initial_omega is None:
        initial_omega = default_initial_omega(models)
    if len(initial_omega) != len(models):
        raise InvalidParams(
            f"Got {len(initial_omega)} initial beliefs for {len(models)} channels."
        )
    tables = ()
    if kind is PolicyKind.PREDICTIVE_EXPONENTIAL:
        tables = tuple(
            build_table(OnOffModel(m.on, moment_matched_exponential(m.off))) for m in models
        )
    elif kind.uses_tables:
        tables = tuple(build_table(m) for m in models)
    chains = ()
    if slot_duration_ns is not None and tables:
        chains = tuple(slot_chain(t, slot_duration_ns) for t in tables)
    return CsaPolicy(kind, tuple(initial_omega), tables, chains, slot_duration_ns)


def make_slotted_policy(kind, chains, initial_omega):
    """Build a slotted policy directly from one-slot chains."""
    if isinstance(kind, str):
        kind = PolicyKind.from_string(kind)
    return CsaPolicy(kind, tuple(initial_omega), (), tuple(chains), None)


@dataclass
class BeliefState:
    """Belief vector and sensing bookkeeping of one simulation run.

    Parameters
    ----------
    omega : numpy.ndarray
        Current probability of idleness of every channel.

    initial_omega : numpy.ndarray
        Initial belief vector.

    last_sensed_slot : list of int or None
        Slot index (slotted mode) or time in nanoseconds (event-driven mode)
        of the last sensing of every channel.

    last_result : list of SensingResult or None
        Last sensing outcome of every channel.

    evaluations : int
        Number of per-channel belief evaluations performed so far.
    """

    omega: np.ndarray
    initial_omega: np.ndarray
    last_sensed_slot: List[Optional[int]]
    last_result: List[Optional[SensingResult]]
    evaluations: int = 0

    @classmethod
    def initial(cls, initial_omega):
        omega = np.array(initial_omega, dtype=float)
        n = omega.size
        return cls(omega.copy(), omega, [None] * n, [None] * n)

    def copy(self):
        return replace(
            self,
            omega=self.omega.copy(),
            last_sensed_slot=list(self.last_sensed_slot),
            last_result=list(self.last_result),
        )

    def record(self, channel, result, when):
        self.last_sensed_slot[channel] = when
        self.last_result[channel] = SensingResult(result)

    def sensed(self, channel):
        return self.last_sensed_slot[channel] is not None


def omega_predictive(policy, channel, now, history):
    """Probability channel `channel` is idle at `now` given its last sensing.

    Parameters
    ----------
    policy : CsaPolicy
        Policy holding the channel tables.

    channel : int
        Channel index.

    now : int
        Current time in nanoseconds.

    history : BeliefState
        Sensing history, with sensing times in nanoseconds.

    Returns
    -------
    float
        `P_OFF,OFF(dt)` if the last result was idle, `P_ON,OFF(dt)` otherwise.

    Raises
    ------
    NeverSensed
        If the channel has no sensing history.
    """
    if not history.sensed(channel):
        raise NeverSensed(f"Channel {channel} has never been sensed; use its initial belief.")
    dt = (now - history.last_sensed_slot[channel]) / NS_PER_S
    table = policy.tables[channel]
    if history.last_result[channel] is SensingResult.IDLE:
        return p_off_off(table, dt)
    return p_on_off(table, dt)


def initial_belief(policy, channel, k):
    """Belief of a never-sensed channel at slot `k`: `w0 p11(k) + (1 - w0) p01(k)`."""
    w0 = policy.initial_omega[channel]
    series = policy.series(channel)
    return w0 * series.p11(k) + (1.0 - w0) * series.p01(k)


def initial_belief_at(policy, channel, elapsed_s):
    """Event-driven counterpart of `initial_belief` with the elapsed time in seconds."""
    w0 = policy.initial_omega[channel]
    table = policy.tables[channel]
    return w0 * p_off_off(table, elapsed_s) + (1.0 - w0) * p_on_off(table, elapsed_s)


def round_robin_order(initial_omega):
    """Channels in descending order of initial belief, ties broken by lowest index."""
    return sorted(range(len(initial_omega)), key=lambda a: (-initial_omega[a], a))


def select_channel(policy, beliefs):
    """Channel with the highest belief, ties broken by the lowest index."""
    beliefs = np.asarray(beliefs, dtype=float)
    if beliefs.size < 1:
        raise InvalidParams("Cannot select a channel from an empty belief vector.")
    return int(np.argmax(beliefs))


def greedy_propagate(policy, beliefs):
    """Beliefs one slot later for every channel (greedy sensing action)."""
    return np.array(
        [policy.chains[a].propagate(w) for a, w in enumerate(beliefs)], dtype=float
    )


def greedy_update(policy, beliefs, sensed, result):
    """Greedy belief update after sensing channel `sensed`.

    The sensed channel becomes 1 (idle) or 0 (busy); every other channel is
    propagated by one slot.
    """
    updated = greedy_propagate(policy, beliefs)
    updated[sensed] = 1.0 if SensingResult(result) is SensingResult.IDLE else 0.0
    return updated


def predictive_beliefs(policy, state, k):
    """Predictive beliefs of every channel at the beginning of slot `k`."""
    beliefs = np.empty(policy.n_channels)
    for a in range(policy.n_channels):
        if state.sensed(a):
            series = policy.series(a)
            lag = k - state.last_sensed_slot[a]
            if state.last_result[a] is SensingResult.IDLE:
                beliefs[a] = series.p11(lag)
            else:
                beliefs[a] = series.p01(lag)
        else:
            beliefs[a] = initial_belief(policy, a, k)
    state.evaluations += policy.n_channels
    return beliefs


def predictive_slotted_step(policy, state, k, sense_fn):
    """Run one slot of the slotted predictive CSA.

    Parameters
    ----------
    policy : CsaPolicy
        Slotted policy.

    state : BeliefState
        Belief state after slot `k - 1`.

    k : int
        Slot index, `k >= 1`.

    sense_fn : callable
        `sense_fn(channel, k)` returns the `SensingResult` of sensing `channel`
        during slot `k`.

    Returns
    -------
    chosen : int
        Sensed channel.

    result : SensingResult
        Sensing outcome.

    state : BeliefState
        New belief state, holding the beliefs used for the selection.
    """
    if k < 1:
        raise InvalidParams(f"Slots are numbered from 1 (got {k}).")
    new_state = state.copy()
    new_state.omega = predictive_beliefs(policy, new_state, k)
    chosen = select_channel(policy, new_state.omega)
    result = SensingResult(sense_fn(chosen, k))
    new_state.record(chosen, result, k)
    return chosen, result, new_state


@dataclass
class EquivalenceReport:
    """Side-by-side run of the slotted predictive and greedy CSAs."""

    slots: int
    max_belief_gap: float
    choices_match: bool
    predictive_choices: List[int]
    greedy_choices: List[int]
    predictive_evaluations: int
    greedy_evaluations: int

    @property
    def equivalent(self):
        return self.choices_match and self.max_belief_gap <= 1e-12


def run_slotted(policy, horizon, sense_fn):
    """Run the slotted predictive CSA for `horizon` slots.

    Returns the chosen channels and the sensing results, one per slot.
    """
    state = BeliefState.initial(policy.initial_omega)
    choices, results = [], []
    for k in range(1, horizon + 1):
        chosen, result, state = predictive_slotted_step(policy, state, k, sense_fn)
        choices.append(chosen)
        results.append(result)
    return choices, results


def compare_slotted(policy, horizon, sense_fn):
    """Run the slotted predictive and greedy CSAs on the same occupancy.

    Parameters
    ----------
    policy : CsaPolicy
        Slotted policy; both frameworks share its chains and initial belief.

    horizon : int
        Number of slots.

    sense_fn : callable
        Occupancy oracle `sense_fn(channel, k) -> SensingResult`.

    Returns
    -------
    EquivalenceReport
        Maximum belief gap over all slots and channels and choice agreement.
    """
    n = policy.n_channels
    state = BeliefState.initial(policy.initial_omega)
    greedy = np.array(policy.initial_omega, dtype=float)
    greedy_evaluations = 0
    gap = 0.0
    predictive_choices, greedy_choices = [], []
    for k in range(1, horizon + 1):
        chosen, result, state = predictive_slotted_step(policy, state, k, sense_fn)
        candidates = greedy_propagate(policy, greedy)
        greedy_evaluations += n
        greedy_choice = select_channel(policy, candidates)
        gap = max(gap, float(np.max(np.abs(candidates - state.omega))))
        predictive_choices.append(chosen)
        greedy_choices.append(greedy_choice)
        if greedy_choice == chosen:
            greedy_result = result
        else:
            greedy_result = SensingResult(sense_fn(greedy_choice, k))
        greedy = candidates
        greedy[greedy_choice] = 1.0 if greedy_result is SensingResult.IDLE else 0.0
    return EquivalenceReport(
        slots=horizon,
        max_belief_gap=gap,
        choices_match=predictive_choices == greedy_choices,
        predictive_choices=predictive_choices,
        greedy_choices=greedy_choices,
        predictive_evaluations=state.evaluations,
        greedy_evaluations=greedy_evaluations,
    )


def simulate_chain_occupancy(chains, initial_omega, horizon, rng):
    """Realize the idle/busy state of every channel at slots `0..horizon` from its chain.

    Returns
    -------
    numpy.ndarray
        Boolean array of shape `(horizon + 1, n_channels)`, True when idle.
    """
    n = len(chains)
    idle = np.empty((horizon + 1, n), dtype=bool)
    idle[0] = rng.random(n) < np.asarray(initial_omega)
    p11 = np.array([c.p11 for c in chains])
    p01 = np.array([c.p01 for c in chains])
    for k in range(1, horizon + 1):
        p = np.where(idle[k - 1], p11, p01)
        idle[k] = rng.random(n) < p
    return idle


def occupancy_sensor(idle):
    """Sensing oracle reading a realized occupancy array."""

    def sense(channel, k):
        return SensingResult.IDLE if idle[k, channel] else SensingResult.BUSY

    return sense


def equivalence_check(models, initial_omega, horizon, rng, slot_duration_ns=NS_PER_S):
    """Check that the slotted predictive and greedy CSAs coincide on a scenario.

    Parameters
    ----------
    models : list of OnOffModel
        Channel models; the primary-user occupancy is realized from them as
        renewal traces and sensed at slot boundaries.

    initial_omega : sequence of float or None
        Initial belief vector shared by both frameworks.

    horizon : int
        Number of slots.

    rng : numpy.random.Generator
        Random stream driving the shared occupancy realization.

    slot_duration_ns : int
        Slot duration.

    Returns
    -------
    EquivalenceReport
        Comparison of both frameworks.
    """
    policy = make_policy(
        PolicyKind.GENERALIZED_PREDICTIVE, models, initial_omega, slot_duration_ns
    )
    if horizon == 0:
        return compare_slotted(policy, 0, None)
    seed = int(rng.integers(0, 2**63 - 1))
    traces = generate_traces(
        models, (horizon + 1) * slot_duration_ns, seed, StartState.STATIONARY_MIX
    )

    def sense(channel, k):
        state = state_at(traces[channel], k * slot_duration_ns)
        return SensingResult.IDLE if state is PuState.OFF else SensingResult.BUSY

    return compare_slotted(policy, horizon, sense)


class ChannelSelector:
    """Event-driven channel selection used by the MAC simulator.

    Parameters
    ----------
    policy : CsaPolicy
        Policy with idle probability tables (predictive and greedy kinds).

    rng : numpy.random.Generator, optional
        Random stream of the `random` policy.
    """

    def __init__(self, policy, rng=None):
        self.policy = policy
        self.rng = rng
        self.history = BeliefState.initial(policy.initial_omega)
        self._order = round_robin_order(policy.initial_omega)
        self._position = -1
        self._greedy = np.array(policy.initial_omega, dtype=float)
        self._greedy_time = 0
        if policy.kind is PolicyKind.RANDOM and rng is None:
            raise InvalidParams("The random policy needs a random stream.")

    def beliefs(self, now):
        """Belief vector at time `now` (nanoseconds)."""
        kind = self.policy.kind
        n = self.policy.n_channels
        self.history.evaluations += n
        if kind is PolicyKind.GREEDY:
            return self._greedy_at(now)
        if kind in (PolicyKind.ROUND_ROBIN, PolicyKind.RANDOM):
            return np.array(self.policy.initial_omega, dtype=float)
        beliefs = np.empty(n)
        for a in range(n):
            if self.history.sensed(a):
                beliefs[a] = omega_predictive(self.policy, a, now, self.history)
            else:
                beliefs[a] = initial_belief_at(self.policy, a, now / NS_PER_S)
        return beliefs

    def _greedy_at(self, now):
        dt = (now - self._greedy_time) / NS_PER_S
        beliefs = np.empty(self.policy.n_channels)
        for a, table in enumerate(self.policy.tables):
            w = self._greedy[a]
            beliefs[a] = w * p_off_off(table, dt) + (1.0 - w) * p_on_off(table, dt)
        return beliefs

    def observe(self, channel, result, now):
        """Record the sensing outcome of `channel` at time `now`."""
        result = SensingResult(result)
        self.history.record(channel, result, now)
        if self.policy.kind is PolicyKind.GREEDY:
            self._greedy = self._greedy_at(now)
            self._greedy_time = now
            self._greedy[channel] = 1.0 if result is SensingResult.IDLE else 0.0
        self.history.omega[channel] = 1.0 if result is SensingResult.IDLE else 0.0

    def select(self, now, exclude=None):
        """Next channel to sense at time `now`, never `exclude` when another channel exists."""
        n = self.policy.n_channels
        allowed = [a for a in range(n) if a != exclude] or list(range(n))
        kind = self.policy.kind
        if kind is PolicyKind.ROUND_ROBIN:
            for _ in range(n):
                self._position = (self._position + 1) % n
                if self._order[self._position] in allowed:
                    break
            return self._order[self._position]
        if kind is PolicyKind.RANDOM:
            return int(allowed[self.rng.integers(len(allowed))])
        beliefs = self.beliefs(now)
        self.history.omega = beliefs
        masked = np.full(n, -np.inf)
        masked[allowed] = beliefs[allowed]
        chosen = select_channel(self.policy, masked)
        LOGGER.debug(f"t={now} ns: beliefs {np.round(beliefs, 4).tolist()} -> channel {chosen}")
        return chosen
