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

"""Module that provides the self-validation suite run by `crn_csa validate`.

Checks:

- `oracle`: closed-form `P_OFF,OFF` and `P_ON,ON` against Monte Carlo
  alternating renewal simulations (z-score at most 4).
- `exponential`: the general residue path against the closed form of the
  exponential model.
- `three_phase`: the general residue path against the explicit three-root
  expansion.
- `equivalence`: slotted predictive and greedy CSAs make the same choices
  with the same beliefs.
- `positive_correlation`: with positively correlated i.i.d. channels the
  predictive CSA visits channels round robin by descending initial belief.
- `negative_correlation`: with negatively correlated i.i.d. channels the
  predictive CSA stays after busy, leaves after idle and prefers the
  channel most recently visited an even number of slots ago.
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import List

import numpy as np
from numpy.polynomial import polynomial as P

from crn_csa.process.csa import (
    PolicyKind,
    SensingResult,
    SlotChain,
    equivalence_check,
    make_policy,
    make_slotted_policy,
    occupancy_sensor,
    round_robin_order,
    run_slotted,
    simulate_chain_occupancy,
)
from crn_csa.process.dist import ExpDist, HedDist, OnOffModel, format_model, mean
from crn_csa.process.errors import NumericalFailure
from crn_csa.process.idleprob import (
    build_table,
    kernel_polynomials,
    oracle_p_off_off,
    oracle_p_on_on,
    p_off_off,
    p_on_on,
)
from crn_csa.process.traffic import with_duty_cycle

LOGGER = logging.getLogger(__name__)

Z_LIMIT = 4.0
# Elapsed times of the oracle check, in units of the mean ON+OFF cycle of each model
ORACLE_SPAN = np.geomspace(0.01, 100.0, 10)
FAULTS = ("root",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def oracle_models():
    """Exponential and 1- to 4-phase hyper-exponential OFF models."""
    return [
        OnOffModel(ExpDist(2.0), ExpDist(1.0)),
        OnOffModel(ExpDist(1.5), HedDist((1.0,), (0.7,))),
        OnOffModel(ExpDist(1.0), HedDist((0.8, 0.2), (4.0, 0.3))),
        OnOffModel(ExpDist(3.0), HedDist((0.6, 0.3, 0.1), (10.0, 1.0, 0.1))),
        OnOffModel(ExpDist(0.5), HedDist((0.4, 0.3, 0.2, 0.1), (20.0, 5.0, 1.0, 0.2))),
    ]


def _corrupt(table):
    roots = list(table.roots)
    # slowest root
    roots[-1] *= 1.5
    return replace(table, roots=tuple(roots))


def oracle_grid(model):
    """Log-spaced elapsed times from 1/100 to 100 mean ON+OFF cycles of `model`."""
    return ORACLE_SPAN * (mean(model.on) + mean(model.off))


def check_oracle(trials, rng, fault=None):
    """Compare every model of `oracle_models` with its Monte Carlo oracle on `oracle_grid`."""
    failures = []
    worst = 0.0
    for index, model in enumerate(oracle_models()):
        table = build_table(model)
        if fault == "root" and index == len(oracle_models()) - 1:
            table = _corrupt(table)
        for dt in oracle_grid(model):
            try:
                exact_off, exact_on = p_off_off(table, dt), p_on_on(table, dt)
            except NumericalFailure as e:
                failures.append(f"{format_model(model)} at dt={dt:.4g}: {e}")
                continue
            for name, exact, oracle in (
                ("P_OFF,OFF", exact_off, oracle_p_off_off),
                ("P_ON,ON", exact_on, oracle_p_on_on),
            ):
                estimate = oracle(model, dt, trials, rng)
                error = max(estimate.standard_error, 1.0 / trials)
                z = abs(exact - estimate.probability) / error
                worst = max(worst, z)
                if z > Z_LIMIT:
                    failures.append(f"{name} of {format_model(model)} at dt={dt:.4g}: z={z:.2f}")
    if failures:
        return CheckResult("oracle", False, "; ".join(failures))
    detail = f"max z-score {worst:.2f} over {len(oracle_models())} models"
    return CheckResult("oracle", True, detail)


def exponential_p_off_off(on_rate, off_rate, dt):
    """Closed form of `P_OFF,OFF` for exponential ON and OFF times."""
    total = on_rate + off_rate
    return on_rate / total + off_rate / total * np.exp(-total * np.asarray(dt))


def exponential_p_on_on(on_rate, off_rate, dt):
    """Closed form of `P_ON,ON` for exponential ON and OFF times."""
    total = on_rate + off_rate
    return off_rate / total + on_rate / total * np.exp(-total * np.asarray(dt))


def check_exponential(rng, n_models=5, n_points=50):
    """General residue path with one phase against the exponential closed form (1e-12)."""
    worst = 0.0
    for _ in range(n_models):
        on_rate, off_rate = np.exp(rng.uniform(np.log(0.1), np.log(10.0), 2))
        table = build_table(OnOffModel(ExpDist(on_rate), ExpDist(off_rate)))
        dt = np.linspace(0.0, 5.0 / (on_rate + off_rate), n_points)
        off_gap = p_off_off(table, dt) - exponential_p_off_off(on_rate, off_rate, dt)
        on_gap = p_on_on(table, dt) - exponential_p_on_on(on_rate, off_rate, dt)
        worst = max(worst, float(np.max(np.abs(off_gap))), float(np.max(np.abs(on_gap))))
    return CheckResult("exponential", worst <= 1e-12, f"max gap {worst:.3e}")


def explicit_three_phase_p_off_off(model, roots, dt):
    """Three-root expansion of `P_OFF,OFF` for a 3-phase OFF model."""
    numerator, _ = kernel_polynomials(model)
    r1, r2, r3 = roots
    value = P.polyval(0.0, numerator) / (-r1 * r2 * r3)
    for k, r in enumerate(roots):
        others = [roots[j] for j in range(3) if j != k]
        value = value + P.polyval(r, numerator) * np.exp(r * np.asarray(dt)) / (
            r * (r - others[0]) * (r - others[1])
        )
    return 1.0 - value / mean(model.off)


def random_hed(rng, n_phases, low=0.05, high=20.0):
    rates = np.sort(np.exp(rng.uniform(np.log(low), np.log(high), n_phases)))[::-1]
    weights = rng.dirichlet(np.ones(n_phases))
    return HedDist(tuple(weights), tuple(rates))


def check_three_phase(rng, n_models=10, n_points=50):
    """General residue path against the explicit three-root expansion (1e-10)."""
    worst = 0.0
    for _ in range(n_models):
        model = OnOffModel(ExpDist(rng.uniform(0.5, 3.0)), random_hed(rng, 3))
        table = build_table(model)
        dt = np.linspace(0.0, 5.0, n_points)
        explicit = explicit_three_phase_p_off_off(model, table.roots, dt)
        worst = max(worst, float(np.max(np.abs(p_off_off(table, dt) - explicit))))
    return CheckResult("three_phase", worst <= 1e-10, f"max gap {worst:.3e}")


def random_scenario(rng):
    """4 to 8 channels mixing exponential and HED OFF times with random duty cycles."""
    models = []
    for _ in range(int(rng.integers(4, 9))):
        if rng.random() < 0.5:
            off = ExpDist(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))
        else:
            off = random_hed(rng, int(rng.integers(2, 4)), 0.1, 10.0)
        models.append(with_duty_cycle(OnOffModel(ExpDist(1.0), off), rng.uniform(0.2, 0.9)))
    return models


def check_equivalence(rng, n_scenarios, horizon):
    """Slotted predictive and greedy CSAs over random scenarios."""
    worst = 0.0
    failures = []
    for index in range(n_scenarios):
        models = random_scenario(rng)
        report = equivalence_check(models, None, horizon, rng)
        worst = max(worst, report.max_belief_gap)
        if not report.equivalent:
            failures.append(
                f"scenario {index} ({len(models)} channels): gap {report.max_belief_gap:.3e}, "
                f"choices match {report.choices_match}"
            )
    if failures:
        return CheckResult("equivalence", False, "; ".join(failures))
    return CheckResult("equivalence", True, f"{n_scenarios} scenarios, max belief gap {worst:.3e}")


def distinct_visits(choices):
    """Channel sequence with consecutive repetitions removed."""
    return [c for i, c in enumerate(choices) if i == 0 or c != choices[i - 1]]


def check_positive_correlation(rng, n_channels=4, horizon=1000):
    """Round-robin structure of the predictive CSA for positively correlated i.i.d. channels."""
    # Rates summing to ln 4 give p11 - p01 = 1/4 at a 1 s slot; mostly busy keeps idle runs short
    model = OnOffModel(ExpDist(0.3), ExpDist(np.log(4.0) - 0.3))
    initial = tuple(np.sort(rng.uniform(0.05, 0.95, n_channels)))
    policy = make_policy(
        PolicyKind.GENERALIZED_PREDICTIVE, [model] * n_channels, initial, 1_000_000_000
    )
    chain = policy.chains[0]
    idle = simulate_chain_occupancy(policy.chains, initial, horizon, rng)
    choices, _ = run_slotted(policy, horizon, occupancy_sensor(idle))
    order = round_robin_order(initial)
    visits = distinct_visits(choices)
    expected = [order[i % n_channels] for i in range(len(visits))]
    passed = chain.p11 >= chain.p01 and visits == expected
    return CheckResult(
        "positive_correlation",
        passed,
        f"{len(visits)} visits, p11={chain.p11:.4f}, p01={chain.p01:.4f}",
    )


def check_negative_correlation(rng, n_channels=6, horizon=1000, max_lag=30):
    """Structure of the predictive CSA for negatively correlated i.i.d. channels."""
    chain = SlotChain(0.2, 0.7)
    stationary = chain.p01 / (1.0 - chain.p11 + chain.p01)
    initial = (stationary,) * n_channels
    policy = make_slotted_policy(PolicyKind.GENERALIZED_PREDICTIVE, [chain] * n_channels, initial)
    idle = simulate_chain_occupancy(policy.chains, initial, horizon, rng)
    choices, results = run_slotted(policy, horizon, occupancy_sensor(idle))
    last_visit = {}
    failures = []
    for k in range(1, len(choices)):
        previous, chosen = choices[k - 1], choices[k]
        last_visit[previous] = k
        slot = k + 1
        if results[k - 1] is SensingResult.BUSY and chosen != previous:
            failures.append(f"slot {slot}: left channel {previous} after busy")
        if results[k - 1] is SensingResult.IDLE:
            if chosen == previous:
                failures.append(f"slot {slot}: stayed on channel {previous} after idle")
                continue
            even = [
                (slot - v, a)
                for a, v in last_visit.items()
                if a != previous and (slot - v) % 2 == 0
            ]
            even = [(lag, a) for lag, a in even if lag <= max_lag]
            if even and chosen != min(even)[1]:
                failures.append(f"slot {slot}: chose {chosen} instead of channel {min(even)[1]}")
    passed = not failures
    detail = "; ".join(failures[:5]) if failures else f"{len(distinct_visits(choices))} visits"
    return CheckResult("negative_correlation", passed, detail)


def run_checks(quick=False, fault=None, seed=20230501):
    """Run the validation suite.

    Parameters
    ----------
    quick : bool
        Use 10^5 oracle trials and a shorter equivalence run instead of
        10^6 trials and 30 scenarios of 10^4 slots.

    fault : str, optional
        Inject a fault (`root`: corrupt the slowest root of the last oracle model).

    seed : int
        Seed of the suite.

    Returns
    -------
    list of CheckResult
        One result per check.
    """
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"Unknown fault '{fault}' (expected one of {FAULTS}).")
    rng = np.random.default_rng(seed)
    trials = 100_000 if quick else 1_000_000
    n_scenarios, horizon = (5, 2_000) if quick else (30, 10_000)
    checks = [
        lambda: check_oracle(trials, rng, fault),
        lambda: check_exponential(rng),
        lambda: check_three_phase(rng),
        lambda: check_equivalence(rng, n_scenarios, horizon),
        lambda: check_positive_correlation(rng),
        lambda: check_negative_correlation(rng),
    ]
    results: List[CheckResult] = []
    for check in checks:
        start = time.perf_counter()
        result = check()
        result.seconds = time.perf_counter() - start
        status = "PASS" if result.passed else "FAIL"
        LOGGER.info(f"> {status} {result.name} ({result.seconds:.1f} s): {result.detail}")
        results.append(result)
    return results
