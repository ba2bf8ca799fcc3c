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

"""Module that computes the conditional idle probabilities of a primary-user channel.

For an alternating renewal process with exponential ON time X (rate
`l_on`) and a hyper-exponential OFF time Y (weights `p_i`, rates `l_i`,
an exponential OFF time being the one-phase case), the Laplace transforms of
the conditional probabilities share a single rational kernel::

    P*_OFF,OFF(s) = 1/s - G(s) / E(Y)
    P*_ON,ON(s)   = 1/s - G(s) / E(X)
    G(s)          = N(s) / (s D(s))

with `H(s) = sum_i p_i / (s + l_i) = N(s) / prod_i (s + l_i)` and
`D(s) = prod_i (s + l_i) + l_on N(s)`, a monic polynomial of degree N. The
kernel is inverted with the residue theorem at the simple poles `0` and
`r_k` (the roots of `D`)::

    g(dt) = N(0)/D(0) + sum_k N(r_k) exp(r_k dt) / (r_k D'(r_k))

A Monte Carlo renewal oracle estimates the same probabilities by brute force.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from crn_csa.process.dist import ExpDist, OnOffModel, equilibrium, mean, sample
from crn_csa.process.errors import InvalidParams, NumericalFailure, RepeatedRoots

LOGGER = logging.getLogger(__name__)

# Relative gap below which two roots of D(s) are considered repeated
ROOT_GAP_TOLERANCE = 1e-9
# Residual |D(r)| accepted after polishing, relative to the polynomial scale at r
ROOT_RESIDUAL_TOLERANCE = 1e-10
# Tolerance of the boundary and stationary-limit self-checks of a table
TABLE_CHECK_TOLERANCE = 1e-9
# Rounding accepted outside [0, 1] before a probability is clipped
PROBABILITY_TOLERANCE = 1e-9
MAX_NEWTON_ITERATIONS = 50


@dataclass(frozen=True)
class IdleProbTable:
    """Residue form of the conditional idle probabilities of one channel.

    `P_OFF,OFF(dt) = 1 - (off_constant + sum_k off_coefficients[k] exp(roots[k] dt))`
    and the same with the `on_*` terms for `P_ON,ON(dt)`.

    Parameters
    ----------
    model : OnOffModel
        Channel model the table was built for.

    roots : tuple of float
        Roots `r_k` of the denominator polynomial, negative and sorted.

    off_constant, on_constant : float
        Residue at `s = 0`, divided by E(Y) and E(X) respectively.

    off_coefficients, on_coefficients : tuple of float
        Residues at the roots `r_k`, divided by E(Y) and E(X) respectively.
    """

    model: OnOffModel
    roots: Tuple[float, ...]
    off_constant: float
    off_coefficients: Tuple[float, ...]
    on_constant: float
    on_coefficients: Tuple[float, ...]


@dataclass(frozen=True)
class RenewalOracleEstimate:
    """Monte Carlo estimate of a conditional probability."""

    probability: float
    standard_error: float
    trials: int

    @classmethod
    def from_hits(cls, hits, trials):
        p = hits / trials
        return cls(float(p), float(np.sqrt(p * (1.0 - p) / trials)), int(trials))


def _off_phases(model):
    off = model.off
    if isinstance(off, ExpDist):
        return np.array([1.0]), np.array([off.rate])
    return np.asarray(off.weights), np.asarray(off.rates)


def kernel_polynomials(model):
    """Return the ascending coefficients of the numerator N(s) and denominator D(s).

    Parameters
    ----------
    model : OnOffModel
        Channel model.

    Returns
    -------
    numerator : numpy.ndarray
        Coefficients of `N(s) = sum_i p_i prod_{j != i} (s + l_j)`, degree N-1.

    denominator : numpy.ndarray
        Coefficients of `D(s) = prod_i (s + l_i) + l_on N(s)`, degree N.
    """
    weights, rates = _off_phases(model)
    numerator = np.zeros(len(rates))
    for i, w in enumerate(weights):
        others = np.delete(rates, i)
        term = P.polyfromroots(-others) if others.size else np.array([1.0])
        numerator[: term.size] += w * term
    denominator = P.polyfromroots(-rates)
    denominator[: numerator.size] += model.on.rate * numerator
    return numerator, denominator


def _polish_root(denominator, derivative, root):
    for _ in range(MAX_NEWTON_ITERATIONS):
        slope = P.polyval(root, derivative)
        if slope == 0:
            break
        step = P.polyval(root, denominator) / slope
        root -= step
        if abs(step) <= 4 * np.finfo(float).eps * abs(root):
            break
    return root


def find_roots(denominator):
    """Find the roots of D(s) from the companion-matrix eigenvalues, polished by Newton steps.

    Raises
    ------
    NumericalFailure
        When a root is not real and negative or its residual stays above tolerance.

    RepeatedRoots
        When two roots are closer than `ROOT_GAP_TOLERANCE` (relative).
    """
    raw = P.polyroots(denominator)
    derivative = P.polyder(denominator)
    roots = []
    for r in raw:
        if abs(r.imag) > 1e-6 * max(1.0, abs(r.real)):
            raise NumericalFailure(f"The denominator polynomial has a complex root {r}.")
        root = _polish_root(denominator, derivative, float(r.real))
        scale = float(np.sum(np.abs(denominator) * np.abs(root) ** np.arange(denominator.size)))
        residual = abs(P.polyval(root, denominator))
        if residual > ROOT_RESIDUAL_TOLERANCE * scale:
            raise NumericalFailure(
                f"Root polishing stopped at r={root} with |D(r)|={residual:.3e} "
                f"(tolerance {ROOT_RESIDUAL_TOLERANCE * scale:.3e})."
            )
        if not root < 0:
            raise NumericalFailure(f"The denominator polynomial has a nonnegative root {root}.")
        roots.append(root)
    roots = sorted(roots)
    for a, b in zip(roots, roots[1:]):
        if abs(a - b) < ROOT_GAP_TOLERANCE * max(abs(a), abs(b)):
            raise RepeatedRoots(
                f"The denominator polynomial has repeated roots near {a}; "
                "perturb the phase rates of the OFF distribution."
            )
    return np.array(roots)


def build_table(model):
    """Build the residue table of the conditional idle probabilities of a channel.

    Parameters
    ----------
    model : OnOffModel
        Channel model with exponential ON time and exponential or
        hyper-exponential OFF time.

    Returns
    -------
    IdleProbTable
        Table answering `p_off_off`, `p_on_on` and `p_on_off` queries.

    Raises
    ------
    RepeatedRoots, NumericalFailure
        See `find_roots`.
    """
    numerator, denominator = kernel_polynomials(model)
    roots = find_roots(denominator)
    derivative = P.polyder(denominator)
    constant = P.polyval(0.0, numerator) / P.polyval(0.0, denominator)
    residues = P.polyval(roots, numerator) / (roots * P.polyval(roots, derivative))
    mean_on, mean_off = mean(model.on), mean(model.off)
    # g(0) = 0 and g(inf) = E(X)E(Y)/(E(X)+E(Y))
    if abs(constant + residues.sum()) > TABLE_CHECK_TOLERANCE * max(1.0, abs(constant)):
        raise NumericalFailure(
            f"Residue table does not reach 1 at dt=0 (offset {constant + residues.sum():.3e})."
        )
    stationary = mean_on * mean_off / (mean_on + mean_off)
    if abs(constant - stationary) > TABLE_CHECK_TOLERANCE * stationary:
        raise NumericalFailure(
            f"Residue table stationary term {constant} differs from {stationary}."
        )
    LOGGER.debug(f"Built idle probability table with roots {roots.tolist()}")
    return IdleProbTable(
        model=model,
        roots=tuple(roots.tolist()),
        off_constant=constant / mean_off,
        off_coefficients=tuple((residues / mean_off).tolist()),
        on_constant=constant / mean_on,
        on_coefficients=tuple((residues / mean_on).tolist()),
    )


def _unclipped(constant, coefficients, roots, dt):
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr < 0):
        raise InvalidParams(f"The elapsed time dt must be nonnegative (got {dt}).")
    terms = np.exp(np.multiply.outer(dt_arr, np.asarray(roots))) @ np.asarray(coefficients)
    return 1.0 - (constant + terms)


def _evaluate(constant, coefficients, roots, dt):
    raw = _unclipped(constant, coefficients, roots, dt)
    excess = np.maximum(-raw, raw - 1.0)
    if np.any(excess > PROBABILITY_TOLERANCE):
        raise NumericalFailure(
            f"Residue table evaluates outside [0, 1] by {float(np.max(excess)):.3e} at dt={dt}."
        )
    value = np.clip(raw, 0.0, 1.0)
    return float(value) if value.ndim == 0 else value


def unclipped_p_off_off(table, dt):
    """Residue sum of `P_OFF,OFF(dt)` before the range check and the clip to [0, 1]."""
    raw = _unclipped(table.off_constant, table.off_coefficients, table.roots, dt)
    return float(raw) if raw.ndim == 0 else raw


def unclipped_p_on_on(table, dt):
    """Residue sum of `P_ON,ON(dt)` before the range check and the clip to [0, 1]."""
    raw = _unclipped(table.on_constant, table.on_coefficients, table.roots, dt)
    return float(raw) if raw.ndim == 0 else raw


def p_off_off(table, dt):
    """Probability the channel is idle `dt` seconds after being sensed idle.

    Parameters
    ----------
    table : IdleProbTable
        Table of the channel.

    dt : float or numpy.ndarray
        Elapsed time(s) in seconds, nonnegative.

    Returns
    -------
    float or numpy.ndarray
        `P_OFF,OFF(dt)` in [0, 1].

    Raises
    ------
    NumericalFailure
        If the residue sum leaves [0, 1] by more than `PROBABILITY_TOLERANCE`.
    """
    return _evaluate(table.off_constant, table.off_coefficients, table.roots, dt)


def p_on_on(table, dt):
    """Probability the channel is busy `dt` seconds after being sensed busy."""
    return _evaluate(table.on_constant, table.on_coefficients, table.roots, dt)


def p_on_off(table, dt):
    """Probability the channel is idle `dt` seconds after being sensed busy, `1 - P_ON,ON(dt)`."""
    return 1.0 - p_on_on(table, dt)


def _oracle(stay, other, dt, trials, rng):
    """Fraction of alternating renewal paths that are in their starting state after `dt`.

    Each path starts at a stationary point of a `stay` interval (residual life
    drawn from the equilibrium distribution) and then alternates `other` and
    `stay` intervals.
    """
    if trials < 1:
        raise InvalidParams(f"The number of oracle trials must be positive (got {trials}).")
    if dt < 0:
        raise InvalidParams(f"The elapsed time dt must be nonnegative (got {dt}).")
    time_left = dt - sample(equilibrium(stay), rng, trials)
    in_start = np.ones(trials, dtype=bool)
    active = np.flatnonzero(time_left > 0)
    while active.size:
        in_start[active] = ~in_start[active]
        durations = np.empty(active.size)
        mask = in_start[active]
        n_stay = int(mask.sum())
        durations[mask] = sample(stay, rng, n_stay)
        durations[~mask] = sample(other, rng, active.size - n_stay)
        time_left[active] -= durations
        active = active[time_left[active] > 0]
    return RenewalOracleEstimate.from_hits(int(in_start.sum()), trials)


def oracle_p_off_off(model, dt, trials, rng):
    """Monte Carlo estimate of `P_OFF,OFF(dt)`.

    Parameters
    ----------
    model : OnOffModel
        Channel model.

    dt : float
        Elapsed time in seconds.

    trials : int
        Number of independent renewal paths.

    rng : numpy.random.Generator
        Random stream owned by the caller.

    Returns
    -------
    RenewalOracleEstimate
        Fraction of paths idle at `dt` and its standard error.
    """
    return _oracle(model.off, model.on, dt, trials, rng)


def oracle_p_on_on(model, dt, trials, rng):
    """Monte Carlo estimate of `P_ON,ON(dt)`, the mirror of `oracle_p_off_off`."""
    return _oracle(model.on, model.off, dt, trials, rng)
