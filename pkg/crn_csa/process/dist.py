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

"""Module that provides the primary-user holding-time distributions.

Two families are supported, the exponential distribution (`ExpDist`) and the
hyper-exponential distribution (`HedDist`), a probability-weighted mixture of
exponential phases used to approximate heavy-tailed idle times. An
`OnOffModel` pairs an exponential ON time with an exponential or
hyper-exponential OFF time.

Distributions can be written as literals in scenario files::

    exp(2.0)
    hed(0.9:10, 0.1:0.1)

where each `weight:rate` pair of a `hed` literal is one phase and rates are
expressed in 1/second.
"""

import re
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from crn_csa.process.errors import InvalidParams, ParseError, RepeatedRates

# Relative gap below which two phase rates are considered equal
RATE_GAP_TOLERANCE = 1e-9
# Weights are renormalized when their sum deviates from 1 by at most this value
WEIGHT_SUM_TOLERANCE = 1e-9

_EXP_LITERAL = re.compile(r"^\s*exp\s*\(\s*(?:rate\s*=\s*)?([^()]+?)\s*\)\s*$", re.IGNORECASE)
_HED_LITERAL = re.compile(r"^\s*hed\s*\((.*)\)\s*$", re.IGNORECASE)


def _check_rate(rate, what="rate"):
    if not np.isfinite(rate) or rate <= 0:
        raise InvalidParams(f"The {what} must be positive and finite (got {rate}).")


@dataclass(frozen=True)
class ExpDist:
    """Exponential distribution with density `rate * exp(-rate * t)`.

    Parameters
    ----------
    rate : float
        Rate in 1/second.
    """

    rate: float

    def __post_init__(self):
        object.__setattr__(self, "rate", float(self.rate))
        _check_rate(self.rate)


@dataclass(frozen=True)
class HedDist:
    """Hyper-exponential distribution with density `sum_i p_i * l_i * exp(-l_i * t)`.

    Weights are renormalized if their sum deviates from one by at most
    `WEIGHT_SUM_TOLERANCE`. Phase rates must be pairwise distinct.

    Parameters
    ----------
    weights : tuple of float
        Phase probabilities `p_i`, each in (0, 1].

    rates : tuple of float
        Phase rates `l_i` in 1/second.
    """

    weights: Tuple[float, ...]
    rates: Tuple[float, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        rates = tuple(float(r) for r in self.rates)
        if len(weights) == 0:
            raise InvalidParams("A hyper-exponential distribution needs at least one phase.")
        if len(weights) != len(rates):
            raise InvalidParams(
                f"Got {len(weights)} weights for {len(rates)} rates in hyper-exponential phases."
            )
        for w in weights:
            if not np.isfinite(w) or w <= 0 or w > 1:
                raise InvalidParams(f"Phase weights must lie in (0, 1] (got {w}).")
        for r in rates:
            _check_rate(r, "phase rate")
        total = sum(weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidParams(f"Phase weights must sum to 1 (got {total:.12g}).")
        weights = tuple(w / total for w in weights)
        for i in range(len(rates)):
            for j in range(i + 1, len(rates)):
                gap = abs(rates[i] - rates[j]) / max(rates[i], rates[j])
                if gap < RATE_GAP_TOLERANCE:
                    raise RepeatedRates(
                        f"Phases {i} and {j} share the rate {rates[i]}; "
                        "merge them or perturb one of the rates."
                    )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "rates", rates)

    @property
    def n_phases(self):
        """Number of phases of the mixture."""
        return len(self.rates)


Distribution = Union[ExpDist, HedDist]


@dataclass(frozen=True)
class OnOffModel:
    """Primary-user activity model of one channel.

    Parameters
    ----------
    on : ExpDist
        Distribution of the ON (busy) holding time X.

    off : ExpDist or HedDist
        Distribution of the OFF (idle) holding time Y.
    """

    on: ExpDist
    off: Distribution

    def __post_init__(self):
        if not isinstance(self.on, ExpDist):
            raise InvalidParams("The ON time distribution must be exponential.")
        if not isinstance(self.off, (ExpDist, HedDist)):
            raise InvalidParams(
                "The OFF time distribution must be exponential or hyper-exponential."
            )

    @property
    def mean_on(self):
        """Mean ON time E(X) in seconds."""
        return mean(self.on)

    @property
    def mean_off(self):
        """Mean OFF time E(Y) in seconds."""
        return mean(self.off)

    @property
    def duty_cycle(self):
        """Long-run fraction of time the channel is busy, E(X)/(E(X)+E(Y))."""
        return self.mean_on / (self.mean_on + self.mean_off)

    @property
    def idle_probability(self):
        """Stationary probability of the channel being idle, E(Y)/(E(X)+E(Y))."""
        return self.mean_off / (self.mean_on + self.mean_off)


def _phases(d):
    """Return the (weights, rates) arrays of a distribution; an exponential has one phase."""
    if isinstance(d, ExpDist):
        return np.array([1.0]), np.array([d.rate])
    return np.asarray(d.weights), np.asarray(d.rates)


def mean(d):
    """Return the mean of a distribution in seconds.

    Parameters
    ----------
    d : ExpDist or HedDist
        Distribution.

    Returns
    -------
    float
        `1/rate` for an exponential, `sum_i p_i / l_i` for a hyper-exponential.
    """
    if isinstance(d, ExpDist):
        return 1.0 / d.rate
    return float(sum(w / r for w, r in zip(d.weights, d.rates)))


def variance(d):
    """Return the variance of a distribution in seconds squared."""
    weights, rates = _phases(d)
    second_moment = float(np.sum(2.0 * weights / rates**2))
    return second_moment - mean(d) ** 2


def laplace(d, s):
    """Evaluate the Laplace transform of the density at `s >= 0`.

    Parameters
    ----------
    d : ExpDist or HedDist
        Distribution.

    s : float or numpy.ndarray
        Transform variable(s), nonnegative.

    Returns
    -------
    float or numpy.ndarray
        `l/(s+l)` for an exponential, `sum_i p_i l_i/(s+l_i)` for a
        hyper-exponential.
    """
    if isinstance(d, ExpDist):
        return d.rate / (s + d.rate)
    s_arr = np.asarray(s, dtype=float)
    value = sum(w * r / (s_arr + r) for w, r in zip(d.weights, d.rates))
    return float(value) if np.ndim(value) == 0 else value


def ccdf(d, t):
    """Return the complementary CDF `Pr(T > t)` of a distribution."""
    weights, rates = _phases(d)
    t_arr = np.asarray(t, dtype=float)
    value = np.sum(weights * np.exp(-np.multiply.outer(t_arr, rates)), axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def sample(d, rng, size=None):
    """Draw holding times from a distribution.

    A hyper-exponential draw first picks a phase according to the weights,
    then an exponential time with the rate of that phase.

    Parameters
    ----------
    d : ExpDist or HedDist
        Distribution.

    rng : numpy.random.Generator
        Random stream owned by the caller.

    size : int, optional
        Number of draws. A single float is returned when omitted.

    Returns
    -------
    float or numpy.ndarray
        Holding time(s) in seconds.
    """
    weights, rates = _phases(d)
    if rates.size == 1:
        return rng.exponential(1.0 / rates[0], size=size)
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    phase = np.searchsorted(cumulative, rng.random(size), side="right")
    draws = rng.standard_exponential(size) / rates[phase]
    return float(draws) if size is None else draws


def equilibrium(d):
    """Return the equilibrium (residual-life) distribution of `d`.

    The residual life of a renewal process observed at a random instant has
    density `Pr(T >= r) / E(T)`. For an exponential this is the same
    exponential; for a hyper-exponential it is a hyper-exponential with the
    same rates and weights `q_i = (p_i / l_i) / E(T)`.
    """
    if isinstance(d, ExpDist):
        return d
    m = mean(d)
    return HedDist(tuple(w / r / m for w, r in zip(d.weights, d.rates)), d.rates)


def scale(d, factor):
    """Stretch a distribution in time by `factor` (every rate is divided by `factor`)."""
    if not factor > 0:
        raise InvalidParams(f"The scaling factor must be positive (got {factor}).")
    if isinstance(d, ExpDist):
        return ExpDist(d.rate / factor)
    return HedDist(d.weights, tuple(r / factor for r in d.rates))


def moment_matched_exponential(d):
    """Return the exponential distribution with the same mean as `d`."""
    return ExpDist(1.0 / mean(d))


def parse_distribution(text):
    """Parse a distribution literal.

    Parameters
    ----------
    text : str
        Literal of the form `exp(rate)` or `hed(p1:l1, p2:l2, ...)`.

    Returns
    -------
    ExpDist or HedDist
        Validated distribution.

    Raises
    ------
    ParseError
        When the literal does not follow the grammar.

    InvalidParams
        When the parsed parameters violate a distribution invariant.
    """
    match = _EXP_LITERAL.match(text)
    if match:
        return ExpDist(_parse_float(match.group(1), text))
    match = _HED_LITERAL.match(text)
    if match:
        body = match.group(1).strip()
        if not body:
            raise ParseError(f"Empty phase list in distribution literal '{text}'.")
        weights, rates = [], []
        for phase in body.split(","):
            parts = phase.split(":")
            if len(parts) != 2:
                raise ParseError(
                    f"Phase '{phase.strip()}' of '{text}' must be written as weight:rate."
                )
            weights.append(_parse_float(parts[0], text))
            rates.append(_parse_float(parts[1], text))
        return HedDist(tuple(weights), tuple(rates))
    raise ParseError(
        f"Cannot parse distribution literal '{text}' (expected exp(rate) or hed(p1:l1, ...))."
    )


def _parse_float(token, text):
    try:
        return float(token.strip())
    except ValueError:
        raise ParseError(f"'{token.strip()}' is not a number in distribution literal '{text}'.")


def format_distribution(d):
    """Write a distribution as a literal accepted by `parse_distribution`."""
    if isinstance(d, ExpDist):
        return f"exp({d.rate!r})"
    return "hed(" + ", ".join(f"{w!r}:{r!r}" for w, r in zip(d.weights, d.rates)) + ")"


def make_model(on, off):
    """Build an `OnOffModel` from two distributions or two literals."""
    if isinstance(on, str):
        on = parse_distribution(on)
    if isinstance(off, str):
        off = parse_distribution(off)
    return OnOffModel(on, off)


def parse_model(text, separator="/"):
    """Parse an `ON/OFF` model literal such as `exp(2)/hed(0.5:1, 0.5:5)`."""
    if separator not in text:
        raise ParseError(f"Model literal '{text}' must be written as ON{separator}OFF.")
    on, off = text.split(separator, 1)
    return make_model(on, off)


def format_model(model: OnOffModel, separator: Optional[str] = "/"):
    """Write a model as an `ON/OFF` literal."""
    return f"{format_distribution(model.on)}{separator}{format_distribution(model.off)}"
