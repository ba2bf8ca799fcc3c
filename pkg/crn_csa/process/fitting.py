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

"""Module that provides hyper-exponential (HED) parameters from empirical idle times.

Parameters are usually read from a file holding a distribution literal. As a
convenience, `fit_hed_em` fits a mixture of exponentials to idle-time
samples with the expectation-maximization (EM) algorithm.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from crn_csa.process.dist import ExpDist, HedDist, ccdf, format_distribution, parse_distribution
from crn_csa.process.errors import InvalidParams, NonConvergence, NumericalFailure, ParseError

LOGGER = logging.getLogger(__name__)

MAX_PHASES = 6
# Fitted rates closer than this relative gap are merged
MERGE_GAP = 1e-6
# Components whose responsibility mass falls below this fraction of the samples are dropped
DEGENERATE_MASS = 1e-10
CCDF_COLUMNS = ["t", "empirical_ccdf", "model_ccdf"]


@dataclass(frozen=True)
class IdleTimeSample:
    """Measured idle times of a channel.

    Parameters
    ----------
    values : numpy.ndarray
        Idle times in seconds, all positive.

    source : str
        Free-text label, e.g. the file the values were read from.
    """

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidParams(f"The idle-time sample '{self.source}' is empty.")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InvalidParams(f"Idle times of '{self.source}' must all be positive and finite.")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return int(self.values.size)


@dataclass
class HedFit:
    """Result of an EM fit.

    Attributes
    ----------
    dist : HedDist
        Fitted distribution, always valid.

    log_likelihood : list of float
        Log-likelihood after every iteration of the retained restart.

    converged : bool
        False when the iteration budget ran out.

    degenerate : bool
        True when components collapsed and were dropped or merged.

    restart : int
        Index of the retained restart.
    """

    dist: HedDist
    log_likelihood: List[float] = field(default_factory=list)
    converged: bool = True
    degenerate: bool = False
    restart: int = 0

    @property
    def iterations(self):
        return len(self.log_likelihood)


def parse_hed_params(text):
    """Parse HED parameters from the content of a parameter file.

    Lines starting with `#` are comments; the remaining lines are joined and
    parsed as one distribution literal. An exponential literal gives a
    one-phase HED.
    """
    lines = [line.strip() for line in text.splitlines()]
    literal = " ".join(line for line in lines if line and not line.startswith("#"))
    if not literal:
        raise ParseError("The HED parameter file holds no distribution literal.")
    d = parse_distribution(literal)
    if isinstance(d, ExpDist):
        return HedDist((1.0,), (d.rate,))
    return d


def load_hed_params(path):
    """Load and validate HED parameters from a file.

    Raises
    ------
    ParseError
        If the file content is not a distribution literal.

    InvalidParams
        If the parameters violate a HED invariant (the message names it).
    """
    return parse_hed_params(Path(path).read_text())


def parse_idle_times(text, source=""):
    """Parse one idle time in seconds per line; blank lines and `#` comments are skipped."""
    values = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ParseError(f"Line {number} of '{source}' is not a number: '{line}'.")
    return IdleTimeSample(np.array(values), source)


def load_idle_times(path):
    """Load an `IdleTimeSample` from a one-value-per-line text file."""
    return parse_idle_times(Path(path).read_text(), str(path))


def _initial_rates(x, k):
    return 1.0 / np.geomspace(x.max(), x.min(), k)


def _run_em(x, weights, rates, max_iter, tol):
    """Run EM from the given starting point.

    Returns the weights, rates, log-likelihood trajectory, convergence and
    degeneracy flags.
    """
    log_x_weights = np.log(weights)
    trajectory = []
    converged = False
    degenerate = False
    n = x.size
    for _ in range(max_iter):
        log_comp = log_x_weights + np.log(rates) - np.multiply.outer(x, rates)
        log_norm = logsumexp(log_comp, axis=1)
        ll = float(log_norm.sum())
        if trajectory and ll < trajectory[-1] - 1e-8 * abs(trajectory[-1]):
            raise NumericalFailure(
                f"EM log-likelihood decreased from {trajectory[-1]:.12g} to {ll:.12g}."
            )
        trajectory.append(ll)
        if len(trajectory) > 1 and ll - trajectory[-2] <= tol * abs(ll):
            converged = True
            break
        resp = np.exp(log_comp - log_norm[:, None])
        mass = resp.sum(axis=0)
        keep = mass > DEGENERATE_MASS * n
        if not keep.all():
            degenerate = True
            resp, mass = resp[:, keep], mass[keep]
        weights = mass / mass.sum()
        rates = mass / (resp * x[:, None]).sum(axis=0)
        log_x_weights = np.log(weights)
    return weights, rates, trajectory, converged, degenerate


def merge_rates(weights, rates, gap=MERGE_GAP):
    """Merge phases whose rates are within a relative `gap`, summing their weights."""
    order = np.argsort(rates)
    merged_w, merged_r = [], []
    for w, r in zip(np.asarray(weights)[order], np.asarray(rates)[order]):
        if merged_r and (r - merged_r[-1]) / r < gap:
            total = merged_w[-1] + w
            merged_r[-1] = (merged_w[-1] * merged_r[-1] + w * r) / total
            merged_w[-1] = total
        else:
            merged_w.append(float(w))
            merged_r.append(float(r))
    return merged_w, merged_r


def fit_hed_em(samples, n_phases, max_iter=1000, tol=1e-10, rng=None, n_init=1, strict=False):
    """Fit a hyper-exponential distribution to idle times with EM.

    Parameters
    ----------
    samples : IdleTimeSample
        Idle times.

    n_phases : int
        Number of phases, 1 to 6.

    max_iter : int
        Iteration budget of every restart.

    tol : float
        Relative log-likelihood improvement below which EM stops.

    rng : numpy.random.Generator, optional
        Stream perturbing the starting rates of restarts after the first.

    n_init : int
        Number of restarts. The first one starts from rates log-spaced
        between `1/max(x)` and `1/min(x)` with uniform weights.

    strict : bool
        Raise `NonConvergence` instead of flagging it.

    Returns
    -------
    HedFit
        Best fit over the restarts, ties broken by the lowest restart index.
    """
    if not 1 <= n_phases <= MAX_PHASES:
        raise InvalidParams(f"The number of phases must lie in 1..{MAX_PHASES} (got {n_phases}).")
    if len(samples) < 10 * n_phases:
        raise InvalidParams(
            f"Fitting {n_phases} phases needs at least {10 * n_phases} samples "
            f"(got {len(samples)})."
        )
    if n_init > 1 and rng is None:
        rng = np.random.default_rng(0)
    x = samples.values
    best = None
    for restart in range(n_init):
        rates = _initial_rates(x, n_phases)
        if restart > 0:
            rates = rates * np.exp(rng.normal(0.0, 0.5, n_phases))
        weights = np.full(n_phases, 1.0 / n_phases)
        weights, rates, trajectory, converged, degenerate = _run_em(
            x, weights, rates, max_iter, tol
        )
        if best is None or trajectory[-1] > best[2][-1]:
            best = (weights, rates, trajectory, converged, degenerate, restart)

    weights, rates, trajectory, converged, degenerate, restart = best
    merged_w, merged_r = merge_rates(weights, rates)
    degenerate = degenerate or len(merged_r) < n_phases
    dist = HedDist(tuple(merged_w), tuple(merged_r))
    if degenerate:
        LOGGER.warning(f"EM fit of '{samples.source}' kept {dist.n_phases} of {n_phases} phases")
    if not converged:
        message = f"EM fit of '{samples.source}' did not converge in {max_iter} iterations"
        if strict:
            raise NonConvergence(message + ".")
        LOGGER.warning(message + "; returning the best parameters found")
    return HedFit(dist, trajectory, converged, degenerate, restart)


def ccdf_table(samples, dist, n_points=50):
    """Compare the empirical and model complementary CDFs of idle times.

    Returns
    -------
    pandas.DataFrame
        Table with the columns `t,empirical_ccdf,model_ccdf` at `n_points`
        sample quantiles.
    """
    x = np.sort(samples.values)
    t = np.unique(np.quantile(x, np.linspace(0.0, 0.999, n_points)))
    empirical = 1.0 - np.searchsorted(x, t, side="right") / x.size
    return pd.DataFrame(
        {"t": t, "empirical_ccdf": empirical, "model_ccdf": ccdf(dist, t)}, columns=CCDF_COLUMNS
    )


def ccdf_distance(table):
    """Largest gap between the empirical and model CCDF of a `ccdf_table`."""
    return float(np.max(np.abs(table["empirical_ccdf"] - table["model_ccdf"])))


def fit_summary(fit) -> Tuple[str, float, int]:
    """Literal, final log-likelihood and iteration count of a fit."""
    return format_distribution(fit.dist), fit.log_likelihood[-1], fit.iterations
