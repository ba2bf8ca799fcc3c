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

"""Standalone script which runs the crn_csa simulator from the terminal."""

import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from crn_csa.process.checks import run_checks
from crn_csa.process.dist import parse_model
from crn_csa.process.errors import (
    ConfigError,
    InvalidParams,
    NumericalFailure,
    ParseError,
    RepeatedRoots,
)
from crn_csa.process.fitting import ccdf_table, fit_hed_em, fit_summary, load_idle_times
from crn_csa.process.idleprob import build_table, p_off_off, p_on_off
from crn_csa.process.scenario import override_seeds, parse_duration, run_experiment
from crn_csa.utils.io import load_scenario, save_csv, save_experiment
from crn_csa.utils.logger import setup_logging
from crn_csa.utils.parser import create_parser

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def run(args):
    config = load_scenario(args.config)
    config = override_seeds(config, args.seed_override)
    if args.trace_out:
        config = replace(config, trace_out=True)
    output_dir = Path(args.output_dir) if args.output_dir else config.output_directory
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be at least 1 (got {args.jobs}).")
    result = run_experiment(config, jobs=args.jobs)
    aggregate_file = save_experiment(result, output_dir)
    print(f"Aggregate table written to {aggregate_file}")
    return EXIT_OK


def validate(args):
    results = run_checks(quick=args.quick, fault=args.inject_fault, seed=args.seed)
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name} ({result.seconds:.1f} s): {result.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"Failed checks: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def fit(args):
    samples = load_idle_times(args.samples)
    result = fit_hed_em(
        samples,
        args.phases,
        max_iter=args.max_iter,
        tol=args.tol,
        rng=np.random.default_rng(args.seed),
        n_init=args.n_init,
    )
    literal, log_likelihood, iterations = fit_summary(result)
    print(literal)
    print(
        f"# log-likelihood {log_likelihood:.6f} after {iterations} iterations, "
        f"converged: {result.converged}, degenerate: {result.degenerate}"
    )
    if args.ccdf_out:
        save_csv(ccdf_table(samples, result.dist), args.ccdf_out)
    return EXIT_OK


def idleprob(args):
    table = build_table(parse_model(args.model))
    dt_ns = [parse_duration(dt) for dt in args.dt_grid]
    dt_s = np.array(dt_ns, dtype=float) / 1e9
    frame = pd.DataFrame(
        {
            "dt_ns": dt_ns,
            "p_off_off": p_off_off(table, dt_s),
            "p_on_off": p_on_off(table, dt_s),
        }
    )
    print(frame.to_string(index=False))
    if args.output:
        save_csv(frame, args.output)
    return EXIT_OK


COMMANDS = {"run": run, "validate": validate, "fit": fit, "idleprob": idleprob}


def main(argv=None):
    """Main script function.

    Returns
    -------
    exit_code : {0, 1, 2}
        Exit code (0: success / 1: failed check or numerical failure /
        2: usage or configuration error)
    """
    # Create parser and parse script arguments
    parser = create_parser()
    args = parser.parse_args(argv)
    # Set up logging with optional log file
    setup_logging(args.log_file, args.verbose)
    LOGGER.info(f"Starting crn_csa {args.command} with arguments: {vars(args)}")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError, InvalidParams, OSError) as e:
        LOGGER.error(str(e))
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailure, RepeatedRoots) as e:
        LOGGER.error(str(e))
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
