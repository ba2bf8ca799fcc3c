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

"""Module that creates the argument parser of the crn_csa command-line interface."""

from argparse import ArgumentParser

from crn_csa import VERSION


def _add_common_arguments(p):
    p.add_argument(
        "--log_file",
        required=False,
        default=None,
        help="Path to output log file. If not provided, messages are printed to stderr.",
    )
    p.add_argument(
        "--verbose",
        action="store_true",
        help="Log every simulation event (DEBUG level).",
    )


def create_parser():
    """Create argument parser of the script.

    Returns
    -------
    p : argparse.ArgumentParser
        Parser of the script.
    """
    p = ArgumentParser(
        prog="crn_csa",
        description="Simulate channel selection algorithms of a cognitive radio network "
        "over primary users with exponential or hyper-exponential idle times.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparsers = p.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser(
        "run",
        help="Run the experiment described by a scenario file.",
        description="Run every (sweep value, seed, policy) cell of a scenario file and write "
        "per-run JSON reports and an aggregate CSV table.",
    )
    run.add_argument("config", help="Scenario file in INI format (see the config format page).")
    run.add_argument(
        "--seed-override",
        dest="seed_override",
        type=int,
        default=None,
        help="Run this single seed instead of the seeds listed in the scenario file.",
    )
    run.add_argument(
        "--trace-out",
        dest="trace_out",
        action="store_true",
        help="Also write the PU traces and the event logs of every run in CSV format.",
    )
    run.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="Number of worker processes. Results do not depend on it.",
    )
    run.add_argument(
        "--output_dir",
        default=None,
        help="Output directory. Defaults to the [outputs] directory of the scenario file.",
    )
    _add_common_arguments(run)

    validate = subparsers.add_parser(
        "validate",
        help="Run the self-validation suite.",
        description="Check the idle probability tables against Monte Carlo oracles and the "
        "structure of the channel selection algorithms.",
    )
    validate.add_argument(
        "--quick",
        action="store_true",
        help="Use 10^5 oracle trials and a shorter equivalence run.",
    )
    validate.add_argument(
        "--inject-fault",
        dest="inject_fault",
        choices=["root"],
        default=None,
        help="Corrupt one root of an idle probability table to exercise the failure path.",
    )
    validate.add_argument("--seed", type=int, default=20230501, help="Seed of the suite.")
    _add_common_arguments(validate)

    fit = subparsers.add_parser(
        "fit",
        help="Fit a hyper-exponential distribution to idle times.",
        description="Fit a mixture of exponentials to idle times (one value in seconds per line) "
        "with the EM algorithm and print the distribution literal.",
    )
    fit.add_argument("samples", help="Text file with one idle time in seconds per line.")
    fit.add_argument("--phases", type=int, required=True, help="Number of phases (1 to 6).")
    fit.add_argument(
        "--max_iter", type=int, default=1000, help="Iteration budget of every restart."
    )
    fit.add_argument("--tol", type=float, default=1e-10, help="Relative log-likelihood tolerance.")
    fit.add_argument("--n_init", type=int, default=1, help="Number of EM restarts.")
    fit.add_argument("--seed", type=int, default=0, help="Seed of the restarts.")
    fit.add_argument(
        "--ccdf_out",
        default=None,
        help="Path to the CCDF comparison table in CSV format (t,empirical_ccdf,model_ccdf).",
    )
    _add_common_arguments(fit)

    idle = subparsers.add_parser(
        "idleprob",
        help="Print the conditional idle probabilities of a channel model.",
        description="Print P_OFF,OFF and P_ON,OFF of an ON/OFF model on a grid of elapsed times.",
    )
    idle.add_argument("model", help="Model literal ON/OFF, e.g. 'exp(2)/hed(0.9:10, 0.1:0.1)'.")
    idle.add_argument(
        "--dt-grid",
        dest="dt_grid",
        nargs="+",
        default=["0", "10ms", "100ms", "1s", "10s"],
        help="Elapsed times, with unit suffix ns, us, ms or s.",
    )
    idle.add_argument("--output", default=None, help="Also write the table to this CSV file.")
    _add_common_arguments(idle)
    return p
