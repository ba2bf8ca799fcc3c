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

"""Module that defines the exceptions raised by the `crn_csa.process` sub-package."""


class CrnCsaError(Exception):
    """Base class of every error raised by `crn_csa`."""


class InvalidParams(CrnCsaError, ValueError):
    """Distribution or model parameters violate an invariant."""


class RepeatedRates(InvalidParams):
    """Two phases of a hyper-exponential distribution share the same rate."""


class ParseError(CrnCsaError, ValueError):
    """A distribution literal, a duration or a config value could not be parsed."""


class ConfigError(CrnCsaError, ValueError):
    """Scenario or MAC parameters are inconsistent."""


class RepeatedRoots(CrnCsaError, ArithmeticError):
    """The denominator polynomial has (near-)repeated roots."""


class NumericalFailure(CrnCsaError, ArithmeticError):
    """Root polishing did not reach the requested residual."""


class NeverSensed(CrnCsaError, LookupError):
    """A belief was requested from the sensing history of a channel never sensed."""


class OutOfHorizon(CrnCsaError, IndexError):
    """A trace was queried outside of the time span it covers."""


class ZeroElapsed(CrnCsaError, ZeroDivisionError):
    """A rate metric was requested over an empty time span."""


class NonConvergence(CrnCsaError, RuntimeError):
    """The EM fitter did not converge within its iteration budget."""
