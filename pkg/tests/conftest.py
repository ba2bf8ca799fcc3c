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

"""Shared fixtures of the crn_csa test-suite."""

import numpy as np
import pytest

from crn_csa.process.dist import ExpDist, HedDist, OnOffModel
from crn_csa.process.macsim import MacParams

MS = 1_000_000
S = 1_000_000_000


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def symmetric_model():
    """Exponential ON and OFF times with unit rates."""
    return OnOffModel(ExpDist(1.0), ExpDist(1.0))


@pytest.fixture
def hed_model():
    """Exponential ON time and a heavy-tailed two-phase OFF time."""
    return OnOffModel(ExpDist(2.0), HedDist((0.9, 0.1), (10.0, 0.1)))


@pytest.fixture
def three_phase_model():
    return OnOffModel(ExpDist(1.5), HedDist((0.6, 0.3, 0.1), (10.0, 1.0, 0.1)))


@pytest.fixture
def default_params():
    """Test-bed timings with 40 ms sensing and 1 s inter-sensing duration."""
    return MacParams()
