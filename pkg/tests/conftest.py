import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from instances import fast_mix_five_state, reversible_ring_five_state


@pytest.fixture(scope="session")
def five_state():
    return fast_mix_five_state()


@pytest.fixture(scope="session")
def ring_chain():
    return reversible_ring_five_state()
