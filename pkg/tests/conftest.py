import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fieldpress.grid import Snapshot

UNIT_DOMAIN = (-1.0, 1.0, -1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def make_snapshot(values, domain=UNIT_DOMAIN, timestep_index=0, time=0.0):
    return Snapshot(
        values=np.asarray(values, dtype=np.float32),
        domain=domain,
        timestep_index=timestep_index,
        time=time,
    )
