import math

import pytest

from regpinn.dataio import CrossingRecord, GsmPosition, synth_generate, to_polar
from regpinn.models import DriverInput, shue_model


def make_record(r: float, theta_deg: float, bz: float, dp: float, timestamp: int = 0) -> CrossingRecord:
    """Record on the y = 0 half-plane at (r, theta) with drivers attached."""
    theta = math.radians(theta_deg)
    pos = GsmPosition(r * math.cos(theta), 0.0, r * math.sin(theta))
    return CrossingRecord(timestamp, pos, to_polar(pos), DriverInput(bz, dp), "TEST")


@pytest.fixture
def shue_records():
    return synth_generate(shue_model(), n=400, seed=0)


@pytest.fixture
def noisy_records():
    return synth_generate(shue_model(), n=400, noise_sigma=0.1, seed=1)
