import numpy as np
import pytest

from stripe_reid.geometry import Rect
from stripe_reid.manifest import Sample


def make_sample(sid, entity, camera="c0", t=0, side="left", bbox=(0, 0, 10, 10), **kw):
    tiger = entity.rsplit("_", 1)[0] if entity != "UNKNOWN" else "UNKNOWN"
    return Sample(
        sample_id=sid,
        camera_id=camera,
        timestamp_ms=t,
        entity_id=entity,
        tiger_id=tiger,
        side=side,
        bbox=Rect.from_xywh(*bbox),
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
