import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roadfusion.synth import generate  # noqa: E402


def random_logit_values(rng, height, width, num_classes, scale=3.0):
    return rng.normal(0.0, scale, size=(height, width, num_classes)).astype(np.float32)


@pytest.fixture(scope="session")
def synth_suite(tmp_path_factory):
    """One shared synthetic dataset for pipeline-level tests."""
    out = tmp_path_factory.mktemp("suite")
    manifest_path = generate(out, seed=7)
    return manifest_path
