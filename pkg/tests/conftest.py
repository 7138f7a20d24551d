import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from plateflow import boost, synth


@pytest.fixture(scope="session")
def trained_cascade():
    """Cascade trained on the synthetic generator; shared across tests."""
    pos, neg = synth.make_training_set(300, 1200, seed=3)
    return boost.train_cascade(boost.TrainingSet(pos, neg), boost.StageTargets())


@pytest.fixture(scope="session")
def synth_stream(tmp_path_factory):
    """One generated 3-vehicle stream with annotations and OCR manifest."""
    out = tmp_path_factory.mktemp("streams") / "stream-fix"
    spec = synth.random_spec("stream-fix", seed=11, n_events=3, width=320, height=320)
    synth.generate_stream(spec, out)
    return out
