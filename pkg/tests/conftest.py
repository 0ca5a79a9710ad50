from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    """8 participants x 12 sequences plus a few proxies of each kind."""
    from motiongate.synthgen import corpus_traces

    return corpus_traces(8, 12, (3, 3, 4), seed=7)


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory, small_corpus):
    from motiongate.trace import write_corpus

    out = tmp_path_factory.mktemp("corpus")
    write_corpus(out, small_corpus)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory, small_corpus):
    """A detector ("gate") and a verification classifier ("verify") trained on the small corpus."""
    from motiongate.classifiers import ClassifierConfig
    from motiongate.detectors import DetectorConfig
    from motiongate.preprocess import WindowSpec
    from motiongate.scoring import train_scoring_model
    from motiongate.trace import ChannelSelector

    out = tmp_path_factory.mktemp("models")
    train_scoring_model(small_corpus, DetectorConfig("knn_euclid"), WindowSpec(10, 50, 150, "single"),
                        ChannelSelector("acc_xyz"), seed=7, model_id="gate").save(out / "gate.mgm")
    train_scoring_model(small_corpus, ClassifierConfig("quant_et", n_trees=30), WindowSpec(10, 50, 150, "double"),
                        ChannelSelector("nine"), seed=7, model_id="verify").save(out / "verify.mgm")
    return out


@pytest.fixture(scope="session")
def live_server(model_dir):
    """Base URL of a scoring server running in a background thread."""
    import threading

    from motiongate.server import make_server

    server = make_server(model_dir, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()
