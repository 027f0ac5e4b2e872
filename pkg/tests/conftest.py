"""Shared fixtures."""

import pytest

from cough_toolbox.dataset import SyntheticSpec, generate_synthetic_fixtures

SMALL_SPEC = SyntheticSpec(n_coughers=3, bursts_per_cougher=6, events_per_class=12, n_speakers=4,
                           n_noise_files=2, noise_sec=2.0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A small synthetic corpus shared by the tests; treat it as read-only."""
    return generate_synthetic_fixtures(SMALL_SPEC, seed=0, out_dir=tmp_path_factory.mktemp("corpus"))
