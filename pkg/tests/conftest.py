import pytest

from motkit.mot_io import SyntheticSpec, gen_synthetic_sequence, write_sequence
from motkit.training import TrackingDataset


@pytest.fixture(scope="session")
def small_seq_dir(tmp_path_factory):
    spec = SyntheticSpec(width=128, height=96, frames=60, num_identities=8, seed=21,
                         name="unit-train")
    d = tmp_path_factory.mktemp("data") / "unit-train"
    write_sequence(gen_synthetic_sequence(spec), d)
    return d


@pytest.fixture(scope="session")
def small_dataset(small_seq_dir):
    return TrackingDataset.from_root(small_seq_dir)
