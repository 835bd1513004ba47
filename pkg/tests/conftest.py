import os

import matplotlib
import pytest

from dbea.config import RunConfig
from dbea.world import DatasetConfig
from dbea.model import ModelConfig
from dbea.training import TrainConfig

matplotlib.use('Agg')


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (set DBEA_SLOW_TESTS=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("DBEA_SLOW_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="set DBEA_SLOW_TESTS=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_config(tmp_path):
    """
    A run small enough to train in a second or two.
    """
    dataset = DatasetConfig(scenes=40, ood_scenes=10, num_classes=3, queries=6,
                            max_objects=2, feature_dim=8, world_hidden=12)
    model = ModelConfig(feature_dim=8, trunk_hidden=8, embed_dim=8, head_hidden=8,
                        num_classes=3, queries=6, top_k=3)
    return RunConfig(seed=0, dataset=dataset, model=model,
                     train=TrainConfig(epochs=2, batch_size=4),
                     output_dir=str(tmp_path / "run")).validate()
