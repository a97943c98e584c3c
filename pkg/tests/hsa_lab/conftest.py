"""Fixtures for testing hsa-lab commands."""

import numpy as np
import pytest
from dask.distributed import Client, LocalCluster

import hsa_lab.file_io as lab_io
from hsa_lab.model.checkpoint import save_checkpoint
from hsa_lab.model.config import ModelConfig
from hsa_lab.model.decoder import HSAModel
from hsa_lab.model.params import init_params
from hsa_lab.numerics.tensor import precision
from hsa_lab.train.phases import load_run_config
from hsa_lab.train.resume_plan import checkpoint_name

# pylint: disable=missing-function-docstring, redefined-outer-name


@pytest.fixture(scope="session", name="dask_client")
def dask_client():
    """Create a single client for use by all unit test cases."""
    cluster = LocalCluster(n_workers=1, threads_per_worker=1, dashboard_address=":0")
    client = Client(cluster)
    yield client
    client.close()
    cluster.close()


def pytest_collection_modifyitems(items):
    """Modify dask unit tests to
        - have a longer timeout default timeout (10 seconds)
        - require use of the `dask_client` fixture, even if it's not requsted

    Individual tests that will be particularly long-running can still override
    the default timeout, by using an annotation like:

        @pytest.mark.dask(timeout=60)
        def test_long_running():
            ...
    """
    first_dask = True
    for item in items:
        timeout = None
        for mark in item.iter_markers(name="dask"):
            timeout = 10
            if "timeout" in mark.kwargs:
                timeout = int(mark.kwargs.get("timeout"))
        if timeout:
            if first_dask:
                ## The first test requires more time to set up the dask client
                timeout += 10
                first_dask = False
            item.add_marker(pytest.mark.timeout(timeout))
            item.add_marker(pytest.mark.usefixtures("dask_client"))


@pytest.fixture
def float64():
    """Run the test body with 64-bit tensors."""
    with precision(64):
        yield


@pytest.fixture
def tiny_config():
    """Two lower and two upper layers, one HSA layer, 4-token chunks."""
    return ModelConfig(
        d_model=16,
        n_layers=4,
        n_heads=2,
        chunk_size=4,
        top_k=2,
        swa_window=6,
        encoder_depth=1,
        ffn_width=32,
        hsa_layers=(2,),
    )


@pytest.fixture
def grouped_config():
    """Grouped key/value heads and two HSA layers."""
    return ModelConfig(
        d_model=32,
        n_layers=4,
        n_heads=4,
        n_kv_heads=2,
        chunk_size=4,
        top_k=3,
        swa_window=5,
        encoder_depth=1,
        ffn_width=48,
        hsa_layers=(2, 3),
    )


@pytest.fixture
def tiny_model(tiny_config, float64):
    return HSAModel(tiny_config, seed=3)


@pytest.fixture
def micro_run_config():
    return load_run_config("micro")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def micro_run_dir(tmp_path, micro_run_config):
    """A training run directory holding one untrained micro checkpoint and its run config."""
    run_dir = tmp_path / "micro_run"
    save_checkpoint(
        run_dir / "checkpoints" / checkpoint_name(1, "pretrain", 4),
        micro_run_config.model,
        init_params(micro_run_config.model, seed=0),
        extra={"phase_name": "pretrain", "step": 4, "run_config_hash": micro_run_config.config_hash()},
    )
    lab_io.write_json_file(run_dir / "run_config.json", micro_run_config.to_dict(), canonical=True)
    return run_dir
