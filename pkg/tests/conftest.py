import os

# Pin BLAS threading before numpy is first imported anywhere in the test run,
# matching what the package itself does: results must not depend on load.
for _var in ("OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "OMP_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest

from evoloss.data import DataBundle, DatasetSpec, gen_dataset


def tiny_spec(n_clips=12, seed=0, n_classes=3, frames=5, height=3, width=3,
              audio_samples=8) -> DatasetSpec:
    return DatasetSpec(n_clips=n_clips, n_classes=n_classes, frames=frames,
                       height=height, width=width, audio_samples=audio_samples,
                       seed=seed)


@pytest.fixture(scope="session")
def tiny_set():
    return gen_dataset(tiny_spec())


@pytest.fixture(scope="session")
def tiny_bundle():
    spec = tiny_spec
    return DataBundle(unlabeled=gen_dataset(spec(n_clips=24, seed=1)),
                      probe=gen_dataset(spec(n_clips=12, seed=2)),
                      test=gen_dataset(spec(n_clips=12, seed=3)))
