import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np
import pytest

from isac_atr.dataset import DatasetManifest
from isac_atr.waveform import RadioConfig, TddPattern


def mini_radio(n=16, m=16) -> RadioConfig:
    """16x16 stand-in config for fast engine-level tests."""
    return RadioConfig(
        f_c=27.4e9,
        delta_f=3e6,
        N=n,
        M=m,
        T_O=150e-6,
        T_CP=6.25e-6,
        T_s=156.25e-6,
        tdd=TddPattern(8, 6),
    )


def mini_manifest(total=48, seed=11, **kwargs) -> DatasetManifest:
    return DatasetManifest(total_samples=total, seed=seed, radio=mini_radio(), **kwargs)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
