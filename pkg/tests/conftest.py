"""Shared fixtures: the trained 1D reference models are expensive, so they
are session-scoped and reused across test modules."""

import numpy as np
import pytest

from timescore.losses import TrainConfig, train
from timescore.nn import ScoreNet
from timescore.oracle import GaussianSpec
from timescore.paths import VPPath
from timescore.weighting import TimeNorm

TASK_OFFSET = 4.0
TRAIN_ITERS = 15000
TRAIN_LR = 2.5e-3
TRAIN_BATCH = 128


@pytest.fixture(scope="session")
def gaussian_1d_task():
    p1 = GaussianSpec([TASK_OFFSET], 1.0)
    path = VPPath(dim=1)
    sampler = lambda rng, n: p1.sample(rng, n)
    return p1, path, sampler


def _train_1d(objective, gaussian_1d_task):
    _, path, sampler = gaussian_1d_task
    net = ScoreNet(1, 1, seed=0)
    result = train(
        net,
        path,
        sampler,
        objective,
        TimeNorm(c=1.0),
        TrainConfig(
            lr=TRAIN_LR, batch_size=TRAIN_BATCH, n_iters=TRAIN_ITERS, seed=1,
            lr_schedule="cosine",
        ),
    )
    return result


@pytest.fixture(scope="session")
def ctsm_1d(gaussian_1d_task):
    """Scalar model trained on the 1D two-Gaussian task."""
    return _train_1d("ctsm", gaussian_1d_task)


@pytest.fixture(scope="session")
def ctsm_v_1d(gaussian_1d_task):
    """Vectorized model trained on the same task (D = 1 collapse)."""
    return _train_1d("ctsm_v", gaussian_1d_task)


@pytest.fixture(scope="session")
def gradient_cosines(ctsm_1d):
    """TSM-vs-CTSM full-batch gradient cosines near the trained optimum,
    for the correct objective and for the known-bad dlambda/dt scaling."""
    from timescore.checks import tsm_ctsm_gradient_cosine

    net = ctsm_1d.net
    good = tsm_ctsm_gradient_cosine(seed=0, net=net)
    bad = tsm_ctsm_gradient_cosine(seed=0, net=net, lambda_dot_coeff=1.0)
    return good, bad
