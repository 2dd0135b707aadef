import time

import numpy as np
import pytest

from jeirt.data import Dataset, make_split
from jeirt.engine import TrainConfig, train
from jeirt.synth import ConeMixture, LogNormalDifficulty, generate_planted

RECOVERY_WORLD_SEED = 11
RECOVERY_SPLIT_SEED = 5
RECOVERY_TRAIN_SEED = 7

RECOVERY_TRAIN_CFG = TrainConfig(
    embed_dim=8,
    learning_rate=1e-3,
    batch_size=256,
    max_epochs=80,
    seed=RECOVERY_TRAIN_SEED,
    patience=10,
)


@pytest.fixture(scope="session")
def recovery_world():
    """The m=50, n=2000, d=8 world behind the recovery/onboarding criteria."""
    return generate_planted(
        m=50,
        n=2000,
        d=8,
        seed=RECOVERY_WORLD_SEED,
        difficulty_profile=LogNormalDifficulty(median=1.0, sigma_log=0.9),
        direction_profile=ConeMixture(count=1, half_angle_deg=60.0),
        target_mean_prob=0.5,
        model_noise=0.6,
    )


@pytest.fixture(scope="session")
def recovery_split(recovery_world):
    return make_split(recovery_world.dataset, (0.8, 0.1, 0.1), seed=RECOVERY_SPLIT_SEED)


@pytest.fixture(scope="session")
def recovery_run(recovery_world, recovery_split):
    start = time.monotonic()
    ckpt = train(
        recovery_world.dataset, recovery_split, recovery_world.features, RECOVERY_TRAIN_CFG
    )
    return {"ckpt": ckpt, "seconds": time.monotonic() - start}


@pytest.fixture(scope="session")
def recovery_ckpt(recovery_run):
    return recovery_run["ckpt"]


@pytest.fixture(scope="session")
def holdout_setup(recovery_world):
    """Checkpoint trained with the last model's records removed, for onboarding."""
    held_id = recovery_world.model_ids[-1]
    rest = [r for r in recovery_world.dataset.records if r.model_id != held_id]
    held = [r for r in recovery_world.dataset.records if r.model_id == held_id]
    ds = Dataset.from_records(rest)
    split = make_split(ds, (0.8, 0.1, 0.1), seed=RECOVERY_SPLIT_SEED)
    ckpt = train(ds, split, recovery_world.features, RECOVERY_TRAIN_CFG)
    return ckpt, held, held_id


@pytest.fixture(scope="session")
def norm_world():
    """Wide-norm world where the norm-difficulty gradient dominates (ROC floor)."""
    return generate_planted(
        m=50,
        n=2000,
        d=8,
        seed=RECOVERY_WORLD_SEED,
        difficulty_profile=LogNormalDifficulty(median=1.0, sigma_log=1.0),
        direction_profile=ConeMixture(count=1, half_angle_deg=60.0),
        target_mean_prob=0.45,
        model_noise=0.3,
    )


@pytest.fixture(scope="session")
def norm_ckpt(norm_world):
    split = make_split(norm_world.dataset, (0.8, 0.1, 0.1), seed=RECOVERY_SPLIT_SEED)
    return train(norm_world.dataset, split, norm_world.features, RECOVERY_TRAIN_CFG)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
