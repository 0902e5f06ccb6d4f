"""
Shared fixtures: a small synthetic experiment that fits every model family quickly.
"""

from pathlib import Path

import pytest

from ambit.baselines import FitContext
from ambit.schemas import (
    BoostConfig,
    DataSource,
    ExperimentConfig,
    FilterConfig,
    FixedEffectsConfig,
    GridConfig,
    ModelSettings,
    SamplingConfig,
    SyntheticCityConfig,
    SyntheticProcess,
    ZeroAugmentationConfig,
)
from ambit.task import load_source, prepare_task

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def small_config(**updates) -> ExperimentConfig:
    config = ExperimentConfig(
        data=DataSource(
            synthetic=SyntheticCityConfig(
                n_zones=8,
                n_hours=24 * 14,
                seed=3,
                process=SyntheticProcess(
                    temporal_profile="diurnal",
                    poi_multiplier_strength=0.5,
                    target_mean_flow=3.0,
                ),
            )
        ),
        sampling=SamplingConfig(max_train_rows=3000, max_eval_rows=1500),
        filtering=FilterConfig(min_total=0, top_k=None),
        models=ModelSettings(
            grids=GridConfig(
                beta=[0.5, 1.0, 1.5, 2.0],
                beta_exp=[0.1, 0.3],
                gamma=[0.5, 1.0],
                rho=[0.0, 0.5],
                delta=[1.0],
                io_l_scale=[0.5, 1.0],
            ),
            boost=BoostConfig(n_estimators=30, max_depth=3, learning_rate=0.2, early_stopping_rounds=10),
            zero_aug=ZeroAugmentationConfig(sampled_hours=20, zero_budget=2000),
            fe=FixedEffectsConfig(max_rows=3000),
            count_subsample_rows=3000,
        ),
        seeds=[0],
    )
    return config.model_copy(update=updates)


@pytest.fixture(scope="session")
def config() -> ExperimentConfig:
    return small_config()


@pytest.fixture(scope="session")
def source(config):
    return load_source(config.data)


@pytest.fixture(scope="session")
def task(config, source):
    return prepare_task(config, 0, source)


@pytest.fixture
def ctx(config, task) -> FitContext:
    return FitContext(task=task, settings=config.models, seed=0)
