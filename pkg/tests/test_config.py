from pathlib import Path

import pytest

from aiig.config import (DEFAULT_GAMMAS, EnsembleConfig, ExperimentConfig, MetaConfig, dump_toml,
                         resolve_output_dir)
from aiig.env import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class TestExperimentConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.ensemble.gammas == DEFAULT_GAMMAS == (0.9, 0.99, 0.997, 0.9995)
        assert (cfg.ensemble.episodes_per_epoch, cfg.ensemble.grad_steps) == (20, 64)
        assert (cfg.ensemble.evo_population, cfg.ensemble.evo_sigma, cfg.ensemble.evo_margin) == (8, 0.05, 0.5)
        assert cfg.ensemble.distill_cadence == 10

    @pytest.mark.parametrize("name", ["smoke.toml", "reduced.toml", "default.toml"])
    def test_shipped_configs_load(self, name):
        ExperimentConfig.load(CONFIGS / name)

    def test_round_trip_through_toml(self, tmp_path):
        cfg = ExperimentConfig.load(CONFIGS / "smoke.toml").with_overrides(seed=7, variant="no_EO")
        path = tmp_path / "echo.toml"
        path.write_text(dump_toml(cfg.to_dict()))
        assert ExperimentConfig.load(path) == cfg

    @pytest.mark.parametrize("data,key", [
        ({"bogus": 1}, "bogus"),
        ({"env": {"wrld": 8}}, "env.wrld"),
        ({"learner": {"lr": 1}}, "learner.lr"),
        ({"ensemble": {"epoch": 1}}, "ensemble.epoch"),
        ({"meta": {"temp": 1}}, "meta.temp"),
    ])
    def test_unknown_keys_named(self, data, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            ExperimentConfig.from_dict(data)

    @pytest.mark.parametrize("data", [
        {"mode": "psychic"}, {"variant": "everything"}, {"single_gamma": 1.0}, {"seed": -1},
        {"ensemble": {"gammas": [0.9, 0.9]}}, {"ensemble": {"gammas": []}},
        {"ensemble": {"epochs": 0}}, {"meta": {"decay": 1.5}}, {"env": {"probe_accuracy": 0.4}},
    ])
    def test_invalid_values(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_overrides_ignore_none(self):
        cfg = ExperimentConfig()
        assert cfg.with_overrides(seed=None, mode=None) is cfg
        assert cfg.with_overrides(seed=3).seed == 3


class TestVariants:
    def test_switches(self):
        base = ExperimentConfig()
        full = base.switches()
        assert full.gammas == DEFAULT_GAMMAS and full.evolution and full.ensemble_optimization
        no_eo = base.with_overrides(variant="no_EO").switches()
        assert no_eo.gammas == DEFAULT_GAMMAS and no_eo.evolution and not no_eo.ensemble_optimization
        single = base.with_overrides(variant="single_gamma", single_gamma=0.997).switches()
        assert single.gammas == (0.997,) and not single.evolution and not single.ensemble_optimization

    @pytest.mark.parametrize("seed", range(8))
    def test_plain_variant_picks_gamma_by_seed(self, seed):
        sw = ExperimentConfig(seed=seed, variant="no_EO_no_CE").switches()
        assert sw.gammas == (DEFAULT_GAMMAS[seed % 4],)
        assert not sw.evolution and not sw.ensemble_optimization


def test_output_dir_precedence():
    assert resolve_output_dir("a", "b", "c") == Path("a")
    assert resolve_output_dir(None, "b", "c") == Path("b")
    assert resolve_output_dir(None, None, "c") == Path("c")


def test_meta_and_ensemble_validation():
    with pytest.raises(ConfigError):
        MetaConfig(eval_episodes=0)
    with pytest.raises(ConfigError):
        EnsembleConfig(running_avg_rate=0.0)
