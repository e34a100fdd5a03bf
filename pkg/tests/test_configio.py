"""INI configuration loading for degradation, training and evaluation."""

import math

import pytest

from srforge.configio import (load_degradation_config, load_eval_overrides,
                              load_train_config)


CONFIG_TEXT = """
[stage1.blur]
kernel_sizes = 7,9,11
sigma_min = 0.5
sigma_max = 2.5
weight_iso = 1.0
weight_aniso = 0.0
weight_sinc = 0.0
skip_prob = 0.1

[stage1.resize]
scale_min = 0.4
scale_max = 1.1
weight_nearest = 0.0
weight_area = 2.0

[stage1.noise]
gaussian_sigma_min = 0.0
gaussian_sigma_max = 0.05
gray_prob = 0.25

[stage1.jpeg]
quality_min = 60
quality_max = 90

[stage2.blur]
skip_prob = 0.5

[final]
sinc_prob = 0.25
output_scale = 2

[train]
learning_rate = 0.0005
batch_size = 4
total_iterations = 42
w_gan = 0.05
patch_size = 96
seed = 123
gan_variant = relativistic

[evaluate]
blur_sigma = 1.5
blur_kernel_size = 9
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG_TEXT, encoding="utf-8")
    return path


class TestDegradationConfig:
    def test_overrides_applied(self, config_file):
        cfg = load_degradation_config(config_file)
        assert cfg.stage1.blur.kernel_sizes == (7, 9, 11)
        assert cfg.stage1.blur.sigma_range == (0.5, 2.5)
        assert cfg.stage1.blur.skip_prob == 0.1
        assert cfg.stage1.resize.scale_range == (0.4, 1.1)
        assert cfg.stage1.resize.weight_area == 2.0
        assert cfg.stage1.noise.gray_prob == 0.25
        assert cfg.stage1.jpeg.quality_range == (60, 90)
        assert cfg.stage2.blur.skip_prob == 0.5
        assert cfg.final_sinc_probability == 0.25
        assert cfg.output_scale == 2

    def test_defaults_survive_partial_file(self, config_file):
        cfg = load_degradation_config(config_file)
        assert cfg.stage2.resize.scale_range == (0.3, 1.2)
        assert cfg.final_sinc_cutoff_range == (math.pi / 3, math.pi)

    def test_scale_flag_override(self, config_file):
        cfg = load_degradation_config(config_file, output_scale=4)
        assert cfg.output_scale == 4

    def test_missing_file_yields_defaults(self, tmp_path):
        cfg = load_degradation_config(tmp_path / "absent.ini")
        assert cfg.output_scale == 4
        assert cfg.final_sinc_probability == 0.8


class TestTrainConfig:
    def test_overrides_applied(self, config_file):
        cfg = load_train_config(config_file)
        assert cfg.learning_rate == 0.0005
        assert cfg.batch_size == 4
        assert cfg.total_iterations == 42
        assert cfg.loss_weights == {"l1": 1.0, "perceptual": 1.0, "gan": 0.05}
        assert cfg.patch_size == 96
        assert cfg.seed == 123
        assert cfg.gan_variant == "relativistic"

    def test_paper_defaults(self, tmp_path):
        cfg = load_train_config(tmp_path / "absent.ini")
        assert cfg.learning_rate == 1e-4
        assert cfg.batch_size == 10
        assert cfg.adam_beta1 == 0.9


class TestEvalOverrides:
    def test_overrides(self, config_file):
        out = load_eval_overrides(config_file)
        assert out == {"blur_sigma": 1.5, "blur_kernel_size": 9}

    def test_empty_without_section(self, tmp_path):
        path = tmp_path / "empty.ini"
        path.write_text("[train]\nbatch_size = 2\n", encoding="utf-8")
        assert load_eval_overrides(path) == {}
