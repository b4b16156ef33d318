import pytest

from demix.config import RunConfig, load_config, parse_pairs


def test_defaults():
    cfg = RunConfig()
    assert (cfg.T, cfg.batch_size, cfg.lr, cfg.lr_decay, cfg.epochs) == (200, 128, 0.005, 0.1, 40)
    assert cfg.decay_every() == 14
    assert [cfg.lr_at(e) for e in (0, 13, 14, 28)] == pytest.approx([0.005, 0.005, 0.0005, 0.00005])
    assert cfg.schedule.T == 200 and cfg.psf_spec(2.0, 1.5).size == 3


def test_explicit_lr_step():
    cfg = RunConfig(lr_step=5, epochs=100)
    assert cfg.decay_every() == 5 and cfg.lr_at(5) == pytest.approx(0.0005)


def test_text_round_trip(tmp_path):
    cfg = RunConfig(epochs=3, lr=0.01, augment=False, data="/tmp/x", alpha_max=1.25)
    assert RunConfig.from_text(cfg.to_text()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


def test_overrides_and_errors():
    cfg = RunConfig().with_overrides({"batch-size": "8", "msssim": "off", "sigma_x_max": "3"})
    assert cfg.batch_size == 8 and cfg.msssim is False and cfg.sigma_x_max == 3.0
    with pytest.raises(KeyError):
        RunConfig().with_overrides({"nope": "1"})
    with pytest.raises(ValueError):
        RunConfig().with_overrides({"augment": "maybe"})


def test_parse_pairs_comments_and_errors():
    assert parse_pairs("# header\n\na = 1  # trailing\nb=x y\n") == {"a": "1", "b": "x y"}
    with pytest.raises(ValueError, match="line 2"):
        parse_pairs("a = 1\nbroken\n")


def test_model_config_carries_ablations():
    mc = RunConfig(noise_encoder=False, gated_fusion=False, base_width=8).model_config()
    assert mc.noise_encoder is False and mc.gated_fusion is False and mc.base_width == 8
