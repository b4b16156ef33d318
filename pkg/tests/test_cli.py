import numpy as np
import pytest

from demix.cli import main, read_meta
from demix.config import RunConfig
from demix.imageio import read_image
from demix.model import DemixParams

TINY = ["--set", "patch_size=16", "--set", "base_width=2", "--set", "psf_m=5", "--set", "T=10",
        "--set", "batch_size=4", "--set", "phantoms=6", "--set", "phantom_size=24",
        "--set", "msssim_scales=1", "--set", "optimizer=adam", "--set", "lr=0.001"]


def test_phantom_and_degrade_round_trip(tmp_path):
    clean = tmp_path / "clean.pgm"
    assert main(["phantom", "--kind", "checker", "--size", "32", str(clean)]) == 0
    assert read_image(clean).shape == (32, 32)
    out = tmp_path / "noisy.pgm"
    assert main(["degrade", str(clean), str(out), "--t", "80", "--seed", "4"]) == 0
    meta = read_meta(str(out) + ".meta")
    assert meta["t"] == "80" and meta["seed"] == "4" and meta["mode"] == "envelope"
    again = tmp_path / "again.pgm"
    assert main(["degrade", str(clean), str(again), "--meta", str(out) + ".meta"]) == 0
    assert out.read_bytes() == again.read_bytes()
    other = tmp_path / "other.pgm"
    main(["degrade", str(clean), str(other), "--t", "80", "--seed", "5"])
    assert out.read_bytes() != other.read_bytes()


def test_degrade_explicit_stds(tmp_path):
    clean = tmp_path / "c.pgm"
    main(["phantom", "--size", "16", str(clean)])
    out = tmp_path / "n.pgm"
    main(["degrade", str(clean), str(out), "--alpha", "0", "--beta", "0", "--sigma-x", "1", "--sigma-y", "0.5"])
    assert float(read_meta(str(out) + ".meta")["alpha_t"]) == 0.0
    assert np.all(np.isfinite(read_image(out)))


def test_config_show(capsys):
    assert main(["config", "show"]) == 0
    text = capsys.readouterr().out
    assert RunConfig.from_text(text) == RunConfig()
    assert "batch_size = 128" in text
    main(["config", "show", "--set", "epochs=7"])
    assert "epochs = 7" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        main(["config", "show", "--set", "epochs"])


def test_train_denoise_bench(tmp_path, capsys):
    ckpt, log = tmp_path / "m.ckpt", tmp_path / "log.csv"
    assert main(["train", *TINY, "--epochs", "1", "--out", str(ckpt), "--log", str(log), "--no-gated-fusion"]) == 0
    params = DemixParams.load(ckpt)
    assert params.cfg.gated_fusion is False and params.cfg.base_width == 2
    assert len(log.read_text().splitlines()) == 2

    clean, noisy, restored = tmp_path / "c.pgm", tmp_path / "n.pgm", tmp_path / "r.pgm"
    main(["phantom", "--size", "20", str(clean)])
    main(["degrade", str(clean), str(noisy), "--T", "10", "--t", "3"])
    assert main(["denoise", str(noisy), str(ckpt), str(restored)]) == 0
    assert read_image(restored).shape == (20, 20)
    assert main(["denoise", str(noisy), str(ckpt), str(restored), "--iterative", "--t", "2"]) == 0

    csv_path, md_path = tmp_path / "b.csv", tmp_path / "b.md"
    rc = main(["bench", "--checkpoint", str(ckpt), "--n-images", "2", "--tune-images", "0", "--size", "16",
               "--methods", "noisy,demix", "--levels", "3,6,8,10", "--no-sweep", "--csv", str(csv_path), "--markdown", str(md_path)])
    assert rc == 0
    assert len(csv_path.read_text().splitlines()) == 1 + 2 * 8
    assert "| demix |" in md_path.read_text() and "| demix |" in capsys.readouterr().out
    with pytest.raises(SystemExit, match="exceeds"):
        main(["bench", "--checkpoint", str(ckpt), "--levels", "50", "--csv", str(csv_path), "--markdown", str(md_path)])


def test_denoise_needs_level(tmp_path):
    from demix.model import init_params

    from helpers import toy_config

    ckpt = tmp_path / "m.ckpt"
    init_params(toy_config(), 0).save(ckpt)
    img = tmp_path / "x.pgm"
    main(["phantom", "--size", "16", str(img)])
    with pytest.raises(SystemExit, match="needs --t"):
        main(["denoise", str(img), str(ckpt), str(tmp_path / "o.pgm")])
