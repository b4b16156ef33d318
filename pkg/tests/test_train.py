import numpy as np
import pytest

from demix.config import RunConfig
from demix.model import DemixParams
from demix.phantoms import phantom_corpus
from demix.train import (
    TrainingError,
    center_crop,
    random_crop,
    split_indices,
    train,
    write_history,
)


def tiny(**kw):
    base = dict(epochs=1, batch_size=4, patch_size=16, base_width=2, psf_m=5, T=10, msssim_scales=1, phantoms=8, phantom_size=24, lr=0.001, optimizer="adam")
    base.update(kw)
    return RunConfig(**base)


def test_split_is_seeded_and_disjoint():
    tr, va = split_indices(10, 0.3, 0, 1)
    assert len(va) == 3 and not set(tr) & set(va) and set(tr) | set(va) == set(range(10))
    assert np.array_equal(split_indices(10, 0.3, 0, 1)[1], va)
    assert not np.array_equal(split_indices(10, 0.3, 1, 1)[1], va)
    with pytest.raises(TrainingError):
        split_indices(1, 0.9, 0, 0)


def test_crops():
    img = np.arange(100.0).reshape(10, 10)
    rng = np.random.default_rng(0)
    assert random_crop(img, 4, rng).shape == (4, 4)
    assert random_crop(img[:3, :3], 4, rng).shape == (4, 4)
    assert np.array_equal(center_crop(img, 2), img[4:6, 4:6])


def test_one_epoch_writes_loadable_checkpoint(tmp_path):
    cfg = tiny()
    params, history = train(cfg)
    assert len(history) == 1 and np.isfinite(history[0].train_loss)
    params.save(tmp_path / "m.ckpt")
    back = DemixParams.load(tmp_path / "m.ckpt")
    for k, v in params.tensors.items():
        assert np.array_equal(back[k].data, v.data)
    write_history(tmp_path / "log.csv", history)
    assert (tmp_path / "log.csv").read_text().startswith("epoch,lr,train_loss")


def test_training_is_deterministic():
    a, ha = train(tiny())
    b, hb = train(tiny())
    assert ha[0].train_loss == hb[0].train_loss
    assert all(np.array_equal(v.data, b[k].data) for k, v in a.tensors.items())


def test_loss_decreases_on_fixed_images():
    images = phantom_corpus(6, size=16, seed=3)
    cfg = tiny(epochs=8, lr=0.003, patches_per_image=4, val_fraction=0.2, augment=False)
    _, history = train(cfg, images=images)
    first, last = history[0].train_loss, history[-1].train_loss
    assert last < first


def test_sgd_path_and_bad_optimizer():
    _, history = train(tiny(optimizer="sgd", lr=0.01, momentum=0.9))
    assert np.isfinite(history[0].train_loss)
    with pytest.raises(TrainingError):
        train(tiny(optimizer="rmsprop"))
    with pytest.raises(TrainingError):
        train(tiny(), images=[])
