import math

import numpy as np
import pytest
import torch

from painseeker.errors import InputError, SingleClassTrainSet
from painseeker.losses import HyperParams
from painseeker.model import BackboneConfig, save_checkpoint
from painseeker.training import AdamState, TrainConfig, adam_step, train, train_model

TINY = BackboneConfig.desk(input_size=32, stage_widths=(4, 4, 8, 8))


def adam_reference(g_seq, theta, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam written out with plain floats."""
    m = v = 0.0
    out = []
    for t, g in enumerate(g_seq, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(theta)
    return out


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps, cfg.epochs) == (
        64, 1e-4, 0.9, 0.999, 1e-8, 30)
    with pytest.raises(InputError):
        TrainConfig(batch_size=0)


def test_adam_matches_scalar_reference():
    grads = [0.3, -1.2, 0.05, 2.0, 0.0, -0.7]
    p = torch.tensor([1.5], dtype=torch.float64)
    state = AdamState()
    got = []
    for g in grads:
        adam_step([p], [torch.tensor([g], dtype=torch.float64)], state, lr=0.01)
        got.append(float(p))
    assert got == pytest.approx(adam_reference(grads, 1.5, 0.01), abs=1e-15)
    assert state.t == len(grads)


def test_adam_first_step_is_signed_lr():
    p = torch.tensor([0.0, 0.0, 0.0], dtype=torch.float64)
    adam_step([p], [torch.tensor([3.0, -0.01, 1e3], dtype=torch.float64)], AdamState(), lr=1e-4)
    assert p.tolist() == pytest.approx([-1e-4, 1e-4, -1e-4], rel=1e-6)


def test_adam_zero_gradient_is_noop():
    p = torch.tensor([0.7, -2.0], dtype=torch.float64)
    state = AdamState()
    for _ in range(3):
        adam_step([p], [torch.zeros(2, dtype=torch.float64)], state, lr=0.1)
    assert p.tolist() == [0.7, -2.0]


def _toy(n=24, seed=0):
    # label 1 images are brighter in the top-left quarter
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(n, 3, 32, 32, generator=g) * 0.1
    y = torch.arange(n) % 2
    x[y == 1, :, :16, :16] += 1.0
    return x, y


def test_single_class_rejected():
    x, _ = _toy()
    with pytest.raises(SingleClassTrainSet):
        train_model(x, torch.zeros(len(x), dtype=torch.long), TrainConfig(epochs=1, hyper=HyperParams(k_h=1)), TINY)


def test_training_is_deterministic(tmp_path):
    x, y = _toy()
    cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, hyper=HyperParams(k_h=2))
    paths = []
    for k in range(2):
        model, hist = train_model(x, y, cfg, TINY)
        paths.append(tmp_path / f"m{k}.npz")
        save_checkpoint(model, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_lambda_zero_matches_ce_only_training():
    x, y = _toy()
    cfg0 = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, hyper=HyperParams(lam=0.0, k_h=2))
    # a huge delta with lambda 0 must not change anything
    cfg1 = TrainConfig(epochs=2, batch_size=8, learning_rate=1e-3, hyper=HyperParams(lam=0.0, delta=0.9, k_h=3))
    a, ha = train_model(x, y, cfg0, TINY)
    b, hb = train_model(x, y, cfg1, TINY)
    for k, v in a.state_dict().items():
        assert torch.equal(v, b.state_dict()[k])
    assert ha.mean_ce == hb.mean_ce


def test_every_sample_visited_once_per_epoch(monkeypatch):
    x, y = _toy(n=21)
    seen = []
    import painseeker.training as tr

    orig = tr.total_loss

    def spy(logits, beta, labels, hp):
        seen.append(len(labels))
        return orig(logits, beta, labels, hp)

    monkeypatch.setattr(tr, "total_loss", spy)
    train_model(x, y, TrainConfig(epochs=3, batch_size=8, hyper=HyperParams(k_h=2)), TINY)
    assert seen == [8, 8, 5] * 3


def test_separable_set_is_fitted():
    x, y = _toy(n=32)
    model, hist = train_model(x, y, TrainConfig(epochs=40, batch_size=16, learning_rate=3e-3,
                                                 hyper=HyperParams(k_h=2)), TINY)
    assert hist.mean_ce[-1] < 0.1
    assert hist.mean_ce[-1] < hist.mean_ce[0]
    with torch.no_grad():
        pred = model(x).probs.argmax(-1)
    assert torch.equal(pred, y)


def test_train_on_manifest(small_synth, tmp_path):
    manifest, cfg = small_synth
    rats = manifest.rat_ids[:2]
    res = train(manifest, rats, TrainConfig(epochs=1, batch_size=8), BackboneConfig.desk())
    assert len(res.history) == 1 and np.isfinite(res.history.mean_total[0])
    res.history.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_total,mean_ce,mean_prsc,seconds" and len(lines) == 2
