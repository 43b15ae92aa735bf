from types import SimpleNamespace

import numpy as np
import pytest

from targetdrop.data import ImageDataset, make_toy_dataset, normalize_images
from targetdrop.mask import INFERENCE, TRAIN
from targetdrop.model import (
    ModelConfig,
    TargetDropLayer,
    TinyCNN,
    load_checkpoint,
    param_overhead,
    save_checkpoint,
)
from targetdrop.train import NesterovSGD, TrainConfig, TrainingDiverged, compute_cam, evaluate, lr_at, train


def _separable(n_per_class=32, seed=0, size=8):
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n_per_class)
    rng.shuffle(labels)
    img = np.where(labels[:, None, None, None] == 1, 170, 85) + rng.normal(0, 20, (len(labels), size, size, 3))
    return ImageDataset(np.clip(img, 0, 255).astype(np.uint8), labels)


def test_lr_schedule_hundred_epochs():
    cfg = TrainConfig(epochs=100)
    lrs = [lr_at(e, cfg) for e in range(100)]
    assert lrs[:40] == [0.1] * 40
    assert lrs[40:60] == [0.02] * 20
    assert lrs[60:80] == [0.004] * 20
    assert lrs[80:] == [0.0008] * 20


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(milestones=(0.6, 0.4))
    with pytest.raises(ValueError):
        TrainConfig(milestones=(0.4, 1.0))


def test_nesterov_closed_form_on_quadratic():
    # f(x) = x^2 / 2, gradient x
    x = np.array([1.0])
    opt = NesterovSGD({"x": x}, momentum=0.9, nesterov=True)
    seq = []
    for _ in range(2):
        opt.step({"x": x.copy()}, lr=0.1)
        seq.append(float(x[0]))
    assert seq == pytest.approx([0.81, 0.5751], abs=1e-15)


def test_plain_momentum_and_weight_decay():
    x = np.array([1.0])
    opt = NesterovSGD({"x": x}, momentum=0.9, nesterov=False, weight_decay=0.5)
    opt.step({"x": np.array([0.0])}, lr=0.1)
    assert x[0] == pytest.approx(0.95)


def test_param_overhead():
    added, frac = param_overhead((64, 128), 16)
    assert added == 2560
    assert 0.00018 <= frac <= 0.00028
    assert param_overhead((8,), 8)[0] == 16  # r = C: bottleneck width 1
    with pytest.raises(ValueError, match="reduction ratio"):
        param_overhead((64, 100), 16)


def test_model_param_count_is_architectural():
    a, b = TinyCNN(ModelConfig(seed=0)), TinyCNN(ModelConfig(seed=5))
    assert a.num_params() == b.num_params()
    c = TinyCNN(ModelConfig(drop="targetdrop"))
    # gate weights are fixed buffers, not trainable parameters
    assert c.num_params() == a.num_params()
    assert sum(v.size for v in c.named_buffers().values()) == 2 * 16 * 16 // 16 + 2 * 32 * 32 // 16


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(drop="targetdrop", k=4)
    with pytest.raises(ValueError, match="reduction ratio"):
        ModelConfig(drop="targetdrop", widths=(12, 32, 64))
    with pytest.raises(ValueError):
        ModelConfig(drop="magic")


def test_train_smoke_on_separable_data():
    model = TinyCNN(ModelConfig(classes=2, seed=0))
    logs = train(model, _separable(), TrainConfig(epochs=1, batch_size=8, lr=0.01))
    assert logs[-1]["train_acc"] > 0.6


def test_loss_decreases_and_log_records_lr():
    ds = make_toy_dataset(3, 20, seed=1, size=8)
    model = TinyCNN(ModelConfig(classes=3, widths=(8, 16, 16), seed=1))
    cfg = TrainConfig(epochs=5, batch_size=8, lr=0.01)
    logs = train(model, ds, cfg)
    assert logs[-1]["train_loss"] < logs[0]["train_loss"]
    assert [row["lr"] for row in logs] == [lr_at(e, cfg) for e in range(5)]
    assert [row["epoch"] for row in logs] == list(range(5))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    model = TinyCNN(ModelConfig(classes=2, widths=(8, 16, 16)))
    model.head.w[0, 0] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 0"):
        train(model, _separable(8), TrainConfig(epochs=3, batch_size=4))


def test_empty_dataset_rejected():
    empty = ImageDataset(np.zeros((0, 8, 8, 3), np.uint8), np.zeros(0, np.int64))
    with pytest.raises(ValueError):
        train(TinyCNN(), empty, TrainConfig())


def _activations(model, x):
    out = []
    for layer in model.layers:
        x = layer.forward(x)
        out.append(x)
    return out


def test_drop_layer_preserves_shapes_and_is_identity_at_zero_gamma():
    x = np.random.default_rng(0).normal(size=(3, 8, 8, 3))
    plain = TinyCNN(ModelConfig(seed=2))
    dropped = TinyCNN(ModelConfig(seed=2, drop="targetdrop", gamma=0.15))
    zero = TinyCNN(ModelConfig(seed=2, drop="targetdrop", gamma=0.0))
    for m in (plain, dropped, zero):
        m.set_phase(TRAIN)
    shapes = lambda acts: [a.shape for a in acts]
    a_plain = _activations(plain, x)
    a_drop = [a for a, l in zip(_activations(dropped, x), dropped.layers) if not isinstance(l, TargetDropLayer)]
    a_zero = [a for a, l in zip(_activations(zero, x), zero.layers) if not isinstance(l, TargetDropLayer)]
    assert shapes(a_plain) == shapes(a_drop)
    assert all(np.array_equal(p, z) for p, z in zip(a_plain, a_zero))
    assert not np.array_equal(a_plain[-1], a_drop[-1])


def test_evaluate_properties():
    ds = make_toy_dataset(10, 20, seed=7, size=8)
    x = normalize_images(ds.images, ds.images.mean(axis=(0, 1, 2)), ds.images.std(axis=(0, 1, 2)))
    untrained = TinyCNN(ModelConfig(seed=3))
    acc = evaluate(untrained, x, ds.labels)
    assert abs(acc - 0.1) <= 0.05
    assert evaluate(untrained, x, ds.labels) == acc
    a = TinyCNN(ModelConfig(seed=3, drop="targetdrop", gamma=0.15))
    b = TinyCNN(ModelConfig(seed=3, drop="targetdrop", gamma=0.0))
    a.set_phase(INFERENCE)
    b.set_phase(INFERENCE)
    assert np.array_equal(a.forward(x[:16]), b.forward(x[:16]))


def _naive_cam(feats, weights, h, w):
    fh, fw, c = feats.shape
    cam = np.zeros((fh, fw))
    for i in range(fh):
        for j in range(fw):
            for q in range(c):
                cam[i, j] += weights[q] * feats[i, j, q]
    lo, hi = cam.min(), cam.max()
    cam = (cam - lo) / (hi - lo) if hi > lo else np.zeros_like(cam)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = cam[i * fh // h, j * fw // w]
    return out


def _stub(feats, weights):
    return SimpleNamespace(
        has_gap_head=True,
        set_phase=lambda phase: None,
        features=lambda x: feats[None],
        head=SimpleNamespace(w=weights[:, None]),
    )


def test_cam_equal_weights_is_channel_sum():
    feats = np.random.default_rng(0).random((4, 4, 5))
    cam = compute_cam(_stub(feats, np.full(5, 0.3)), np.zeros((4, 4, 3)), 0)
    s = feats.sum(axis=2)
    assert np.allclose(cam, (s - s.min()) / (s.max() - s.min()), atol=1e-12)


def test_cam_delta_response():
    feats = np.zeros((4, 4, 3))
    feats[2, 1, 1] = 5.0
    cam = compute_cam(_stub(feats, np.array([0.0, 1.0, 0.0])), np.zeros((8, 8, 3)), 0)
    assert cam.shape == (8, 8)
    assert cam.max() == 1.0 and set(map(tuple, np.argwhere(cam == 1.0))) == {(4, 2), (4, 3), (5, 2), (5, 3)}


def test_cam_matches_naive_loop_on_real_model():
    model = TinyCNN(ModelConfig(widths=(8, 16, 16), seed=4))
    image = np.random.default_rng(4).normal(size=(16, 16, 3))
    for cls in (0, 3):
        cam = compute_cam(model, image, cls)
        feats = model.features(image[None])[0]
        ref = _naive_cam(feats, model.head.w[:, cls], 16, 16)
        assert np.max(np.abs(cam - ref)) <= 1e-12
        assert cam.min() >= 0.0 and cam.max() <= 1.0


def test_cam_requires_gap_head():
    with pytest.raises(ValueError, match="global average pooling"):
        compute_cam(SimpleNamespace(has_gap_head=False), np.zeros((4, 4, 3)), 0)


def test_checkpoint_round_trip(tmp_path):
    model = TinyCNN(ModelConfig(widths=(8, 16, 16), drop="targetdrop", r=4, seed=9))
    model.norm_stats = (np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.cfg == model.cfg
    for name, v in model.named_params().items():
        assert np.array_equal(back.named_params()[name], v)
    for name, v in model.named_buffers().items():
        assert np.array_equal(back.named_buffers()[name], v)
    assert all(np.array_equal(a, b) for a, b in zip(back.norm_stats, model.norm_stats))
    path.write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_training_is_bit_reproducible():
    ds = make_toy_dataset(3, 10, seed=2, size=8)

    def run():
        m = TinyCNN(ModelConfig(classes=3, widths=(8, 16, 16), drop="targetdrop", r=4, seed=5))
        logs = train(m, ds, TrainConfig(epochs=2, batch_size=8, lr=0.01, augment=True, seed=5))
        return logs, m.named_params()

    (la, pa), (lb, pb) = run(), run()
    assert repr(la) == repr(lb)
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
