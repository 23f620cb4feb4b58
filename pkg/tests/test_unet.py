import numpy as np
import pytest

from cfosseg.imageio import ImageBuffer, MaskBuffer
from cfosseg.tiling import compute_grid, crop, stitch_masks
from cfosseg.unet import (
    UNetConfig,
    bottleneck_layer_index,
    build_unet,
    predict_full,
    predict_tile,
    train_unet,
    unet_specs,
)


def test_default_unet_shape_and_range():
    net = build_unet(seed=0)
    x = np.random.default_rng(0).random((1, 128, 128, 1)).astype(np.float32)
    out = net.forward(x)
    assert out.shape == (1, 128, 128, 1)
    assert np.all(out > 0) and np.all(out < 1)


def test_bottleneck_is_8x8_and_head_sees_16_channels():
    cfg = UNetConfig()
    net = build_unet(cfg, seed=0)
    x = np.zeros((1, 128, 128, 1), dtype=np.float32)
    net.forward(x, train=True)
    bn = net.outputs[bottleneck_layer_index(cfg)]
    assert bn.shape[1:3] == (8, 8)
    assert bn.shape[3] == cfg.bottleneck_channels
    head_spec = net.specs[-2]
    assert head_spec.kind == "conv1x1" and head_spec.in_channels == 16


def test_64_input_gives_4x4_bottleneck():
    cfg = UNetConfig(input_size=64)
    net = build_unet(cfg, seed=0)
    x = np.zeros((1, 64, 64, 1), dtype=np.float32)
    out = net.forward(x, train=True)
    assert out.shape == (1, 64, 64, 1)
    assert net.outputs[bottleneck_layer_index(cfg)].shape[1:3] == (4, 4)


def test_indivisible_input_rejected():
    with pytest.raises(ValueError, match="divisible"):
        build_unet(UNetConfig(input_size=100), seed=0)


def test_channel_plan_doubles_and_concats_match():
    specs = unet_specs(UNetConfig())
    convs = [s for s in specs if s.kind == "conv3x3"]
    enc_out = [c.out_channels for c in convs[:8:2]]
    assert enc_out == [16, 32, 64, 128]
    for s in specs:
        if s.kind == "concat":
            assert specs[s.skip_ref].kind == "relu"


def test_predict_tile_threshold_semantics():
    net = build_unet(seed=0)

    class Constant:
        def __init__(self, p):
            self.p = p
            self.specs = net.specs

        def forward(self, x, train=False):
            return np.full((x.shape[0], x.shape[1], x.shape[2], 1), self.p, dtype=np.float32)

    tile = np.zeros((128, 128), dtype=np.float32)
    _, mask = predict_tile(Constant(0.6), tile, threshold=0.5)
    assert np.all(mask.labels == 1)
    _, mask = predict_tile(Constant(0.6), tile, threshold=1.0 - 1e-6)
    assert np.all(mask.labels == 0)
    # boundary: probability exactly at the cutoff is foreground
    _, mask = predict_tile(Constant(0.5), tile, threshold=0.5)
    assert np.all(mask.labels == 1)


def test_binarization_matches_elementwise_oracle():
    rng = np.random.default_rng(1)
    prob = rng.random((128, 128)).astype(np.float32)

    class Fixed:
        specs = build_unet(seed=0).specs

        def forward(self, x, train=False):
            return prob[None, :, :, None]

    for threshold in (0.1, 0.5, 0.9):
        _, mask = predict_tile(Fixed(), np.zeros((128, 128), np.float32), threshold)
        oracle = np.zeros_like(prob, dtype=np.uint8)
        for i in range(128):
            for j in range(128):
                oracle[i, j] = 1 if prob[i, j] >= threshold else 0
        assert np.array_equal(mask.labels, oracle)


def test_predict_full_equals_manual_composition():
    rng = np.random.default_rng(2)
    # small untrained net keeps this fast; sizes chosen so the grid has 2x3 tiles
    cfg = UNetConfig(input_size=32, depth=2, base_channels=4, bottleneck_channels=16)
    net = build_unet(cfg, seed=3)
    img = ImageBuffer.from_array(rng.random((60, 88)).astype(np.float32))
    grid = compute_grid(88, 60, 32, 2, "full")
    got = predict_full(net, img, grid, threshold=0.5)
    tiles = crop(img, grid)
    masks = {tid: predict_tile(net, t, 0.5)[1] for tid, t in tiles.items()}
    want = stitch_masks(masks, grid)
    assert np.array_equal(got.labels, want.labels)
    assert (got.width, got.height) == (grid.covered_width, grid.covered_height)


def test_train_records_epochs_and_is_deterministic():
    rng = np.random.default_rng(4)
    cfg = UNetConfig(input_size=32, depth=2, base_channels=4, bottleneck_channels=16)
    pairs = []
    for _ in range(6):
        img = rng.random((32, 32)).astype(np.float32)
        mask = (img > 0.5).astype(np.uint8)
        pairs.append((img, mask))
    net1 = build_unet(cfg, seed=0)
    run1, _ = train_unet(net1, pairs, pairs[:2], epochs=3, batch_size=4, seed=9)
    assert len(run1.train_loss) == 3 and len(run1.val_loss) == 3
    net2 = build_unet(cfg, seed=0)
    run2, _ = train_unet(net2, pairs, pairs[:2], epochs=3, batch_size=4, seed=9)
    assert run1.train_loss == run2.train_loss
    for a, b in zip(net1.params(), net2.params()):
        assert np.array_equal(a, b)


def test_train_rejects_bad_input():
    net = build_unet(UNetConfig(input_size=32, depth=2, base_channels=4,
                                bottleneck_channels=16), seed=0)
    with pytest.raises(ValueError, match="empty"):
        train_unet(net, [], epochs=1)
    bad = [(np.zeros((32, 32), np.float32), np.zeros((16, 16), np.uint8))]
    with pytest.raises(ValueError, match="differ"):
        train_unet(net, bad, epochs=1)


def test_untrained_model_has_low_foreground_iou():
    from cfosseg.metrics import confusion, iou_foreground
    rng = np.random.default_rng(5)
    net = build_unet(seed=11)
    ious = []
    for _ in range(4):
        tile = np.zeros((128, 128), dtype=np.float32)
        truth = np.zeros((128, 128), dtype=np.uint8)
        cy, cx = rng.integers(30, 98, size=2)
        yy, xx = np.mgrid[0:128, 0:128]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 16.0)
        tile += 0.9 * blob.astype(np.float32)
        truth |= (blob > 0.4).astype(np.uint8)
        _, mask = predict_tile(net, np.clip(tile, 0, 1), 0.5)
        ious.append(iou_foreground(confusion(mask, MaskBuffer.from_array(truth))))
    assert float(np.mean(ious)) < 0.1
