import numpy as np
import pytest
import torch

from depthood.errors import InputError, UsageError
from depthood.model import (
    DecoderBlueprint,
    DepthModel,
    as_batch,
    blueprint,
    decode_depth,
    encode,
    load_model,
    read_meta,
    reference_blueprint,
    save_model,
    snapshot_weights,
)
from depthood.recon import build_image_decoder


@pytest.fixture(scope="module")
def model():
    return DepthModel(seed=3)


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)


def test_encode_shapes(model, image):
    z = encode(model, image)
    assert [tuple(t.shape) for t in z] == [
        (1, 16, 32, 32), (1, 32, 16, 16), (1, 64, 8, 8), (1, 128, 4, 4)]
    assert all(torch.isfinite(t).all() for t in z)


def test_encode_deterministic(model, image):
    a, b = encode(model, image), encode(model, image)
    assert all(torch.equal(x, y) for x, y in zip(a, b))


def test_encode_pixel_perturbation_changes_level_one(model, image):
    flipped = image.copy()
    flipped[10, 10] = 1.0 - flipped[10, 10]
    a, b = encode(model, image), encode(model, flipped)
    assert not torch.equal(a[0], b[0])
    # the change stays local: a 3x3 stride-2 conv only sees pixel (10,10) from output rows/cols 4..5
    diff = (a[0] - b[0]).abs().sum(dim=1)[0]
    rows, cols = torch.nonzero(diff, as_tuple=True)
    assert set(rows.tolist()) <= {4, 5} and set(cols.tolist()) <= {4, 5}


def test_encode_rejects_wrong_resolution(model):
    with pytest.raises(InputError):
        encode(model, np.zeros((32, 64, 3), dtype=np.float32))


def test_as_batch_rejects_non_rgb():
    with pytest.raises(InputError):
        as_batch(np.zeros((8, 8, 4)))


@pytest.mark.parametrize("variant", ["plain", "heteroscedastic", "dropout"])
def test_decode_depth_range(variant, image):
    m = DepthModel(variant=variant, d_max=10.0, seed=1)
    d = decode_depth(m, encode(m, np.stack([image, 1 - image])))
    assert d.shape == (2, 1, 64, 64)
    assert (d > 0).all() and (d <= 10.0).all()


def test_decode_depth_extreme_inputs_stay_in_range():
    m = DepthModel(seed=5)
    with torch.no_grad():
        for p in m.decoder.head.parameters():
            p.mul_(1e4)
    x = np.random.default_rng(2).random((4, 64, 64, 3)).astype(np.float32)
    d = decode_depth(m, encode(m, x))
    assert (d > 0).all() and (d <= m.d_max).all()


def test_decode_depth_deterministic(model, image):
    z = encode(model, image)
    assert torch.equal(decode_depth(model, z), decode_depth(model, z))


def test_heteroscedastic_scale_positive(image):
    m = DepthModel(variant="heteroscedastic", seed=2)
    d, b = decode_depth(m, encode(m, image), with_scale=True)
    assert d.shape == b.shape
    assert (b > 0).all()


def test_scale_only_for_heteroscedastic(model, image):
    with pytest.raises(UsageError):
        decode_depth(model, encode(model, image), with_scale=True)


def test_decode_rejects_bad_pyramid(model, image):
    z = encode(model, image)
    with pytest.raises(InputError):
        decode_depth(model, z[:3])
    with pytest.raises(InputError):
        decode_depth(model, [z[0], z[1], z[2], z[2]])


def test_blueprint_reference(model):
    bp = blueprint(model)
    assert len(bp.blocks) == 4
    assert bp.skip_levels == (3, 2, 1)
    assert [b.skip_level for b in bp.blocks] == [3, 2, 1, None]
    assert bp.head.out_channels == 1 and bp.head.activation == "sigmoid"
    assert bp.head.scale == model.d_max
    assert blueprint(model) == bp


def test_blueprint_without_skips():
    bp = blueprint(DepthModel(skips=False))
    assert bp.skip_levels == ()
    assert all(b.skip_channels == 0 for b in bp.blocks)


def test_blueprint_describes_the_decoder(model):
    bp = blueprint(model)
    for b, conv in zip(bp.blocks, model.decoder.convs):
        assert conv.in_channels == b.in_channels + b.skip_channels
        assert conv.out_channels == b.out_channels
        assert conv.kernel_size == (b.kernel_size, b.kernel_size)
    assert model.decoder.head.out_channels == bp.head.out_channels


def test_image_decoder_blueprint_differs_only_in_head(model):
    bp = blueprint(model)
    bp2 = blueprint(build_image_decoder(bp, seed=0))
    assert bp2.blocks == bp.blocks and bp2.level_channels == bp.level_channels
    assert (bp2.head.out_channels, bp2.head.activation) == (3, None)
    assert (bp.head.out_channels, bp.head.activation) == (1, "sigmoid")


def test_blueprint_validation():
    bp = reference_blueprint()
    bad_skip = DecoderBlueprint(bp.level_channels,
                                (bp.blocks[0].__class__(**{**bp.blocks[0].__dict__, "skip_level": 7}),)
                                + bp.blocks[1:], bp.head)
    with pytest.raises(InputError):
        bad_skip.validate()
    with pytest.raises(InputError):
        DecoderBlueprint(bp.level_channels, bp.blocks[:3], bp.head).validate()


def test_blueprint_dict_roundtrip():
    bp = reference_blueprint(dropout=0.2)
    assert DecoderBlueprint.from_dict(bp.to_dict()) == bp


def test_digest_stable_and_sensitive(model):
    a = snapshot_weights(model.encoder)
    assert a == snapshot_weights(model.encoder)
    other = DepthModel(seed=3)
    assert snapshot_weights(other.encoder) == a
    with torch.no_grad():
        other.encoder.convs[2].weight[0, 0, 0, 0] += 1e-3
    assert snapshot_weights(other.encoder) != a


def test_digest_canonical_serialization():
    import hashlib

    t = torch.tensor([1.0, -2.5, 3.25])
    expected = hashlib.sha256(np.array([1.0, -2.5, 3.25], dtype="<f4").tobytes()).hexdigest()
    assert snapshot_weights([t]) == expected


def test_seeds_give_different_models():
    assert snapshot_weights(DepthModel(seed=0)) != snapshot_weights(DepthModel(seed=1))


def test_unknown_variant():
    with pytest.raises(UsageError):
        DepthModel(variant="ensemble")


def test_checkpoint_roundtrip(tmp_path, image):
    m = DepthModel(variant="dropout", d_max=80.0, seed=9)
    path = tmp_path / "m.pt"
    save_model(m, path)
    meta = read_meta(path)
    assert meta["architecture"] == "toy-unet"
    assert meta["variant"] == "dropout" and float(meta["d_max"]) == 80.0
    m2 = load_model(path)
    assert snapshot_weights(m2) == snapshot_weights(m)
    assert m2.dropout == m.dropout
    assert torch.equal(decode_depth(m2, encode(m2, image)), decode_depth(m, encode(m, image)))


def test_missing_checkpoint(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nope.pt")
