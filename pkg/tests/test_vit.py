import numpy as np
import pytest

from token_insight.imageio import InputImage, normalize
from token_insight.vit import (
    Prediction,
    TokenSubset,
    ViTConfig,
    assemble_rows,
    embed,
    encode_logits,
    forward_subset,
    patchify,
    predict,
)
from token_insight.weights_io import canonical_schema, validate_vit_schema

from oracles import masked_forward_logits


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-8))


class TestConfig:
    def test_token_counts(self):
        assert ViTConfig(224, 16, 768, 12, 12, 2).token_count == 196
        assert ViTConfig(32, 8, 64, 2, 4, 2).token_count == 16

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ValueError):
            ViTConfig(30, 16, 64, 2, 4, 2)
        with pytest.raises(ValueError):
            ViTConfig(32, 8, 65, 2, 4, 2)
        with pytest.raises(ValueError):
            ViTConfig(32, 8, 64, 0, 4, 2)


class TestSubset:
    def test_requires_strictly_increasing(self):
        with pytest.raises(ValueError):
            TokenSubset((3, 1))
        with pytest.raises(ValueError):
            TokenSubset((1, 1))

    def test_remove(self):
        s = TokenSubset.full(4).remove(2)
        assert s.retained == (0, 1, 3)
        with pytest.raises(ValueError):
            s.remove(2)

    def test_out_of_range_check(self):
        with pytest.raises(ValueError, match="out of range"):
            TokenSubset((0, 20)).validate_for(16)


class TestPatchify:
    def test_vitb16_geometry(self):
        cfg = ViTConfig(224, 16, 768, 12, 12, 2)
        img = np.zeros((3, 224, 224), np.float32)
        assert patchify(img, cfg).shape == (196, 768)

    def test_tiny_geometry(self):
        cfg = ViTConfig(32, 8, 64, 2, 4, 2)
        img = np.zeros((3, 32, 32), np.float32)
        assert patchify(img, cfg).shape == (16, 192)

    def test_per_patch_constant_locality(self):
        cfg = ViTConfig(32, 8, 64, 2, 4, 2)
        img = np.zeros((3, 32, 32), np.float32)
        for idx in range(16):
            gy, gx = divmod(idx, 4)
            img[:, gy * 8:(gy + 1) * 8, gx * 8:(gx + 1) * 8] = idx
        patches = patchify(img, cfg)
        for idx in range(16):
            assert np.all(patches[idx] == idx)

    def test_channel_major_then_row_major(self):
        cfg = ViTConfig(16, 8, 64, 1, 4, 2)
        img = np.arange(3 * 16 * 16, dtype=np.float32).reshape(3, 16, 16)
        patches = patchify(img, cfg)
        # token 1 is the top-right patch; first entries walk channel 0's first row
        want = img[0, 0, 8:16]
        assert np.array_equal(patches[1][:8], want)
        # channel boundary: entry 64 starts channel 1
        assert patches[1][64] == img[1, 0, 8]

    def test_dimension_mismatch(self):
        cfg = ViTConfig(32, 8, 64, 2, 4, 2)
        with pytest.raises(ValueError, match="shape"):
            patchify(np.zeros((3, 16, 16), np.float32), cfg)


def tiny_random_weights(seed=0, config=None):
    config = config or ViTConfig(32, 8, 64, 2, 4, 2)
    rng = np.random.default_rng(seed)
    tensors = {
        name: (0.05 * rng.standard_normal(shape)).astype(np.float32)
        for name, shape in canonical_schema(config).items()
    }
    return validate_vit_schema(tensors, config), tensors


class TestEmbed:
    def test_zero_image_zero_pos_gives_bias(self):
        weights, tensors = tiny_random_weights(1)
        zeroed = dict(tensors)
        zeroed["pos_embed"] = np.zeros_like(tensors["pos_embed"])
        weights = validate_vit_schema(zeroed, weights.config)
        seq = embed(np.zeros((16, 192), np.float32), weights)
        for k in range(16):
            assert np.allclose(seq.embeddings[k], zeroed["patch_embed.bias"], atol=1e-7)

    def test_zero_image_nonzero_pos_rows_distinct(self):
        weights, tensors = tiny_random_weights(2)
        seq = embed(np.zeros((16, 192), np.float32), weights)
        for k in range(16):
            want = tensors["patch_embed.bias"] + tensors["pos_embed"][k + 1]
            assert np.allclose(seq.embeddings[k], want, atol=1e-7)
        assert len({seq.embeddings[k].tobytes() for k in range(16)}) == 16

    def test_golden_embedding(self, tiny_image, tiny_weights, golden_tensors):
        chw = normalize(tiny_image)
        seq = embed(patchify(chw, tiny_weights.config), tiny_weights)
        got = np.concatenate([seq.cls[None, :], seq.embeddings], axis=0)
        assert np.max(np.abs(got - golden_tensors["embedding"])) < 1e-5


class TestForward:
    def test_golden_logits(self, tiny_model, golden_tensors):
        pred = tiny_model.evaluate(TokenSubset.full(16))
        assert rel_err(pred.logits, golden_tensors["logits"][0]) < 1e-4
        assert rel_err(pred.probs, golden_tensors["probs"][0]) < 1e-4

    def test_full_sequence_row_count(self, tiny_model):
        rows = assemble_rows(tiny_model.seq, TokenSubset.full(16))
        assert rows.shape == (17, 64)

    def test_retained_order_permutation_invariance(self, tiny_model):
        rng = np.random.default_rng(0)
        weights = tiny_model.weights
        subset = TokenSubset(tuple(sorted(rng.choice(16, size=9, replace=False).tolist())))
        base = encode_logits(assemble_rows(tiny_model.seq, subset), weights)
        for _ in range(5):
            perm = rng.permutation(len(subset))
            rows = np.concatenate(
                [tiny_model.seq.cls[None, :],
                 tiny_model.seq.embeddings[np.asarray(subset.retained)[perm]]],
                axis=0,
            )
            shuffled = encode_logits(rows, weights)
            assert np.max(np.abs(shuffled - base)) < 1e-5

    def test_empty_subset_well_defined(self, tiny_model):
        pred = tiny_model.evaluate(TokenSubset(()))
        assert np.all(np.isfinite(pred.logits))
        assert abs(float(pred.probs.sum()) - 1.0) < 1e-6

    def test_same_subset_bit_identical(self, tiny_model):
        subset = TokenSubset((0, 2, 5, 9, 15))
        a = tiny_model.evaluate(subset)
        b = tiny_model.evaluate(subset)
        assert a.logits.tobytes() == b.logits.tobytes()
        assert a.probs.tobytes() == b.probs.tobytes()

    def test_gather_vs_mask(self, tiny_model):
        rng = np.random.default_rng(42)
        for _ in range(10):
            size = int(rng.integers(0, 17))
            retained = tuple(sorted(rng.choice(16, size=size, replace=False).tolist()))
            subset = TokenSubset(retained)
            removed = set(range(16)) - set(retained)
            gathered = tiny_model.evaluate(subset).logits
            masked = masked_forward_logits(tiny_model.seq, removed, tiny_model.weights)
            assert np.max(np.abs(gathered - masked)) < 1e-5

    def test_invalid_subset_rejected(self, tiny_model):
        with pytest.raises(ValueError):
            tiny_model.evaluate(TokenSubset((0, 99)))


class TestPredict:
    def test_composition_is_exact(self, tiny_image, tiny_weights):
        from token_insight.imageio import resize_bilinear

        direct = predict(tiny_image, tiny_weights)
        cfg = tiny_weights.config
        resized = resize_bilinear(tiny_image, cfg.image_size, cfg.image_size)
        seq = embed(patchify(normalize(resized), cfg), tiny_weights)
        manual = forward_subset(seq, TokenSubset.full(cfg.token_count), tiny_weights)
        assert direct.logits.tobytes() == manual.logits.tobytes()

    def test_probability_simplex(self, tiny_weights):
        rng = np.random.default_rng(11)
        for _ in range(5):
            img = InputImage.from_array(rng.random((32, 32, 3), dtype=np.float32))
            pred = predict(img, tiny_weights)
            assert abs(float(pred.probs.sum()) - 1.0) < 1e-6
            assert np.all(pred.probs >= 0)
            assert pred.top_class == int(np.argmax(pred.probs))

    def test_golden_confidence(self, tiny_image, tiny_weights, golden_tensors):
        pred = predict(tiny_image, tiny_weights)
        want = golden_tensors["probs"][0]
        assert pred.top_class == int(np.argmax(want))
        assert abs(pred.confidence - float(want.max())) < 1e-4


class TestPrediction:
    def test_from_logits(self):
        p = Prediction.from_logits([0.0, 1.0])
        assert p.top_class == 1
        assert abs(float(p.probs.sum()) - 1.0) < 1e-6

    def test_from_probs_softmax_consistency(self):
        import token_insight.tensor_core as tc

        p = Prediction.from_probs([0.25, 0.75])
        back = tc.softmax_rows(p.logits.astype(np.float32))
        assert np.allclose(back, [0.25, 0.75], atol=1e-6)
