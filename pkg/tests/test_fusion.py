"""Concat, sum, learnable weighted sum and attention fusion."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfast.errors import ContractError, DimensionError
from dfast.fusion import (
    MODALITIES, Fusion, FusionInput, attention_fuse, concat_fuse, sum_fuse, weighted_sum_fuse,
)
from dfast.rng import make_rng
from dfast.tensor import Tensor

F64 = np.float64


def emb(rng, batch=None):
    shape = (256,) if batch is None else (batch, 256)
    return Tensor(rng.standard_normal(shape), dtype=F64)


def three(rng, batch=2):
    return {m: emb(rng, batch) for m in MODALITIES}


def attention_params(seed=0, scale=30.0):
    f = Fusion("attention", make_rng(seed), dtype=F64)
    f.query.data *= scale
    f.w_key.data *= scale
    return f.query, f.w_key, f.w_value


class TestInput:
    def test_needs_one_modality(self):
        with pytest.raises(ContractError):
            FusionInput({}).validate()
        with pytest.raises(ContractError):
            FusionInput({"face": None}).validate()

    def test_width_256(self, rng):
        with pytest.raises(DimensionError, match="voice"):
            FusionInput({"voice": Tensor(np.zeros((1, 128)))}).validate()

    def test_fixed_order(self, rng):
        e = three(rng)
        shuffled = {m: e[m] for m in ("pose", "face", "voice")}
        assert FusionInput(shuffled).present == MODALITIES


class TestConcat:
    def test_length_768(self, rng):
        assert concat_fuse(FusionInput(three(rng))).fused.shape == (2, 768)

    def test_single_is_identity(self, rng):
        e = emb(rng, 2)
        np.testing.assert_array_equal(concat_fuse(FusionInput({"face": e})).fused.data, e.data)

    def test_voice_block_layout(self, rng):
        e = three(rng)
        out = concat_fuse(FusionInput(e)).fused.data
        np.testing.assert_array_equal(out[:, 256:512], e["voice"].data)

    def test_skips_absent(self, rng):
        e = three(rng)
        out = concat_fuse(FusionInput({"face": e["face"], "pose": e["pose"]})).fused.data
        np.testing.assert_array_equal(out[:, 256:], e["pose"].data)
        assert out.shape == (2, 512)


class TestSum:
    def test_with_zeros(self, rng):
        e = emb(rng, 1)
        z = Tensor(np.zeros((1, 256)))
        np.testing.assert_array_equal(sum_fuse(FusionInput({"face": e, "voice": z, "pose": z})).fused.data, e.data)

    def test_commutative(self, rng):
        a, b, c = emb(rng, 2), emb(rng, 2), emb(rng, 2)
        x = sum_fuse(FusionInput({"face": a, "voice": b, "pose": c})).fused.data
        y = sum_fuse(FusionInput({"face": c, "voice": a, "pose": b})).fused.data
        np.testing.assert_allclose(x, y, atol=1e-12)

    def test_triple(self, rng):
        e = emb(rng, 2)
        np.testing.assert_allclose(sum_fuse(FusionInput({m: e for m in MODALITIES})).fused.data, 3 * e.data)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_width_independent_of_count(self, rng, k):
        e = {m: emb(rng, 2) for m in MODALITIES[:k]}
        assert sum_fuse(FusionInput(e)).fused.shape == (2, 256)


class TestWeightedSum:
    def test_zero_logits_give_mean(self, rng):
        e = three(rng)
        out = weighted_sum_fuse(FusionInput(e), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.weights, [1 / 3] * 3, atol=1e-15)
        np.testing.assert_allclose(out.fused.data, sum(t.data for t in e.values()) / 3, atol=1e-12)

    def test_saturated_logit(self, rng):
        e = three(rng)
        out = weighted_sum_fuse(FusionInput(e), Tensor([50.0, 0.0, 0.0]))
        assert out.weights[0] == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(out.fused.data, e["face"].data, atol=1e-6)

    def test_single_modality(self, rng):
        e = emb(rng, 2)
        out = weighted_sum_fuse(FusionInput({"pose": e}), Tensor([3.0, -1.0, 0.5]))
        assert out.weights.tolist() == [1.0]
        np.testing.assert_allclose(out.fused.data, e.data)

    def test_absent_modality_excluded(self, rng):
        e = three(rng)
        out = weighted_sum_fuse(FusionInput({"face": e["face"], "pose": e["pose"]}), Tensor([0.0, 100.0, 0.0]))
        np.testing.assert_allclose(out.weights, [0.5, 0.5])


class TestAttention:
    def test_identical_embeddings_uniform(self, rng):
        e = emb(rng, 3)
        q, wk, wv = attention_params()
        out = attention_fuse(FusionInput({m: e for m in MODALITIES}), q, wk, wv)
        np.testing.assert_allclose(out.weights, 1 / 3, atol=1e-6)

    def test_single_modality_weight_one(self, rng):
        out = attention_fuse(FusionInput({"voice": emb(rng, 2)}), *attention_params())
        np.testing.assert_array_equal(out.weights, np.ones((2, 1)))

    def test_permutation_equivariance(self, rng):
        e = three(rng)
        params = attention_params()
        base = attention_fuse(FusionInput(e), *params)
        for perm in itertools.permutations(range(3)):
            moved = {MODALITIES[perm[i]]: e[MODALITIES[i]] for i in range(3)}
            out = attention_fuse(FusionInput(moved), *params)
            np.testing.assert_allclose(out.fused.data, base.fused.data, atol=1e-12)
            for i in range(3):
                np.testing.assert_allclose(out.weights[:, perm[i]], base.weights[:, i], atol=1e-12)

    def test_weights_are_per_sample(self, rng):
        e = three(rng, batch=1)
        swapped = {"face": e["voice"], "voice": e["face"], "pose": e["pose"]}
        batch = {m: Tensor(np.concatenate([e[m].data, swapped[m].data])) for m in MODALITIES}
        out = attention_fuse(FusionInput(batch), *attention_params())
        assert not np.allclose(out.weights[0], out.weights[1])
        np.testing.assert_allclose(out.weights[1], out.weights[0][[1, 0, 2]], atol=1e-12)

    def test_unbatched_input(self, rng):
        out = attention_fuse(FusionInput({m: emb(rng) for m in MODALITIES}), *attention_params())
        assert out.fused.shape == (256,) and out.weights.shape == (3,)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 3), st.floats(0.1, 100.0))
    def test_weight_simplex(self, seed, k, scale):
        r = make_rng(seed)
        e = {m: emb(r, 4) for m in MODALITIES[:k]}
        out = attention_fuse(FusionInput(e), *attention_params(seed, scale))
        assert (out.weights >= 0).all()
        np.testing.assert_allclose(out.weights.sum(axis=-1), 1.0, atol=1e-5)


class TestFusionModule:
    @pytest.mark.parametrize("strategy,k,width", [("concat", 3, 768), ("concat", 2, 512), ("sum", 3, 256),
                                                  ("wsum", 2, 256), ("attention", 1, 256)])
    def test_output_dim(self, rng, strategy, k, width):
        f = Fusion(strategy, make_rng(0), dtype=F64)
        out = f(FusionInput({m: emb(rng, 2) for m in MODALITIES[:k]}))
        assert out.fused.shape == (2, width) == (2, f.output_dim(k))

    def test_parameters_by_strategy(self):
        names = {s: [n for n, _ in Fusion(s, make_rng(0)).named_parameters()] for s in ("concat", "sum", "wsum",
                                                                                       "attention")}
        assert names == {"concat": [], "sum": [], "wsum": ["logits"], "attention": ["query", "w_key", "w_value"]}

    def test_unknown_strategy(self):
        with pytest.raises(ContractError):
            Fusion("gated", make_rng(0))
