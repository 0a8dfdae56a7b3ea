import numpy as np
import pytest

from helpers import check_gradients
from lmlp import blocks, tensor as T

LMLP_PRESETS = ["A1", "B1", "B2", "B3", "C1", "D1", "D2", "E1", "E2", "F1", "F2", "F2-Deep"]
ALL_PRESETS = LMLP_PRESETS + ["A2", "A3", "transformer"]


@pytest.fixture(autouse=True)
def clean_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def tokens(batch=2, seq=6, dim=8, seed=0):
    rng = np.random.default_rng(seed)
    return T.Tensor(rng.standard_normal((batch, seq, dim)))


def small_block(preset, seed=0, seq=6, dim=8, scale=2.0):
    return blocks.build_block(preset, seed, seq_len=seq, embed_dim=dim, mlp_scale=scale)


def randomize(block, seed=123):
    rng = np.random.default_rng(seed)
    for _, p in block.named_parameters():
        p.data[...] = 0.2 * rng.standard_normal(p.shape)


class TestConstruction:
    def test_same_seed_bitwise_identical(self):
        a = small_block("D2", seed=7)
        b = small_block("D2", seed=7)
        for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert name_a == name_b
            assert np.array_equal(pa.data, pb.data)

    def test_preset_a2_is_mixer(self):
        assert isinstance(small_block("A2"), blocks.MixerBlock)

    def test_preset_a3_is_gmlp(self):
        assert isinstance(small_block("A3"), blocks.GmlpBlock)

    def test_glu_without_projection_rejected(self):
        cfg = blocks.BlockConfig(seq_len=6, embed_dim=8, merge_op="glu",
                                 merge_projection="none", second_stage="none")
        with pytest.raises(blocks.UnsupportedBlockError):
            blocks.make_block(cfg, np.random.default_rng(0))

    def test_f2_first_stage_parameter_count(self):
        """Branch linears plus merge projection: 2*D^2 + L^2 weights (+ biases)."""
        seq, dim = 334, 512
        block = blocks.build_block("F2", 0, seq_len=seq, embed_dim=dim, mlp_scale=5.2)
        weights = (block.fnn_r.linear.weight.size
                   + block.fnn_l.linear.weight.size
                   + block.merge_proj.weight.size)
        assert weights == 2 * dim * dim + seq * seq
        biases = (block.fnn_r.linear.bias.size
                  + block.fnn_l.linear.bias.size
                  + block.merge_proj.bias.size)
        assert biases == 2 * dim + seq

    def test_mlp_hidden_rounds_fractional_scale(self):
        assert blocks.mlp_hidden(512, 5.2) == round(5.2 * 512)
        assert blocks.mlp_hidden(1, 0.1) == 1

    def test_unknown_preset_rejected(self):
        with pytest.raises(blocks.UnsupportedBlockError):
            small_block("Z9")


class TestShapeAndIdentity:
    @pytest.mark.parametrize("preset", ALL_PRESETS)
    def test_shape_preserved(self, preset):
        block = small_block(preset, seed=3)
        x = tokens(seed=4)
        assert block(x).shape == x.shape

    @pytest.mark.parametrize("preset", ALL_PRESETS)
    def test_zero_initialized_block_is_identity(self, preset):
        block = small_block(preset, seed=5)
        blocks.zero_parameters(block)
        x = tokens(seed=6)
        assert np.array_equal(block(x).data, x.data)

    @pytest.mark.parametrize("preset", LMLP_PRESETS)
    def test_fresh_block_with_zero_merge_projection_is_identity(self, preset):
        """Fresh blocks start with a zero merge projection (and zero second-stage
        output layer), so every preset that has the projection is an identity map."""
        block = small_block(preset, seed=8)
        x = tokens(seed=9)
        out = block(x)
        if block.merge_proj is not None:
            assert np.array_equal(out.data, x.data)
        else:  # B3: no projection to silence the random branches
            assert not np.array_equal(out.data, x.data)

    def test_extent_mismatch_rejected(self):
        block = small_block("D2")
        with pytest.raises(T.ShapeError):
            block(tokens(seq=5))


class TestForwardSemantics:
    def test_merge_ops_differ(self):
        x = tokens(seed=11)
        outs = {}
        for preset in ("D1", "D2"):
            block = small_block(preset, seed=12)
            randomize(block, seed=13)
            outs[preset] = block(x).data
        assert not np.allclose(outs["D1"], outs["D2"])

    def test_first_stage_reduces_to_residual_of_norm(self):
        """fnn_l zero, fnn_r identity, projection identity: h = x + norm_r(x)."""
        block = small_block("D2", seed=14)
        dim = 8
        block.fnn_l.linear.weight.data[...] = 0.0
        block.fnn_l.linear.bias.data[...] = 0.0
        block.fnn_r.linear.weight.data[...] = np.eye(dim)
        block.fnn_r.linear.bias.data[...] = 0.0
        block.merge_proj.weight.data[...] = np.eye(dim)
        block.merge_proj.bias.data[...] = 0.0
        xt = tokens(seed=15)
        out = block(xt)
        normed = T.layer_norm(xt, dim, block.norm_r.gain, block.norm_r.bias)
        assert np.allclose(out.data, (xt + normed).data, atol=1e-12)

    def test_token_mixing_reaches_other_positions(self):
        block = small_block("D2", seed=16)
        randomize(block, seed=17)
        x = tokens(batch=1, seed=18)
        base = block(x).data.copy()
        bumped = x.data.copy()
        bumped[0, 3, :] += 1.0
        moved = block(T.Tensor(bumped)).data
        assert not np.allclose(base[0, 0], moved[0, 0])

    def test_left_gelu_only_on_permuted_branch(self):
        """E2 vs D2 differ exactly by the left-branch GELU."""
        d2 = small_block("D2", seed=19)
        e2 = small_block("E2", seed=19)
        for (_, p), (_, q) in zip(d2.named_parameters(), e2.named_parameters()):
            q.data[...] = p.data
        randomize(d2, seed=20)
        for (_, p), (_, q) in zip(d2.named_parameters(), e2.named_parameters()):
            q.data[...] = p.data
        x = tokens(seed=21)
        assert not np.allclose(d2(x).data, e2(x).data)

    def test_attention_rows_sum_to_one(self):
        block = small_block("transformer", seed=22)
        randomize(block, seed=23)
        weights = block.attention_weights(tokens(seed=24))
        assert np.abs(weights.data.sum(axis=-1) - 1.0).max() < 1e-12

    def test_second_stage_skip_enters_before_second_norm(self):
        block = small_block("D2", seed=25)
        randomize(block, seed=26)
        x = tokens(seed=27)
        skip = tokens(seed=28)
        with_skip = block(x, skip=skip, skip_stage="second_stage").data
        zero_skip = block(x, skip=T.Tensor(np.zeros(x.shape)), skip_stage="second_stage").data
        plain = block(x).data
        assert np.array_equal(zero_skip, plain)
        assert not np.allclose(with_skip, plain)

    def test_first_stage_skip_equals_shifted_input(self):
        block = small_block("D2", seed=29)
        randomize(block, seed=30)
        x, skip = tokens(seed=31), tokens(seed=32)
        via_skip = block(x, skip=skip, skip_stage="first_stage").data
        pre_added = block(x + skip).data
        assert np.allclose(via_skip, pre_added, atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("preset", ALL_PRESETS)
    def test_parameter_gradients_match_finite_differences(self, preset):
        block = small_block(preset, seed=40)
        randomize(block, seed=41)
        x = tokens(seed=42)
        params = [p for _, p in block.named_parameters()]
        check_gradients(lambda: block(x).sum() + (block(x) * block(x)).mean(), params)

    def test_d2_gradients_through_sum_of_output(self):
        block = small_block("D2", seed=43)
        randomize(block, seed=44)
        x = tokens(seed=45)
        params = [p for _, p in block.named_parameters()]
        check_gradients(lambda: block(x).sum(), params)
