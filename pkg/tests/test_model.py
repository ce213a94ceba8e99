import numpy as np
import pytest

from compactcap.layout import parse_layout
from compactcap.model import ModelConfig, build_model, sinusoidal_positions
from compactcap.vocab import build_vocab


def _features(rng, n, dim=16):
    return rng.standard_normal((n, dim))


def _boxes(rng, n):
    b = np.zeros((n, 4))
    b[:, 0] = rng.uniform(0.2, 0.8, n)
    b[:, 1] = rng.uniform(0.2, 0.8, n)
    b[:, 2:] = rng.uniform(0.05, 0.3, (n, 2))
    return b


class TestConfig:
    def test_rows_radix_vs_word(self, tiny_config):
        assert tiny_config.encoded_rows == 10
        word = ModelConfig.from_dict({**tiny_config.to_dict(), "radix_base": 0})
        assert word.encoded_rows == 15

    def test_dict_round_trip(self, tiny_config):
        assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config

    def test_unknown_key_rejected(self, tiny_config):
        with pytest.raises(ValueError, match="unknown model config keys"):
            ModelConfig.from_dict({**tiny_config.to_dict(), "dropout": 0.1})

    def test_bad_divisibility_rejected(self, tiny_config):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig.from_dict({**tiny_config.to_dict(), "hidden_size": 34})

    def test_per_stack_attention_mode_overrides(self, tiny_config):
        cfg = ModelConfig.from_dict({**tiny_config.to_dict(),
                                     "attention_mode": "no_share",
                                     "encoder_attention_mode": "share_kv"})
        assert cfg.enc_attention_mode == "share_kv"
        assert cfg.dec_attention_mode == "no_share"


class TestBuildDeterminism:
    def test_same_seed_bit_identical(self, tiny_config):
        s1 = build_model(tiny_config, 7).state()
        s2 = build_model(tiny_config, 7).state()
        assert s1.keys() == s2.keys()
        for name in s1:
            assert np.array_equal(s1[name], s2[name]), name

    def test_different_seed_differs(self, tiny_config):
        s1 = build_model(tiny_config, 7).state()
        s2 = build_model(tiny_config, 8).state()
        assert any(not np.array_equal(s1[n], s2[n]) for n in s1)

    def test_shared_layout_makes_one_group(self, tiny_config):
        model = build_model(tiny_config, 0)
        # encoder layout (0x2): both stack positions reference group 0
        assert len(model.encoder_groups) == 1
        assert len(model.decoder_groups) == 2
        names = model.parameters().keys()
        assert not any(n.startswith("enc.g1.") for n in names)

    def test_full_share_single_identity(self):
        cfg = ModelConfig(hidden_size=32, mlp_size=64, heads=4, feature_dim=16,
                          encoder_layout=parse_layout("(0x6)"),
                          decoder_layout=parse_layout("(0x6)"),
                          attention_mode="no_share", radix_base=8,
                          vocab_size=13, max_len=32, use_geometric=False)
        model = build_model(cfg, 0)
        assert len(model.encoder_groups) == 1
        out = model.encode_regions(np.zeros((2, 16)) + 0.1)
        assert out.shape == (2, 32)


class TestEncoder:
    def test_permutation_equivariance(self, tiny_config, rng):
        model = build_model(tiny_config, 3)
        n = 5
        feats, boxes = _features(rng, n), _boxes(rng, n)
        perm = rng.permutation(n)
        out = np.asarray(model.encode_regions(feats, boxes))
        out_perm = np.asarray(model.encode_regions(feats[perm], boxes[perm]))
        assert np.abs(out[perm] - out_perm).max() <= 1e-12

    def test_single_region(self, tiny_config, rng):
        model = build_model(tiny_config, 3)
        out = model.encode_regions(_features(rng, 1), _boxes(rng, 1))
        assert out.shape == (1, 32)

    def test_zero_regions_rejected(self, tiny_config, rng):
        model = build_model(tiny_config, 3)
        with pytest.raises(ValueError, match="at least one region"):
            model.encode_regions(np.zeros((0, 16)), np.zeros((0, 4)))

    def test_geometric_model_requires_boxes(self, tiny_config, rng):
        model = build_model(tiny_config, 3)
        with pytest.raises(ValueError, match="requires region boxes"):
            model.encode_regions(_features(rng, 3))


class TestDecoder:
    def test_causality_is_exact(self, tiny_config, rng):
        model = build_model(tiny_config, 5)
        memory = model.encode_regions(_features(rng, 3), _boxes(rng, 3))
        ids = np.array([8, 3, 1, 4, 2, 0])
        base = np.asarray(model.decode_teacher_forced(memory, ids))
        for t in range(1, len(ids)):
            perturbed = ids.copy()
            perturbed[t] = (perturbed[t] + 1) % 8
            out = np.asarray(model.decode_teacher_forced(memory, perturbed))
            assert np.array_equal(out[:t], base[:t]), f"leak at {t}"
            assert not np.array_equal(out[t:], base[t:])

    def test_logit_width_is_encoded_vocab(self, tiny_config, rng):
        model = build_model(tiny_config, 5)
        memory = model.encode_regions(_features(rng, 2), _boxes(rng, 2))
        logits = model.decode_teacher_forced(memory, np.array([8, 0, 1]))
        assert logits.shape == (3, 10)

    def test_bos_only_single_row(self, tiny_config, rng):
        model = build_model(tiny_config, 5)
        memory = model.encode_regions(_features(rng, 2), _boxes(rng, 2))
        assert model.decode_teacher_forced(memory, np.array([8])).shape == (1, 10)

    def test_token_out_of_range_rejected(self, tiny_config, rng):
        model = build_model(tiny_config, 5)
        memory = model.encode_regions(_features(rng, 2), _boxes(rng, 2))
        with pytest.raises(IndexError):
            model.decode_teacher_forced(memory, np.array([8, 10]))

    def test_sequence_longer_than_max_len_rejected(self, tiny_config, rng):
        model = build_model(tiny_config, 5)
        memory = model.encode_regions(_features(rng, 2), _boxes(rng, 2))
        with pytest.raises(ValueError, match="max_len"):
            model.decode_teacher_forced(memory, np.zeros(33, dtype=int))


class TestStateRoundTrip:
    def test_load_state_preserves_aliasing(self, tiny_config):
        model = build_model(tiny_config, 1)
        other = build_model(tiny_config, 2)
        model.load_state(other.state())
        g = model.decoder_groups[0].self_attn
        assert g.w_k is g.w_v  # share_kv alias survives loading
        for name, arr in other.state().items():
            assert np.array_equal(model.parameters()[name].data, arr)

    def test_state_mismatch_rejected(self, tiny_config):
        model = build_model(tiny_config, 1)
        state = model.state()
        state.pop("embed.in")
        with pytest.raises(ValueError, match="state mismatch"):
            model.load_state(state)


def test_positional_table_is_parameter_free(tiny_config):
    model = build_model(tiny_config, 0)
    assert not any("positional" in name for name in model.parameters())
    table = sinusoidal_positions(16, 8)
    assert table.shape == (16, 8)
    np.testing.assert_allclose(table[0, 0::2], 0.0)  # sin(0)
    np.testing.assert_allclose(table[0, 1::2], 1.0)  # cos(0)


def test_vocab_integration_smoke(tiny_config, rng):
    corpus = ["a small red circle", "a big blue square and a small red circle"]
    vocab = build_vocab(corpus, min_frequency=1)
    cfg = tiny_config.with_vocab_size(len(vocab))
    model = build_model(cfg, 0)
    assert model.input_embedding.data.shape == (10, 32)
