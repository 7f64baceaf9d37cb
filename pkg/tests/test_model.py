"""Transformer contracts: causality, masking, resize, asymmetry."""

import numpy as np
import pytest

from dgt import tensor as T
from dgt.model import (
    ModelConfig,
    MultiHeadAttention,
    SequenceLengthError,
    TranscriptionModel,
    resize_embeddings,
    sinusoidal_positions,
)
from dgt.seeding import stream_rng
from dgt.tokenizer import UnknownIdError

RNG = np.random.default_rng(99)


def tiny_config(**overrides):
    base = dict(vocab_size=30, d_model=16, n_heads=2, decoder_layers=1, encoder_layers=2,
                d_ff=32, dropout_p=0.0, max_positions=24)
    base.update(overrides)
    return ModelConfig(**base)


def random_ids(length, vocab=30):
    return RNG.integers(3, vocab, size=length).tolist()


# -- config ---------------------------------------------------------------------


def test_encoder_depth_defaults_to_triple():
    cfg = ModelConfig(vocab_size=259)
    assert cfg.decoder_layers == 2
    assert cfg.encoder_layers == 6


def test_explicit_encoder_depth_respected():
    cfg = ModelConfig(vocab_size=259, encoder_layers=4)
    assert cfg.encoder_layers == 4


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dropout_p=1.0)


def test_config_round_trips_through_dict():
    cfg = tiny_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_default_heavy_encoder_light_decoder():
    model = TranscriptionModel(ModelConfig(vocab_size=261), seed=0)
    ratio = model.encoder_parameter_count() / model.decoder_parameter_count()
    assert ratio >= 2.5


# -- forward shape and value contracts -------------------------------------------


def test_forward_shape_contract():
    model = TranscriptionModel(tiny_config(), seed=1)
    src = random_ids(7)
    tgt = random_ids(5)
    logits = model.forward(src, tgt)
    assert logits.shape == (5, 30)
    assert np.all(np.isfinite(logits.data))


def test_forward_rejects_unknown_ids():
    model = TranscriptionModel(tiny_config(), seed=1)
    with pytest.raises(UnknownIdError):
        model.forward([3, 30], [0, 4])
    with pytest.raises(UnknownIdError):
        model.forward([3], [0, -2])


def test_forward_rejects_overlong_sequences():
    model = TranscriptionModel(tiny_config(max_positions=8), seed=1)
    with pytest.raises(SequenceLengthError):
        model.forward(random_ids(9), [0])
    with pytest.raises(SequenceLengthError):
        model.forward(random_ids(3), random_ids(9))


def test_causality_prefix_logits_unchanged():
    model = TranscriptionModel(tiny_config(), seed=2)
    src = random_ids(6)
    tgt = random_ids(8)
    base = model.forward(src, tgt).data
    for t in range(1, 8):
        changed = list(tgt)
        changed[t] = (changed[t] + 1 - 3) % 27 + 3
        out = model.forward(src, changed).data
        np.testing.assert_array_equal(out[:t], base[:t])


def test_changing_future_token_changes_its_own_logits():
    model = TranscriptionModel(tiny_config(), seed=2)
    src = random_ids(6)
    tgt = random_ids(4)
    base = model.forward(src, tgt).data
    changed = list(tgt)
    changed[2] = (changed[2] + 1 - 3) % 27 + 3
    out = model.forward(src, changed).data
    assert not np.array_equal(out[2:], base[2:])


def test_positional_encoding_makes_order_matter():
    model = TranscriptionModel(tiny_config(), seed=3)
    src = [5, 9, 14, 20]
    tgt = [0, 7, 8]
    straight = model.forward(src, tgt).data
    shuffled = model.forward([20, 14, 9, 5], tgt).data
    assert not np.array_equal(straight, shuffled)


def test_sinusoidal_table_values():
    table = sinusoidal_positions(4, 6, np.float64)
    assert table.shape == (4, 6)
    np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1], atol=1e-12)
    np.testing.assert_allclose(table[2, 0], np.sin(2.0), atol=1e-12)
    np.testing.assert_allclose(table[3, 1], np.cos(3.0), atol=1e-12)


def test_init_is_seed_deterministic():
    a = TranscriptionModel(tiny_config(), seed=5)
    b = TranscriptionModel(tiny_config(), seed=5)
    c = TranscriptionModel(tiny_config(), seed=6)
    for name, p in a.named_parameters().items():
        np.testing.assert_array_equal(p.data, b.named_parameters()[name].data)
    assert any(
        not np.array_equal(p.data, c.named_parameters()[n].data)
        for n, p in a.named_parameters().items()
    )


def test_dropout_draws_change_training_logits():
    cfg = tiny_config(dropout_p=0.3)
    model = TranscriptionModel(cfg, seed=4)
    src = np.array([random_ids(5)])
    tgt = np.array([[0, 4, 5]])
    one = model.forward_batch(src, tgt, stream_rng(0, 3, 1)).data
    two = model.forward_batch(src, tgt, stream_rng(0, 3, 1)).data
    three = model.forward_batch(src, tgt, stream_rng(0, 3, 2)).data
    np.testing.assert_array_equal(one, two)
    assert not np.array_equal(one, three)
    eval_a = model.forward_batch(src, tgt, None).data
    eval_b = model.forward_batch(src, tgt, None).data
    np.testing.assert_array_equal(eval_a, eval_b)


def test_state_dict_round_trip():
    model = TranscriptionModel(tiny_config(), seed=7)
    other = TranscriptionModel(tiny_config(), seed=8)
    other.load_state_dict(model.state_dict())
    src, tgt = random_ids(4), random_ids(3)
    np.testing.assert_array_equal(model.forward(src, tgt).data, other.forward(src, tgt).data)
    bad = model.state_dict()
    bad.pop("embedding")
    with pytest.raises(ValueError):
        other.load_state_dict(bad)


# -- attention -------------------------------------------------------------------


def test_single_key_attention_is_projection_chain():
    d = 8
    rng = stream_rng(12, 0)
    attn = MultiHeadAttention(d, 2, rng, np.float64)
    x = RNG.normal(size=(1, 1, d))
    out = attn.forward(T.Tensor(x, dtype=np.float64), T.Tensor(x, dtype=np.float64),
                       T.Tensor(x, dtype=np.float64)).data
    # softmax over a single key is 1, so output = (x Wv + bv) Wo + bo
    want = (x[0] @ attn.w_value.data + attn.b_value.data) @ attn.w_out.data + attn.b_out.data
    np.testing.assert_allclose(out[0], want, atol=1e-12)


def test_fully_masked_row_outputs_zero():
    d = 8
    attn = MultiHeadAttention(d, 2, stream_rng(13, 0), np.float64)
    x = T.Tensor(RNG.normal(size=(1, 3, d)), dtype=np.float64)
    keep = np.array([[[[True, True, True],
                       [False, False, False],
                       [True, False, True]]]])
    out = attn.forward(x, x, x, keep).data
    assert np.all(out[0, 1] == 0.0)
    assert np.any(out[0, 0] != 0.0)
    assert np.all(np.isfinite(out))


def test_masked_keys_do_not_influence_output():
    d = 8
    attn = MultiHeadAttention(d, 2, stream_rng(14, 0), np.float64)
    base = RNG.normal(size=(1, 4, d))
    changed = base.copy()
    changed[0, 2] += 5.0  # perturb a key every query is masked from
    keep = np.ones((1, 1, 4, 4), dtype=bool)
    keep[..., 2] = False
    q = T.Tensor(base[:, :1], dtype=np.float64)
    out_a = attn.forward(q, T.Tensor(base, dtype=np.float64),
                         T.Tensor(base, dtype=np.float64), keep[:, :, :1]).data
    out_b = attn.forward(q, T.Tensor(changed, dtype=np.float64),
                         T.Tensor(changed, dtype=np.float64), keep[:, :, :1]).data
    np.testing.assert_array_equal(out_a, out_b)


def test_attention_mask_shape_mismatch_raises():
    d = 8
    attn = MultiHeadAttention(d, 2, stream_rng(15, 0), np.float64)
    x = T.Tensor(RNG.normal(size=(1, 3, d)), dtype=np.float64)
    with pytest.raises(T.ShapeError):
        attn.forward(x, x, x, np.ones((1, 1, 5, 5), dtype=bool))


def test_padding_mask_matches_unpadded_forward():
    # A padded batch row must produce the same logits as the bare example.
    model = TranscriptionModel(tiny_config(), seed=9)
    src = [4, 5, 6, 1]
    tgt = [0, 7, 8]
    bare = model.forward(src, tgt).data
    padded_src = np.array([src + [0, 0, 0]])
    keep = padded_src != 0
    enc = model.encode_source(padded_src, keep)
    logits = model.decoder_logits(enc, keep, np.array([tgt])).data[0]
    np.testing.assert_allclose(bare, logits, atol=1e-5)


# -- embedding resize -------------------------------------------------------------


def test_resize_preserves_existing_rows_bit_exact():
    model = TranscriptionModel(ModelConfig(vocab_size=259, d_model=16, n_heads=2,
                                           decoder_layers=1, encoder_layers=1, d_ff=32,
                                           dropout_p=0.0, max_positions=16), seed=10)
    before_emb = model.embedding.data.copy()
    before_out = model.out_weight.data.copy()
    before_bias = model.out_bias.data.copy()
    resize_embeddings(model, 265)
    assert model.config.vocab_size == 265
    assert model.embedding.shape == (265, 16)
    np.testing.assert_array_equal(model.embedding.data[:259], before_emb)
    np.testing.assert_array_equal(model.out_weight.data[:, :259], before_out)
    np.testing.assert_array_equal(model.out_bias.data[:259], before_bias)
    np.testing.assert_array_equal(model.out_bias.data[259:], np.zeros(6, dtype=np.float32))


def test_resize_keeps_old_id_forward_bit_identical():
    cfg = ModelConfig(vocab_size=259, d_model=16, n_heads=2, decoder_layers=1,
                      encoder_layers=1, d_ff=32, dropout_p=0.0, max_positions=16)
    model = TranscriptionModel(cfg, seed=11)
    src, tgt = random_ids(5, 259), random_ids(4, 259)
    before = model.forward(src, tgt).data.copy()
    resize_embeddings(model, 265)
    after = model.forward(src, tgt).data
    np.testing.assert_array_equal(before, after[:, :259])


def test_resize_same_size_is_identity():
    model = TranscriptionModel(tiny_config(), seed=12)
    emb = model.embedding
    assert resize_embeddings(model, 30) is model
    assert model.embedding is emb


def test_resize_shrink_rejected():
    model = TranscriptionModel(tiny_config(), seed=13)
    with pytest.raises(ValueError):
        resize_embeddings(model, 29)


def test_resize_is_seed_deterministic():
    a = TranscriptionModel(tiny_config(), seed=14)
    b = TranscriptionModel(tiny_config(), seed=14)
    resize_embeddings(a, 36)
    resize_embeddings(b, 36)
    np.testing.assert_array_equal(a.embedding.data, b.embedding.data)
    np.testing.assert_array_equal(a.out_weight.data, b.out_weight.data)
