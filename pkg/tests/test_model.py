import numpy as np
import pytest
from scipy.special import log_softmax

from schemadst.errors import ConfigError, ValidationError
from schemadst.examples import NO_SPAN, QAExample, TaskKind
from schemadst.model import (
    CLS_HEADS,
    NEG_INF,
    EncoderProtocol,
    ModelConfig,
    NluModel,
    load_checkpoint,
    pad_batch,
    save_checkpoint,
)

VOCAB_SIZE = 12


def tiny_config(**kw):
    base = dict(
        vocab_size=VOCAB_SIZE, max_seq_len=10, d_model=8, n_layers=1,
        n_heads=2, d_ff=16, dropout=0.0, dtype="float64", seed=3,
    )
    base.update(kw)
    return ModelConfig(**base)


def make_example(task, token_ids, n_seq1, label):
    segs = [0] * n_seq1 + [1] * (len(token_ids) - n_seq1)
    return QAExample(
        task=task, tokens=[f"t{i}" for i in token_ids], token_ids=list(token_ids),
        segment_ids=segs, label=label, service="s", element="e",
        dialogue_id="d", turn_index=0,
    )


def tiny_batch(pad_to=None):
    examples = [
        make_example(TaskKind.INTENT, [2, 5, 3, 6, 7, 3], 3, 1),
        make_example(TaskKind.STATUS, [2, 4, 3, 8, 3], 3, 2),
        make_example(TaskKind.SPAN, [2, 5, 3, 6, 9, 7, 3], 3, (4, 5)),
        make_example(TaskKind.REQUESTED, [2, 4, 3, 9, 3], 3, 0),
        make_example(TaskKind.CAT_VALUE, [2, 5, 6, 3, 7, 3], 4, 1),
    ]
    return examples, pad_batch(examples, pad_id=0, pad_to=pad_to)


# ---------------------------------------------------------------------------
# config and padding

def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(d_model=10, n_heads=4)
    with pytest.raises(ConfigError):
        tiny_config(dtype="float16")
    with pytest.raises(ConfigError):
        tiny_config(dropout=1.0)


def test_pad_batch_layout():
    examples, batch = tiny_batch()
    b = len(examples)
    t = max(ex.valid_length for ex in examples)
    assert batch["token_ids"].shape == (b, t)
    for i, ex in enumerate(examples):
        n = ex.valid_length
        assert batch["valid_lens"][i] == n
        assert list(batch["token_ids"][i, :n]) == ex.token_ids
        assert np.all(batch["token_ids"][i, n:] == 0)
        assert np.all(batch["segment_ids"][i, n:] == 0)
        assert batch["tasks"][i] == int(ex.task)
        if ex.task == TaskKind.SPAN:
            assert (batch["span_starts"][i], batch["span_ends"][i]) == ex.label
        else:
            assert batch["labels"][i] == ex.label
    assert pad_batch(examples, pad_id=0, pad_to=9)["token_ids"].shape[1] == 9


# ---------------------------------------------------------------------------
# forward

def test_forward_shapes_and_pad_masking():
    model = NluModel(tiny_config())
    examples, batch = tiny_batch()
    out, _ = model.forward(batch)
    b = len(examples)
    t = batch["token_ids"].shape[1]
    d = model.config.d_model
    assert out["intent"].shape == out["requested"].shape == (b, 2)
    assert out["cat_value"].shape == (b, 2)
    assert out["status"].shape == (b, 3)
    assert out["span_start"].shape == out["span_end"].shape == (b, t)
    assert out["hidden"].shape == (b, t, d)
    assert out["pooled"].shape == (b, d)
    assert np.all(np.abs(out["pooled"]) < 1.0)  # tanh pooler
    for i in range(b):
        n = batch["valid_lens"][i]
        assert np.all(out["span_start"][i, n:] == NEG_INF)
        assert np.all(out["span_end"][i, n:] == NEG_INF)
        assert np.all(out["span_start"][i, :n] > NEG_INF)


def test_padding_does_not_change_valid_outputs():
    model = NluModel(tiny_config())
    _, batch = tiny_batch()
    _, wide = tiny_batch(pad_to=10)
    out, _ = model.forward(batch)
    out_w, _ = model.forward(wide)
    t = batch["token_ids"].shape[1]
    for key in ("intent", "requested", "status", "cat_value", "pooled"):
        np.testing.assert_allclose(out_w[key], out[key], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(out_w["span_start"][:, :t], out["span_start"],
                               rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(out_w["hidden"][:, :t], out["hidden"],
                               rtol=1e-9, atol=1e-12)


def test_too_long_sequence_rejected():
    model = NluModel(tiny_config(max_seq_len=4))
    _, batch = tiny_batch()
    with pytest.raises(ValidationError):
        model.forward(batch)


def test_init_determinism():
    a = NluModel(tiny_config())
    b = NluModel(tiny_config())
    assert a.params.keys() == b.params.keys()
    for key in a.params:
        assert np.array_equal(a.params[key], b.params[key]), key
    c = NluModel(tiny_config(seed=4))
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_dropout_needs_rng_and_is_stochastic():
    model = NluModel(tiny_config(dropout=0.5, dtype="float32"))
    _, batch = tiny_batch()
    with pytest.raises(ValueError):
        model.forward(batch, train=True)
    out1, _ = model.forward(batch, train=True, rng=np.random.default_rng(0))
    out2, _ = model.forward(batch, train=True, rng=np.random.default_rng(1))
    assert not np.allclose(out1["pooled"], out2["pooled"])
    # eval path ignores dropout entirely
    e1, _ = model.forward(batch)
    e2, _ = model.forward(batch)
    assert np.array_equal(e1["pooled"], e2["pooled"])


# ---------------------------------------------------------------------------
# loss

def test_loss_is_mean_of_active_head_cross_entropies():
    model = NluModel(tiny_config())
    examples, batch = tiny_batch()
    out, _ = model.forward(batch)
    loss, _, per_example = model.loss_and_grads(batch)

    want = np.zeros(len(examples))
    for i, ex in enumerate(examples):
        if ex.task == TaskKind.SPAN:
            s, e = ex.label
            ls = -log_softmax(out["span_start"][i])[s]
            le = -log_softmax(out["span_end"][i])[e]
            want[i] = 0.5 * (ls + le)
        else:
            name = {t: n for n, t, _ in CLS_HEADS}[ex.task]
            want[i] = -log_softmax(out[name][i])[ex.label]
    np.testing.assert_allclose(per_example, want, rtol=1e-9)
    assert loss == pytest.approx(want.mean(), rel=1e-12)


def test_inactive_heads_get_exactly_zero_grads():
    model = NluModel(tiny_config())
    examples = [
        make_example(TaskKind.INTENT, [2, 5, 3, 6, 7, 3], 3, 1),
        make_example(TaskKind.STATUS, [2, 4, 3, 8, 3], 3, 0),
    ]
    batch = pad_batch(examples, pad_id=0)
    _, grads, _ = model.loss_and_grads(batch)
    for name in ("requested", "cat_value"):
        for suffix in ("w1", "b1", "w2", "b2", "w3", "b3"):
            g = grads[f"head.{name}.{suffix}"]
            assert np.all(g == 0.0), f"head.{name}.{suffix}"
    assert np.all(grads["span.w"] == 0.0) and np.all(grads["span.b"] == 0.0)
    for name in ("intent", "status"):
        assert np.any(grads[f"head.{name}.w3"] != 0.0)

    # span-only batch: every pooled head, and the pooler itself, stays silent
    span_batch = pad_batch(
        [make_example(TaskKind.SPAN, [2, 5, 3, 6, 9, 7, 3], 3, (4, 5))] * 2, pad_id=0
    )
    _, grads, _ = model.loss_and_grads(span_batch)
    for name, _, _ in CLS_HEADS:
        assert np.all(grads[f"head.{name}.w3"] == 0.0)
    assert np.all(grads["pool_w"] == 0.0)
    assert np.any(grads["span.w"] != 0.0)
    assert np.any(grads["tok_emb"] != 0.0)


def test_gradcheck_float64():
    """Analytic grads vs central differences on a one-layer float64 model."""
    model = NluModel(tiny_config())
    _, batch = tiny_batch()
    _, grads, _ = model.loss_and_grads(batch, train=False)

    rng = np.random.default_rng(0)
    eps = 1e-6
    worst = 0.0
    for key, arr in model.params.items():
        flat = arr.reshape(-1)
        gflat = grads[key].reshape(-1)
        idx = rng.choice(flat.size, size=min(5, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            hi, _, _ = model.loss_and_grads(batch, train=False)
            flat[i] = old - eps
            lo, _, _ = model.loss_and_grads(batch, train=False)
            flat[i] = old
            num = (hi - lo) / (2 * eps)
            rel = abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_grad_keys_match_param_keys():
    model = NluModel(tiny_config())
    _, batch = tiny_batch()
    _, grads, _ = model.loss_and_grads(batch)
    assert set(grads.keys()) == set(model.params.keys())
    for key in grads:
        assert grads[key].shape == model.params[key].shape, key
        assert grads[key].dtype == model.params[key].dtype, key


# ---------------------------------------------------------------------------
# predictions

def test_predict_batch_routes_by_task():
    model = NluModel(tiny_config())
    examples, batch = tiny_batch()
    preds = model.predict_batch(batch)
    assert len(preds) == len(examples)
    for ex, pred in zip(examples, preds):
        assert pred["task"] == ex.task
        if ex.task == TaskKind.SPAN:
            n = ex.valid_length
            assert np.all(pred["start_logits"][n:] == NEG_INF)
            assert pred["start_logits"].shape == pred["end_logits"].shape
        else:
            probs = pred["probs"]
            assert probs.shape == ((3,) if ex.task == TaskKind.STATUS else (2,))
            assert probs.sum() == pytest.approx(1.0)
            assert np.all(probs >= 0)


# ---------------------------------------------------------------------------
# checkpointing

def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = NluModel(tiny_config(dtype="float32"))
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + [f"w{i}" for i in range(VOCAB_SIZE - 4)]
    path = tmp_path / "model.npz"
    save_checkpoint(path, model, vocab, extra={"epoch": 2, "dev_loss": 0.5})
    loaded, tokenizer, extra = load_checkpoint(path)

    assert loaded.config == model.config
    assert tokenizer.vocab == vocab
    assert extra == {"epoch": 2, "dev_loss": 0.5}
    assert set(loaded.params) == set(model.params)
    for key in model.params:
        assert np.array_equal(loaded.params[key], model.params[key]), key
        assert loaded.params[key].dtype == model.params[key].dtype

    _, batch = tiny_batch()
    out_a, _ = model.forward(batch)
    out_b, _ = loaded.forward(batch)
    assert np.array_equal(out_a["pooled"], out_b["pooled"])
    assert np.array_equal(out_a["span_start"], out_b["span_start"])


def test_checkpoint_version_gate(tmp_path):
    import json

    model = NluModel(tiny_config())
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
    path = tmp_path / "model.npz"
    save_checkpoint(path, model, vocab)
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(str(arrays["__meta__"][()]))
    meta["format_version"] = 999
    arrays["__meta__"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)
    with pytest.raises(ValidationError):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# encoder swapping

class MeanPoolEncoder:
    """Minimal drop-in encoder: embeddings averaged over valid positions."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(99)
        self.emb = rng.normal(0, 0.1, size=(config.vocab_size, config.d_model)).astype(
            config.np_dtype
        )

    def forward(self, token_ids, segment_ids, valid_lens, train=False, rng=None):
        ids = np.asarray(token_ids)
        states = self.emb[ids]
        b, t = ids.shape
        mask = (np.arange(t)[None, :] < np.asarray(valid_lens)[:, None]).astype(states.dtype)
        states = states * mask[:, :, None]
        pooled = states.sum(axis=1) / np.asarray(valid_lens)[:, None]
        return states, pooled, {}


def test_any_encoder_protocol_impl_plugs_in():
    config = tiny_config()
    model = NluModel(config)
    replacement = MeanPoolEncoder(config)
    assert isinstance(replacement, EncoderProtocol)
    model.encoder = replacement

    examples, batch = tiny_batch()
    out, _ = model.forward(batch)
    assert out["intent"].shape == (len(examples), 2)
    preds = model.predict_batch(batch)
    assert all(p is not None for p in preds)
    assert preds[0]["probs"].sum() == pytest.approx(1.0)
