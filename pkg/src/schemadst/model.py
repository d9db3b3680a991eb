"""Shared encoder with five task heads, trained by explicit backprop.

The encoder is a small post-layer-norm transformer over token, position and
segment embeddings with a tanh pooler on the first position. Four
classification heads read the pooled vector (active intent, slot requested,
slot status, categorical value match); a span head projects every token state
to start/end logits. All dense algebra is numpy matmuls; the elementwise hot
spots go through the switchable kernel backend.

Loss masking contract: every example carries exactly one active task, its
cross entropy is averaged over the batch, and the gradient contribution of
each example to every other head is exactly zero (zero rows through matmuls,
never a multiplied-out approximation).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import kernels
from .errors import ConfigError, ValidationError
from .examples import N_TASKS, QAExample, TaskKind
from .tokenization import SubwordTokenizer

CHECKPOINT_FORMAT_VERSION = 1
NEG_INF = -1e9

# (head name, task, number of classes) for the pooled classification heads
CLS_HEADS = (
    ("intent", TaskKind.INTENT, 2),
    ("requested", TaskKind.REQUESTED, 2),
    ("status", TaskKind.STATUS, 3),
    ("cat_value", TaskKind.CAT_VALUE, 2),
)


@dataclass
class ModelConfig:
    vocab_size: int
    max_seq_len: int = 128
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@runtime_checkable
class EncoderProtocol(Protocol):
    """Anything producing per-token states and a pooled vector can plug in."""

    def forward(self, token_ids, segment_ids, valid_lens, train=False, rng=None):
        """Returns (token_states [B,T,d], pooled [B,d], cache)."""
        ...


def _linear(x, w, b):
    d = x.shape[-1]
    y = x.reshape(-1, d) @ w + b
    return y.reshape(x.shape[:-1] + (w.shape[1],))


def _linear_backward(dy, x, w):
    din, dout = w.shape
    dy2 = dy.reshape(-1, dout)
    x2 = x.reshape(-1, din)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


class ToyTransformerEncoder:
    LN_EPS = 1e-12

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.config
        dt = cfg.np_dtype
        rng = np.random.default_rng(cfg.seed)

        def w(*shape):
            return rng.normal(0.0, 0.02, size=shape).astype(dt)

        def zeros(*shape):
            return np.zeros(shape, dtype=dt)

        p = {
            "tok_emb": w(cfg.vocab_size, cfg.d_model),
            "pos_emb": w(cfg.max_seq_len, cfg.d_model),
            "seg_emb": w(2, cfg.d_model),
            "emb_ln_g": np.ones(cfg.d_model, dtype=dt),
            "emb_ln_b": zeros(cfg.d_model),
        }
        for i in range(cfg.n_layers):
            pre = f"l{i}."
            # query and key start as the same map: attention initially scores
            # token similarity, which seeds the cross-segment matching circuit
            wqk = w(cfg.d_model, cfg.d_model)
            p[pre + "wq"] = wqk
            p[pre + "bq"] = zeros(cfg.d_model)
            p[pre + "wk"] = wqk.copy()
            p[pre + "bk"] = zeros(cfg.d_model)
            # near-identity value/output paths let early attention forward the
            # matched token's embedding almost verbatim into the residual stream
            eye = np.eye(cfg.d_model, dtype=dt)
            p[pre + "wv"] = eye + w(cfg.d_model, cfg.d_model)
            p[pre + "bv"] = zeros(cfg.d_model)
            p[pre + "wo"] = eye + w(cfg.d_model, cfg.d_model)
            p[pre + "bo"] = zeros(cfg.d_model)
            p[pre + "ln1_g"] = np.ones(cfg.d_model, dtype=dt)
            p[pre + "ln1_b"] = zeros(cfg.d_model)
            p[pre + "w1"] = w(cfg.d_model, cfg.d_ff)
            p[pre + "b1"] = zeros(cfg.d_ff)
            p[pre + "w2"] = w(cfg.d_ff, cfg.d_model)
            p[pre + "b2"] = zeros(cfg.d_model)
            p[pre + "ln2_g"] = np.ones(cfg.d_model, dtype=dt)
            p[pre + "ln2_b"] = zeros(cfg.d_model)
        # fan-in scaling keeps the pooler responsive when training from scratch
        p["pool_w"] = (rng.normal(0.0, 1.0, size=(cfg.d_model, cfg.d_model))
                       / np.sqrt(cfg.d_model)).astype(dt)
        p["pool_b"] = zeros(cfg.d_model)
        return p

    def _dropout_mask(self, shape, rng):
        keep = 1.0 - self.config.dropout
        mask = (rng.random(shape) < keep).astype(self.config.np_dtype)
        mask /= keep
        return mask

    def forward(self, token_ids, segment_ids, valid_lens, train=False, rng=None):
        cfg = self.config
        p = self.params
        ids = np.asarray(token_ids, dtype=np.int64)
        segs = np.asarray(segment_ids, dtype=np.int64)
        valid = np.asarray(valid_lens, dtype=np.int64)
        b, t = ids.shape
        if t > cfg.max_seq_len:
            raise ValidationError(f"sequence length {t} exceeds max_seq_len={cfg.max_seq_len}")
        use_dropout = train and cfg.dropout > 0.0
        if use_dropout and rng is None:
            raise ValueError("training forward with dropout requires an rng")

        emb_sum = p["tok_emb"][ids] + p["pos_emb"][:t] + p["seg_emb"][segs]
        x, emb_mean, emb_rstd = kernels.layer_norm_forward(
            emb_sum, p["emb_ln_g"], p["emb_ln_b"], self.LN_EPS
        )
        emb_mask = None
        if use_dropout:
            emb_mask = self._dropout_mask(x.shape, rng)
            x = x * emb_mask

        cache = {
            "ids": ids, "segs": segs, "valid": valid, "t": t,
            "emb_sum": emb_sum, "emb_mean": emb_mean, "emb_rstd": emb_rstd,
            "emb_mask": emb_mask, "layers": [],
        }

        n_heads = cfg.n_heads
        dh = cfg.d_model // n_heads
        inv_scale = 1.0 / np.sqrt(dh)
        for i in range(cfg.n_layers):
            pre = f"l{i}."
            x_in = x
            q = _linear(x_in, p[pre + "wq"], p[pre + "bq"])
            k = _linear(x_in, p[pre + "wk"], p[pre + "bk"])
            v = _linear(x_in, p[pre + "wv"], p[pre + "bv"])
            qh = q.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3)
            kh = k.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3)
            vh = v.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3)
            scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * inv_scale
            probs = kernels.attention_softmax(scores, valid)
            attn_mask = None
            probs_used = probs
            if use_dropout:
                attn_mask = self._dropout_mask(probs.shape, rng)
                probs_used = probs * attn_mask
            ctx = np.matmul(probs_used, vh)
            ctx2 = ctx.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            attn_out = _linear(ctx2, p[pre + "wo"], p[pre + "bo"])
            out_mask = None
            if use_dropout:
                out_mask = self._dropout_mask(attn_out.shape, rng)
                attn_out = attn_out * out_mask
            res1 = x_in + attn_out
            x1, mean1, rstd1 = kernels.layer_norm_forward(
                res1, p[pre + "ln1_g"], p[pre + "ln1_b"], self.LN_EPS
            )
            h1 = _linear(x1, p[pre + "w1"], p[pre + "b1"])
            g1 = kernels.gelu_forward(h1)
            h2 = _linear(g1, p[pre + "w2"], p[pre + "b2"])
            ff_mask = None
            if use_dropout:
                ff_mask = self._dropout_mask(h2.shape, rng)
                h2 = h2 * ff_mask
            res2 = x1 + h2
            x, mean2, rstd2 = kernels.layer_norm_forward(
                res2, p[pre + "ln2_g"], p[pre + "ln2_b"], self.LN_EPS
            )
            cache["layers"].append({
                "x_in": x_in, "qh": qh, "kh": kh, "vh": vh,
                "probs": probs, "probs_used": probs_used, "attn_mask": attn_mask,
                "ctx2": ctx2, "out_mask": out_mask,
                "res1": res1, "x1": x1, "mean1": mean1, "rstd1": rstd1,
                "h1": h1, "g1": g1, "ff_mask": ff_mask,
                "res2": res2, "mean2": mean2, "rstd2": rstd2,
            })

        h0 = x[:, 0]
        pool_pre = h0 @ p["pool_w"] + p["pool_b"]
        pooled = np.tanh(pool_pre)
        cache["hidden"] = x
        cache["h0"] = h0
        cache["pooled"] = pooled
        return x, pooled, cache

    def backward(self, cache, dhidden, dpooled):
        cfg = self.config
        p = self.params
        grads: dict[str, np.ndarray] = {}
        b, t = cache["ids"].shape
        n_heads = cfg.n_heads
        dh = cfg.d_model // n_heads
        inv_scale = 1.0 / np.sqrt(dh)

        dpool_pre = dpooled * (1.0 - np.square(cache["pooled"]))
        grads["pool_w"] = cache["h0"].T @ dpool_pre
        grads["pool_b"] = dpool_pre.sum(axis=0)
        dx = dhidden.copy()
        dx[:, 0] += dpool_pre @ p["pool_w"].T

        for i in range(cfg.n_layers - 1, -1, -1):
            pre = f"l{i}."
            lc = cache["layers"][i]
            dres2, dg2, db2 = kernels.layer_norm_backward(
                dx, lc["res2"], p[pre + "ln2_g"], lc["mean2"], lc["rstd2"]
            )
            grads[pre + "ln2_g"] = dg2
            grads[pre + "ln2_b"] = db2
            dx1 = dres2
            dh2 = dres2 if lc["ff_mask"] is None else dres2 * lc["ff_mask"]
            dg1, grads[pre + "w2"], grads[pre + "b2"] = _linear_backward(
                dh2, lc["g1"], p[pre + "w2"]
            )
            dh1 = kernels.gelu_backward(dg1, lc["h1"])
            dx1_ff, grads[pre + "w1"], grads[pre + "b1"] = _linear_backward(
                dh1, lc["x1"], p[pre + "w1"]
            )
            dx1 = dx1 + dx1_ff
            dres1, dg1n, db1n = kernels.layer_norm_backward(
                dx1, lc["res1"], p[pre + "ln1_g"], lc["mean1"], lc["rstd1"]
            )
            grads[pre + "ln1_g"] = dg1n
            grads[pre + "ln1_b"] = db1n
            dattn = dres1 if lc["out_mask"] is None else dres1 * lc["out_mask"]
            dctx2, grads[pre + "wo"], grads[pre + "bo"] = _linear_backward(
                dattn, lc["ctx2"], p[pre + "wo"]
            )
            dctx = dctx2.reshape(b, t, n_heads, dh).transpose(0, 2, 1, 3)
            dprobs_used = np.matmul(dctx, lc["vh"].transpose(0, 1, 3, 2))
            dvh = np.matmul(lc["probs_used"].transpose(0, 1, 3, 2), dctx)
            dprobs = dprobs_used if lc["attn_mask"] is None else dprobs_used * lc["attn_mask"]
            dscores = kernels.attention_softmax_backward(dprobs, lc["probs"])
            dqh = np.matmul(dscores, lc["kh"]) * inv_scale
            dkh = np.matmul(dscores.transpose(0, 1, 3, 2), lc["qh"]) * inv_scale
            dq = dqh.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            dk = dkh.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            dv = dvh.transpose(0, 2, 1, 3).reshape(b, t, cfg.d_model)
            dx_q, grads[pre + "wq"], grads[pre + "bq"] = _linear_backward(
                dq, lc["x_in"], p[pre + "wq"]
            )
            dx_k, grads[pre + "wk"], grads[pre + "bk"] = _linear_backward(
                dk, lc["x_in"], p[pre + "wk"]
            )
            dx_v, grads[pre + "wv"], grads[pre + "bv"] = _linear_backward(
                dv, lc["x_in"], p[pre + "wv"]
            )
            dx = dres1 + dx_q + dx_k + dx_v

        if cache["emb_mask"] is not None:
            dx = dx * cache["emb_mask"]
        demb, grads["emb_ln_g"], grads["emb_ln_b"] = kernels.layer_norm_backward(
            dx, cache["emb_sum"], p["emb_ln_g"], cache["emb_mean"], cache["emb_rstd"]
        )
        grads["tok_emb"] = np.zeros_like(p["tok_emb"])
        np.add.at(grads["tok_emb"], cache["ids"], demb)
        grads["pos_emb"] = np.zeros_like(p["pos_emb"])
        grads["pos_emb"][:t] = demb.sum(axis=0)
        grads["seg_emb"] = np.zeros_like(p["seg_emb"])
        np.add.at(grads["seg_emb"], cache["segs"], demb)
        return grads


class NluModel:
    """Encoder plus task heads, presenting batched forward/loss/grad APIs."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            self.encoder = ToyTransformerEncoder(config)
            self.params = self.encoder.params
            self._init_head_params()
        else:
            self.params = params
            self.encoder = ToyTransformerEncoder(config, params)

    def _init_head_params(self):
        cfg = self.config
        dt = cfg.np_dtype
        rng = np.random.default_rng(cfg.seed + 1)

        def w(fan_in, fan_out):
            # fan-in scaled: a 0.02-std stack of three linears starts with
            # activations ~1e-5 and never ignites without pretraining
            return (rng.normal(0.0, 1.0, size=(fan_in, fan_out)) / np.sqrt(fan_in)).astype(dt)

        for name, _task, n_out in CLS_HEADS:
            pre = f"head.{name}."
            self.params[pre + "w1"] = w(cfg.d_model, cfg.d_model)
            self.params[pre + "b1"] = np.zeros(cfg.d_model, dtype=dt)
            self.params[pre + "w2"] = w(cfg.d_model, cfg.d_model)
            self.params[pre + "b2"] = np.zeros(cfg.d_model, dtype=dt)
            self.params[pre + "w3"] = w(cfg.d_model, n_out)
            self.params[pre + "b3"] = np.zeros(n_out, dtype=dt)
        self.params["span.w"] = w(cfg.d_model, 2)
        self.params["span.b"] = np.zeros(2, dtype=dt)

    def _head_forward(self, name, pooled):
        p = self.params
        pre = f"head.{name}."
        a1 = pooled @ p[pre + "w1"] + p[pre + "b1"]
        t1 = np.tanh(a1)
        a2 = t1 @ p[pre + "w2"] + p[pre + "b2"]
        g2 = kernels.gelu_forward(a2)
        logits = g2 @ p[pre + "w3"] + p[pre + "b3"]
        return logits, (pooled, a1, t1, a2, g2)

    def _head_backward(self, name, hcache, dlogits, grads):
        p = self.params
        pre = f"head.{name}."
        pooled, a1, t1, a2, g2 = hcache
        grads[pre + "w3"] = g2.T @ dlogits
        grads[pre + "b3"] = dlogits.sum(axis=0)
        dg2 = dlogits @ p[pre + "w3"].T
        da2 = kernels.gelu_backward(dg2, a2)
        grads[pre + "w2"] = t1.T @ da2
        grads[pre + "b2"] = da2.sum(axis=0)
        dt1 = da2 @ p[pre + "w2"].T
        da1 = dt1 * (1.0 - np.square(t1))
        grads[pre + "w1"] = pooled.T @ da1
        grads[pre + "b1"] = da1.sum(axis=0)
        return da1 @ p[pre + "w1"].T

    def forward(self, batch, train=False, rng=None):
        """All head outputs for every row; padded span positions get -1e9."""
        hidden, pooled, enc_cache = self.encoder.forward(
            batch["token_ids"], batch["segment_ids"], batch["valid_lens"],
            train=train, rng=rng,
        )
        out = {"hidden": hidden, "pooled": pooled}
        head_caches = {}
        for name, _task, _n in CLS_HEADS:
            out[name], head_caches[name] = self._head_forward(name, pooled)
        span = _linear(hidden, self.params["span.w"], self.params["span.b"])
        b, t = hidden.shape[:2]
        pad = np.arange(t)[None, :] >= np.asarray(batch["valid_lens"])[:, None]
        span[pad] = NEG_INF
        out["span_start"] = span[:, :, 0]
        out["span_end"] = span[:, :, 1]
        cache = {"enc": enc_cache, "heads": head_caches, "hidden": hidden, "pad": pad}
        return out, cache

    def loss_and_grads(self, batch, train=True, rng=None):
        """Mean per-example loss of each example's active head, with grads."""
        out, cache = self.forward(batch, train=train, rng=rng)
        tasks = np.asarray(batch["tasks"])
        b = tasks.shape[0]
        t = out["span_start"].shape[1]
        dt = self.config.np_dtype
        per_example = np.zeros(b, dtype=dt)

        dlogits_by_head = {}
        for name, task, n_out in CLS_HEADS:
            dlogits = np.zeros((b, n_out), dtype=dt)
            rows = np.nonzero(tasks == int(task))[0]
            if rows.size:
                labels = np.asarray(batch["labels"])[rows]
                loss_rows, dl = kernels.softmax_xent(
                    np.ascontiguousarray(out[name][rows]), labels
                )
                per_example[rows] = loss_rows
                dlogits[rows] = dl / b
            dlogits_by_head[name] = dlogits

        dspan = np.zeros((b, t, 2), dtype=dt)
        rows = np.nonzero(tasks == int(TaskKind.SPAN))[0]
        if rows.size:
            starts = np.asarray(batch["span_starts"])[rows]
            ends = np.asarray(batch["span_ends"])[rows]
            loss_s, dls = kernels.softmax_xent(
                np.ascontiguousarray(out["span_start"][rows]), starts
            )
            loss_e, dle = kernels.softmax_xent(
                np.ascontiguousarray(out["span_end"][rows]), ends
            )
            per_example[rows] = 0.5 * (loss_s + loss_e)
            dspan[rows, :, 0] = dls / (2 * b)
            dspan[rows, :, 1] = dle / (2 * b)

        loss = float(per_example.mean())

        grads: dict[str, np.ndarray] = {}
        dpooled = np.zeros_like(out["pooled"])
        for name, _task, _n in CLS_HEADS:
            dpooled += self._head_backward(
                name, cache["heads"][name], dlogits_by_head[name], grads
            )
        dhidden, grads["span.w"], grads["span.b"] = _linear_backward(
            dspan, cache["hidden"], self.params["span.w"]
        )
        grads.update(self.encoder.backward(cache["enc"], dhidden, dpooled))
        return loss, grads, per_example

    def predict_batch(self, batch):
        """Per-row softmax scores of each row's active head (eval mode)."""
        out, _ = self.forward(batch, train=False)
        tasks = np.asarray(batch["tasks"])
        results: list[dict] = [None] * tasks.shape[0]
        for name, task, _n in CLS_HEADS:
            rows = np.nonzero(tasks == int(task))[0]
            if not rows.size:
                continue
            logits = out[name][rows]
            shifted = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(shifted)
            probs = e / e.sum(axis=-1, keepdims=True)
            for j, r in enumerate(rows):
                results[r] = {"task": TaskKind(int(task)), "probs": probs[j]}
        rows = np.nonzero(tasks == int(TaskKind.SPAN))[0]
        for r in rows:
            results[r] = {
                "task": TaskKind.SPAN,
                "start_logits": out["span_start"][r],
                "end_logits": out["span_end"][r],
            }
        return results


def pad_batch(examples: list[QAExample], pad_id: int, pad_to: int | None = None) -> dict:
    """Stack examples into dense arrays, padding to the longest row.

    `pad_to` forces extra padding columns; predictions at valid positions do
    not depend on it.
    """
    t = max(ex.valid_length for ex in examples)
    if pad_to is not None:
        t = max(t, pad_to)
    b = len(examples)
    token_ids = np.full((b, t), pad_id, dtype=np.int64)
    segment_ids = np.zeros((b, t), dtype=np.int64)
    valid = np.zeros(b, dtype=np.int64)
    tasks = np.zeros(b, dtype=np.int64)
    labels = np.zeros(b, dtype=np.int64)
    span_s = np.zeros(b, dtype=np.int64)
    span_e = np.zeros(b, dtype=np.int64)
    for i, ex in enumerate(examples):
        n = ex.valid_length
        token_ids[i, :n] = ex.token_ids
        segment_ids[i, :n] = ex.segment_ids
        valid[i] = n
        tasks[i] = int(ex.task)
        if ex.task == TaskKind.SPAN:
            span_s[i], span_e[i] = ex.label
        else:
            labels[i] = ex.label
    return {
        "token_ids": token_ids, "segment_ids": segment_ids, "valid_lens": valid,
        "tasks": tasks, "labels": labels, "span_starts": span_s, "span_ends": span_e,
    }


def save_checkpoint(
    path: str | Path,
    model: NluModel,
    vocab: list[str],
    extra: dict | None = None,
) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "vocab": vocab,
        "extra": extra or {},
    }
    arrays = {"param::" + k: v for k, v in model.params.items()}
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[NluModel, SubwordTokenizer, dict]:
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"][()]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValidationError(
                f"checkpoint format {meta.get('format_version')!r} not supported"
            )
        params = {
            k[len("param::"):]: npz[k] for k in npz.files if k.startswith("param::")
        }
    config = ModelConfig(**meta["model_config"])
    model = NluModel(config, params=params)
    tokenizer = SubwordTokenizer(meta["vocab"])
    return model, tokenizer, meta.get("extra", {})
