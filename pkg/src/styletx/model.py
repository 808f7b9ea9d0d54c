"""Neural pieces of the transfer system.

A sentence is encoded twice: a GRU over its embeddings yields the content
code z, and a text CNN yields the style code y. Target-domain sentences
bypass the CNN and share one learnt style vector. The generator GRU starts
from concat(z, y) and emits a token distribution per step; two text-CNN
classifiers (the adversarial one and the frozen pre-trained style judge)
score sequences, hard or soft.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .corpus import BOS, EOS, PAD, TokenSeq, Vocab, encode
from .optim import AdamState, adam_step, zero_grads

INIT_SCALE = 0.08
LOGIT_CLAMP = 30.0  # keeps sigmoid outputs strictly inside (0, 1) at float64

SOURCE, TARGET = "source", "target"


def _init(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class Batch:
    """Padded id matrix plus true lengths; the unit every model op consumes."""

    ids: np.ndarray       # [B, T] int64
    lengths: np.ndarray   # [B] int64
    domain_tag: str = SOURCE

    @classmethod
    def from_seqs(cls, seqs: Sequence[TokenSeq]) -> "Batch":
        ids = np.stack([s.ids for s in seqs])
        lengths = np.array([s.true_len for s in seqs], dtype=np.int64)
        tags = {s.domain_tag for s in seqs}
        return cls(ids=ids, lengths=lengths, domain_tag=tags.pop() if len(tags) == 1 else SOURCE)

    @classmethod
    def from_sentences(cls, sentences: Sequence[str], vocab: Vocab, max_len: int,
                       domain_tag: str = SOURCE) -> "Batch":
        return cls.from_seqs([encode(s, vocab, max_len, domain_tag) for s in sentences])

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def max_len(self) -> int:
        return int(self.ids.shape[1])


SoftSeq = list  # list of [B, V] distribution tensors, one per step


def _dropout(x: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or p <= 0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return ad.mul(x, Tensor(mask))


def style_rows(y: Tensor, batch_size: int) -> Tensor:
    """A [B, d_y] view of a style code: 1-d vectors broadcast to every row."""
    if y.ndim == 1:
        return ad.broadcast_to(ad.reshape(y, (1, y.shape[0])), (batch_size, y.shape[0]))
    return y


@dataclass
class GruCell:
    w_update: Tensor
    u_update: Tensor
    b_update: Tensor
    w_reset: Tensor
    u_reset: Tensor
    b_reset: Tensor
    w_cand: Tensor
    u_cand: Tensor
    b_cand: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, d_in: int, d_h: int) -> "GruCell":
        return cls(
            w_update=_init(rng, d_in, d_h), u_update=_init(rng, d_h, d_h), b_update=_zeros(d_h),
            w_reset=_init(rng, d_in, d_h), u_reset=_init(rng, d_h, d_h), b_reset=_zeros(d_h),
            w_cand=_init(rng, d_in, d_h), u_cand=_init(rng, d_h, d_h), b_cand=_zeros(d_h),
        )

    @property
    def hidden_dim(self) -> int:
        return self.u_update.shape[0]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = ad.sigmoid(x @ self.w_update + h @ self.u_update + self.b_update)
        r = ad.sigmoid(x @ self.w_reset + h @ self.u_reset + self.b_reset)
        cand = ad.tanh(x @ self.w_cand + ad.mul(r, h) @ self.u_cand + self.b_cand)
        return (1.0 - z) * h + z * cand

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.{k}": getattr(self, k) for k in (
            "w_update", "u_update", "b_update", "w_reset", "u_reset", "b_reset",
            "w_cand", "u_cand", "b_cand")}

    @classmethod
    def from_params(cls, params: dict, prefix: str, trainable: bool = True) -> "GruCell":
        return cls(**{k: Tensor(params[f"{prefix}.{k}"], requires_grad=trainable) for k in (
            "w_update", "u_update", "b_update", "w_reset", "u_reset", "b_reset",
            "w_cand", "u_cand", "b_cand")})


def _masked_unroll(cell: GruCell, emb_steps: Sequence[Tensor], lengths: np.ndarray,
                   h: Tensor) -> list:
    """Run the GRU over per-step embeddings, freezing each row of h once its
    sentence is past true_len. Returns the hidden state after every step."""
    states = []
    for t, x_t in enumerate(emb_steps):
        h_new = cell.step(x_t, h)
        if t < lengths.min():
            h = h_new
        else:
            active = (lengths > t).astype(np.float64)[:, None]
            h = h + Tensor(active) * (h_new - h)
        states.append(h)
    return states


def _hard_emb_steps(embedding: Tensor, ids: np.ndarray) -> list:
    return [ad.take_rows(embedding, ids[:, t]) for t in range(ids.shape[1])]


def _soft_emb_steps(embedding: Tensor, soft: SoftSeq) -> list:
    return [dist @ embedding for dist in soft]


class ContentEncoder:
    """GRU over token embeddings; the last real hidden state is the content code."""

    def __init__(self, embedding: Tensor, cell: GruCell):
        self.embedding = embedding
        self.cell = cell

    def encode(self, x: Union[Batch, SoftSeq], dropout_p: float = 0.0,
               dropout_rng: Optional[np.random.Generator] = None) -> Tensor:
        if isinstance(x, Batch):
            steps = _hard_emb_steps(self.embedding, x.ids[:, : int(x.lengths.max())])
            lengths = x.lengths
        else:
            steps = _soft_emb_steps(self.embedding, x)
            lengths = np.full(len(steps[0].data), len(steps), dtype=np.int64)
        steps = [_dropout(s, dropout_p, dropout_rng) for s in steps]
        batch = steps[0].shape[0]
        h = Tensor(np.zeros((batch, self.cell.hidden_dim)))
        return _masked_unroll(self.cell, steps, lengths, h)[-1]


class StyleEncoder:
    """Text CNN over its own embeddings; concatenated max-over-time maps."""

    def __init__(self, embedding: Tensor, filters: dict, biases: dict):
        self.embedding = embedding
        self.filters = filters   # width -> Tensor[width, d_emb, maps]
        self.biases = biases     # width -> Tensor[maps]

    @classmethod
    def create(cls, rng, vocab_size: int, d_emb: int, widths: Sequence[int], maps: int) -> "StyleEncoder":
        emb = _init(rng, vocab_size, d_emb)
        filters = {w: _init(rng, w, d_emb, maps) for w in widths}
        biases = {w: _zeros(maps) for w in widths}
        return cls(emb, filters, biases)

    @property
    def out_dim(self) -> int:
        return sum(f.shape[2] for f in self.filters.values())

    def encode(self, batch: Batch) -> Tensor:
        emb_seq = ad.take_rows(self.embedding, batch.ids)
        pooled = [ad.relu(ad.conv1d_maxpool(emb_seq, self.filters[w], self.biases[w]))
                  for w in sorted(self.filters)]
        return ad.concat(pooled, axis=1)

    def params(self, prefix: str) -> dict:
        out = {f"{prefix}.embedding": self.embedding}
        for w in sorted(self.filters):
            out[f"{prefix}.conv{w}.weight"] = self.filters[w]
            out[f"{prefix}.conv{w}.bias"] = self.biases[w]
        return out

    @classmethod
    def from_params(cls, params: dict, prefix: str, trainable: bool = True) -> "StyleEncoder":
        widths = sorted(int(k[len(prefix) + 5:-7]) for k in params
                        if k.startswith(f"{prefix}.conv") and k.endswith(".weight"))
        emb = Tensor(params[f"{prefix}.embedding"], requires_grad=trainable)
        filters = {w: Tensor(params[f"{prefix}.conv{w}.weight"], requires_grad=trainable) for w in widths}
        biases = {w: Tensor(params[f"{prefix}.conv{w}.bias"], requires_grad=trainable) for w in widths}
        return cls(emb, filters, biases)


class TextCnnClassifier:
    """Style CNN with a sigmoid head; consumes hard ids or soft sequences."""

    def __init__(self, cnn: StyleEncoder, head_w: Tensor, head_b: Tensor):
        self.cnn = cnn
        self.head_w = head_w
        self.head_b = head_b
        self.frozen = False

    @classmethod
    def create(cls, rng, vocab_size: int, d_emb: int, widths: Sequence[int], maps: int) -> "TextCnnClassifier":
        cnn = StyleEncoder.create(rng, vocab_size, d_emb, widths, maps)
        return cls(cnn, head_w=_init(rng, cnn.out_dim, 1), head_b=_zeros(1))

    @property
    def max_width(self) -> int:
        return max(self.cnn.filters)

    def logit(self, x: Union[Batch, SoftSeq]) -> Tensor:
        if isinstance(x, Batch):
            emb_seq = ad.take_rows(self.cnn.embedding, x.ids)
        else:
            steps = [ad.reshape(e, (e.shape[0], 1, e.shape[1]))
                     for e in _soft_emb_steps(self.cnn.embedding, x)]
            emb_seq = ad.concat(steps, axis=1)
        pooled = [ad.relu(ad.conv1d_maxpool(emb_seq, self.cnn.filters[w], self.cnn.biases[w]))
                  for w in sorted(self.cnn.filters)]
        feats = ad.concat(pooled, axis=1)
        raw = ad.reshape(feats @ self.head_w + self.head_b, (feats.shape[0],))
        return ad.clip(raw, -LOGIT_CLAMP, LOGIT_CLAMP)

    def prob(self, x: Union[Batch, SoftSeq]) -> Tensor:
        return ad.sigmoid(self.logit(x))

    def params(self, prefix: str = "clf") -> dict:
        out = self.cnn.params(f"{prefix}.cnn")
        out[f"{prefix}.head.weight"] = self.head_w
        out[f"{prefix}.head.bias"] = self.head_b
        return out

    def freeze(self) -> None:
        self.frozen = True
        for p in self.params().values():
            p.requires_grad = False

    @classmethod
    def from_params(cls, params: dict, prefix: str = "clf", trainable: bool = False) -> "TextCnnClassifier":
        clf = cls(StyleEncoder.from_params(params, f"{prefix}.cnn", trainable),
                  head_w=Tensor(params[f"{prefix}.head.weight"], requires_grad=trainable),
                  head_b=Tensor(params[f"{prefix}.head.bias"], requires_grad=trainable))
        clf.frozen = not trainable
        return clf


def discriminate(clf: TextCnnClassifier, x: Union[Batch, SoftSeq]) -> Tensor:
    """Probability that each sequence carries the target style, in (0, 1)."""
    return clf.prob(x)


@dataclass
class TransferModel:
    embedding: Tensor          # shared by content encoder and generator
    enc_cell: GruCell
    style_enc: StyleEncoder
    target_style: Tensor       # the learnt style vector shared by the target domain
    gen_cell: GruCell
    out_w: Tensor
    out_b: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, vocab_size: int, d_emb: int, d_z: int,
               d_y: int, style_widths: Sequence[int] = (1, 2, 3, 4, 5)) -> "TransferModel":
        if d_y % len(style_widths):
            raise ValueError(f"d_y={d_y} not divisible by {len(style_widths)} filter widths")
        maps = d_y // len(style_widths)
        return cls(
            embedding=_init(rng, vocab_size, d_emb),
            enc_cell=GruCell.create(rng, d_emb, d_z),
            style_enc=StyleEncoder.create(rng, vocab_size, d_emb, style_widths, maps),
            target_style=_init(rng, d_y),
            gen_cell=GruCell.create(rng, d_emb, d_z + d_y),
            out_w=_init(rng, d_z + d_y, vocab_size),
            out_b=_zeros(vocab_size),
        )

    # --- dims -------------------------------------------------------------
    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def d_z(self) -> int:
        return self.enc_cell.hidden_dim

    @property
    def d_y(self) -> int:
        return self.target_style.shape[0]

    @property
    def content_encoder(self) -> ContentEncoder:
        return ContentEncoder(self.embedding, self.enc_cell)

    # --- encoders ---------------------------------------------------------
    def encode_content(self, x: Union[Batch, SoftSeq], dropout_p: float = 0.0,
                       dropout_rng=None) -> Tensor:
        return self.content_encoder.encode(x, dropout_p, dropout_rng)

    def encode_style(self, batch: Batch, domain_tag: Optional[str] = None) -> Tensor:
        """Dispatch on domain: source sentences get the CNN code, target
        sentences all share the single learnt vector (the same object)."""
        tag = domain_tag if domain_tag is not None else batch.domain_tag
        if tag == TARGET:
            return self.target_style
        return self.style_enc.encode(batch)

    # --- decoding ---------------------------------------------------------
    def decode_teacher_forced(self, z: Tensor, y: Tensor, batch: Batch,
                              dropout_p: float = 0.0, dropout_rng=None) -> Tensor:
        """Per-sentence negative log-likelihood of the gold tokens, summed
        over positions up to true_len, conditioning on gold prefixes."""
        b = len(batch)
        t_eff = int(batch.lengths.max())
        h = ad.concat([z, style_rows(y, b)], axis=1)
        prev = np.concatenate([np.full((b, 1), BOS, dtype=np.int64), batch.ids[:, : t_eff - 1]], axis=1)
        states = _masked_unroll(self.gen_cell, [
            _dropout(e, dropout_p, dropout_rng) for e in _hard_emb_steps(self.embedding, prev)
        ], batch.lengths, h)
        stacked = ad.concat([ad.reshape(s, (b, 1, s.shape[1])) for s in states], axis=1)
        flat = ad.reshape(stacked, (b * t_eff, stacked.shape[2]))
        probs = ad.softmax(flat @ self.out_w + self.out_b, temperature=1.0)
        gold = ad.take_along_last(ad.reshape(probs, (b, t_eff, self.vocab_size)),
                                  batch.ids[:, :t_eff])
        mask = (np.arange(t_eff)[None, :] < batch.lengths[:, None]).astype(np.float64)
        logp = ad.mul(ad.log(ad.clip(gold, 1e-12, 1.0)), Tensor(mask))
        return ad.neg(ad.sum_(logp, axis=1))

    def generate_soft(self, z: Tensor, y: Tensor, max_len: int, temperature: float,
                      dropout_p: float = 0.0, dropout_rng=None) -> SoftSeq:
        """Free-running decode emitting a distribution per step; each step
        feeds the distribution's expected embedding back in."""
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        b = z.shape[0]
        h = ad.concat([z, style_rows(y, b)], axis=1)
        x = ad.take_rows(self.embedding, np.full(b, BOS, dtype=np.int64))
        steps: SoftSeq = []
        for _ in range(max_len):
            h = self.gen_cell.step(_dropout(x, dropout_p, dropout_rng), h)
            dist = ad.softmax(h @ self.out_w + self.out_b, temperature=temperature)
            steps.append(dist)
            x = dist @ self.embedding
        return steps

    def generate_greedy(self, z: Tensor, y: Tensor, max_len: int) -> Batch:
        """Argmax decode, cut at the first end-of-sentence token. Ties break
        toward the lowest token id."""
        with no_grad():
            b = z.shape[0]
            h = ad.concat([z.detach(), style_rows(y.detach(), b)], axis=1)
            x = ad.take_rows(self.embedding, np.full(b, BOS, dtype=np.int64))
            ids = np.full((b, max_len), PAD, dtype=np.int64)
            done = np.zeros(b, dtype=bool)
            lengths = np.full(b, max_len, dtype=np.int64)
            for t in range(max_len):
                h = self.gen_cell.step(x, h)
                logits = (h @ self.out_w + self.out_b).data
                tok = logits.argmax(axis=1)
                tok[done] = PAD
                ids[:, t] = tok
                hit = (~done) & (tok == EOS)
                lengths[hit] = t + 1
                done |= hit
                x = ad.take_rows(self.embedding, tok)
            ids[~done, max_len - 1] = EOS  # no end token emitted: close at the cap
        return Batch(ids=ids, lengths=lengths, domain_tag=TARGET)

    # --- parameter bookkeeping ---------------------------------------------
    def param_groups(self) -> dict:
        return {
            "content_enc": {"embedding": self.embedding, **self.enc_cell.params("enc")},
            "style_enc": {**self.style_enc.params("style"), "target_style": self.target_style},
            "generator": {**self.gen_cell.params("gen"), "out.weight": self.out_w, "out.bias": self.out_b},
        }

    def params(self) -> dict:
        flat: dict = {}
        for group in self.param_groups().values():
            flat.update(group)
        return flat

    @classmethod
    def from_params(cls, params: dict) -> "TransferModel":
        return cls(
            embedding=Tensor(params["embedding"], requires_grad=True),
            enc_cell=GruCell.from_params(params, "enc"),
            style_enc=StyleEncoder.from_params(params, "style"),
            target_style=Tensor(params["target_style"], requires_grad=True),
            gen_cell=GruCell.from_params(params, "gen"),
            out_w=Tensor(params["out.weight"], requires_grad=True),
            out_b=Tensor(params["out.bias"], requires_grad=True),
        )


def snapshot(params: dict) -> dict:
    return {k: p.data.copy() for k, p in params.items()}


def transfer_sentences(model: TransferModel, vocab: Vocab, sentences: Sequence[str],
                       pad_len: int, batch_size: int = 256) -> list:
    """Greedy-transfer each sentence into the target style, order preserved."""
    from .corpus import decode_to_text

    out: list = []
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo: lo + batch_size]
        batch = Batch.from_sentences(chunk, vocab, pad_len, SOURCE)
        with no_grad():
            z = model.encode_content(batch)
        gen = model.generate_greedy(z, model.target_style, pad_len)
        out.extend(decode_to_text(gen.ids[i], vocab) for i in range(len(chunk)))
    return out


def _seq_for_classifier(text: str, vocab: Vocab, pad_len: int) -> TokenSeq:
    if text.strip():
        return encode(text, vocab, pad_len, TARGET)
    # an empty generation still needs a classifiable shape: end token only
    ids = np.full(pad_len, PAD, dtype=np.int64)
    ids[0] = EOS
    return TokenSeq(ids=ids, true_len=1, domain_tag=TARGET)


def classify_texts(clf: TextCnnClassifier, vocab: Vocab, texts: Sequence[str],
                   pad_len: int, batch_size: int = 512) -> np.ndarray:
    """0/1 prediction per text: does the classifier call it target-styled."""
    preds = []
    for lo in range(0, len(texts), batch_size):
        seqs = [_seq_for_classifier(t, vocab, pad_len) for t in texts[lo: lo + batch_size]]
        with no_grad():
            p = clf.prob(Batch.from_seqs(seqs)).data
        preds.append(p > 0.5)
    return np.concatenate(preds).astype(np.float64)


# ---------------------------------------------------------------------------
# classifier pretraining


@dataclass
class ClassifierConfig:
    d_emb: int = 32
    widths: tuple = (2, 3, 4, 5)
    maps: int = 8
    epochs: int = 12
    lr: float = 2e-3
    batch_size: int = 32


def train_binary_classifier(train_seqs: Sequence[TokenSeq], train_labels: Sequence[float],
                            heldout_seqs: Sequence[TokenSeq], heldout_labels: Sequence[float],
                            vocab_size: int, cfg: ClassifierConfig, seed: int) -> tuple:
    """Binary cross-entropy training of a text CNN; returns the frozen
    classifier and its held-out accuracy."""
    if not train_seqs or not heldout_seqs:
        raise ValueError("classifier training needs non-empty train and held-out sets")
    rng = np.random.default_rng(seed)
    clf = TextCnnClassifier.create(rng, vocab_size, cfg.d_emb, cfg.widths, cfg.maps)
    params = clf.params()
    state = AdamState()
    labels = np.asarray(train_labels, dtype=np.float64)
    n = len(train_seqs)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo: lo + cfg.batch_size]
            batch = Batch.from_seqs([train_seqs[i] for i in idx])
            ybat = Tensor(labels[idx])
            tape = ad.Tape()
            with ad.recording(tape):
                p = ad.clip(clf.prob(batch), 1e-7, 1 - 1e-7)
                loss = ad.neg(ad.mean_(ybat * ad.log(p) + (1.0 - ybat) * ad.log(1.0 - p)))
                ad.backward(loss, tape)
            adam_step(params, state, cfg.lr)
            zero_grads(params)
            tape.clear()
    acc = classifier_accuracy(clf, heldout_seqs, heldout_labels)
    clf.freeze()
    return clf, acc


def classifier_accuracy(clf: TextCnnClassifier, seqs: Sequence[TokenSeq],
                        labels: Sequence[float]) -> float:
    with no_grad():
        p = clf.prob(Batch.from_seqs(list(seqs))).data
    predicted = (p > 0.5).astype(np.float64)
    return float((predicted == np.asarray(labels, dtype=np.float64)).mean())


def pretrain_style_judge(train_seqs, train_labels, heldout_seqs, heldout_labels,
                         vocab_size: int, cfg: Optional[ClassifierConfig] = None,
                         seed: int = 0) -> tuple:
    """The pre-trained, then frozen, probability-of-target-style classifier.

    Trained before the transfer model on its own data part and never
    updated afterwards; label 1 means the sentence has the target style.
    """
    cfg = cfg or ClassifierConfig()
    return train_binary_classifier(train_seqs, train_labels, heldout_seqs, heldout_labels,
                                   vocab_size, cfg, seed)
