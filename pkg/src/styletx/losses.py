"""The four training losses and their weighted total.

Reconstruction and cycle terms are teacher-forced negative log-likelihoods;
the adversarial term scores soft generations with the in-training
discriminator; the style discrepancy term ties the squared distance between
a source style code and the shared target style vector to the frozen
judge's belief that the sentence already has the target style. Everything
is a batch mean, so the weight defaults transfer across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, no_grad
from .corpus import SpecError
from .model import SOURCE, TARGET, Batch, TextCnnClassifier, TransferModel, style_rows

PROB_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_adv: float = 1.0
    lambda_cyc: float = 1.0
    lambda_dis: float = 5.0

    def __post_init__(self):
        if min(self.lambda_adv, self.lambda_cyc, self.lambda_dis) < 0:
            raise SpecError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    rec: float
    adv: float
    dis: float
    cyc: float
    total: float

    def recompute_total(self, w: LossWeights) -> float:
        return self.rec - w.lambda_adv * self.adv + w.lambda_cyc * self.cyc + w.lambda_dis * self.dis

    @property
    def finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.rec, self.adv, self.dis, self.cyc, self.total))


def _cat_batches(a: Batch, b: Batch) -> Batch:
    if a.max_len != b.max_len:
        raise ShapeError(f"cannot join batches padded to {a.max_len} and {b.max_len}")
    return Batch(ids=np.concatenate([a.ids, b.ids]),
                 lengths=np.concatenate([a.lengths, b.lengths]))


def _segment_mean(x: Tensor, start: int, size: int) -> Tensor:
    weights = np.zeros(x.shape[0])
    weights[start:start + size] = 1.0 / size
    return ad.sum_(ad.mul(x, Tensor(weights)))


def _rows(t: Tensor, start: int, stop: int) -> Tensor:
    return ad.take_rows(t, np.arange(start, stop))


# ---------------------------------------------------------------------------
# individual terms


def reconstruction_loss(model: TransferModel, batch_s: Batch, batch_t: Batch,
                        dropout_p: float = 0.0, dropout_rng=None) -> Tensor:
    """Mean NLL of source sentences given (their own style, content) plus
    mean NLL of target sentences given (the shared target style, content)."""
    if not len(batch_s) or not len(batch_t):
        raise SpecError("reconstruction needs non-empty source and target batches")
    joint = _cat_batches(batch_s, batch_t)
    z = model.encode_content(joint, dropout_p, dropout_rng)
    y = ad.concat([model.encode_style(batch_s, SOURCE),
                   style_rows(model.target_style, len(batch_t))], axis=0)
    nll = model.decode_teacher_forced(z, y, joint, dropout_p, dropout_rng)
    return _segment_mean(nll, 0, len(batch_s)) + _segment_mean(nll, len(batch_s), len(batch_t))


def adversarial_loss(model: TransferModel, d_clf: TextCnnClassifier, batch_s: Batch,
                     batch_t: Batch, temperature: float = 0.5,
                     dropout_p: float = 0.0, dropout_rng=None) -> Tensor:
    """Scores soft decodes of (source content, target style) against soft
    target reconstructions. Minimised by the discriminator arm, maximised
    (through the weighted total) by the generator arm."""
    joint = _cat_batches(batch_s, batch_t)
    z = model.encode_content(joint, dropout_p, dropout_rng)
    soft = model.generate_soft(z, model.target_style, joint.max_len, temperature,
                               dropout_p, dropout_rng)
    p = ad.clip(d_clf.prob(soft), PROB_EPS, 1.0 - PROB_EPS)
    fake_term = _segment_mean(ad.neg(ad.log(1.0 - p)), 0, len(batch_s))
    real_term = _segment_mean(ad.neg(ad.log(p)), len(batch_s), len(batch_t))
    return fake_term + real_term


def style_discrepancy(y_s: Tensor, y_star: Tensor) -> Tensor:
    """L2 distance between a style code and the shared target style."""
    if y_s.shape != y_star.shape:
        raise ShapeError(f"style dims disagree: {y_s.shape} vs {y_star.shape}")
    return ad.l2_norm(y_s - y_star)


def discrepancy_density(d) -> Tensor:
    """Standard-normal density of the discrepancy; the single place to swap
    in a different prior over style distances."""
    d = ad.as_tensor(d)
    return ad.mul(ad.exp(ad.mul(ad.mul(d, d), -0.5)), 1.0 / np.sqrt(2.0 * np.pi))


def _squared_rows(y_s: Tensor, y_star: Tensor) -> Tensor:
    diff = y_s - ad.reshape(y_star, (1, y_star.shape[0]))
    return ad.sum_(ad.mul(diff, diff), axis=1)


def style_discrepancy_loss(model: TransferModel, judge: TextCnnClassifier,
                           batch_s: Batch, y_s: Optional[Tensor] = None) -> Tensor:
    """Batch mean of p_judge(x has target style) times squared discrepancy.

    The judge is evaluated on the real source tokens with no gradient; the
    gradient reaches only the style encoder and the target style vector.
    """
    with no_grad():
        p = judge.prob(batch_s).data.copy()
    if y_s is None:
        y_s = model.encode_style(batch_s, SOURCE)
    return ad.mean_(ad.mul(_squared_rows(y_s, model.target_style), Tensor(p)))


def cycle_consistency_loss(model: TransferModel, batch_s: Batch, batch_t: Batch,
                           temperature: float = 0.5, draw_rng=None,
                           draw_idx: Optional[np.ndarray] = None,
                           dropout_p: float = 0.0, dropout_rng=None) -> Tensor:
    """Round-trip NLL: soft-transfer, re-encode, decode the original back.

    Source sentences ride to the target style and home with their own;
    target sentences ride to a style drawn per-sample from the source batch
    and home with the shared target style.
    """
    if not len(batch_s):
        raise SpecError("cycle loss needs a non-empty source batch to draw styles from")
    if draw_idx is None:
        if draw_rng is None:
            raise SpecError("cycle loss needs draw_idx or draw_rng for the target-side styles")
        draw_idx = draw_rng.integers(0, len(batch_s), size=len(batch_t))
    joint = _cat_batches(batch_s, batch_t)
    z = model.encode_content(joint, dropout_p, dropout_rng)
    y_s = model.encode_style(batch_s, SOURCE)
    y_out = ad.concat([style_rows(model.target_style, len(batch_s)),
                       ad.take_rows(y_s, draw_idx)], axis=0)
    soft = model.generate_soft(z, y_out, joint.max_len, temperature, dropout_p, dropout_rng)
    z_back = model.encode_content(soft, dropout_p, dropout_rng)
    y_home = ad.concat([y_s, style_rows(model.target_style, len(batch_t))], axis=0)
    nll = model.decode_teacher_forced(z_back, y_home, joint, dropout_p, dropout_rng)
    return _segment_mean(nll, 0, len(batch_s)) + _segment_mean(nll, len(batch_s), len(batch_t))


def total_loss(rec, adv, cyc, dis, w: LossWeights) -> Tensor:
    """rec - lambda_adv*adv + lambda_cyc*cyc + lambda_dis*dis."""
    return (ad.as_tensor(rec) + ad.mul(ad.as_tensor(adv), -w.lambda_adv)
            + ad.mul(ad.as_tensor(cyc), w.lambda_cyc) + ad.mul(ad.as_tensor(dis), w.lambda_dis))


# ---------------------------------------------------------------------------
# fused evaluation for the training loop: shares the content encoding and
# the soft generation between the adversarial and cycle terms


def compute_breakdown(model: TransferModel, d_clf: TextCnnClassifier,
                      judge: Optional[TextCnnClassifier], batch_s: Batch, batch_t: Batch,
                      w: LossWeights, temperature: float = 0.5,
                      dropout_p: float = 0.0, dropout_rng=None,
                      draw_rng=None, draw_idx: Optional[np.ndarray] = None,
                      judge_batch_s: Optional[Batch] = None):
    """Full weighted objective in one pass; returns (total tensor, floats).

    Terms whose weight is zero are skipped and reported as 0. When the
    judge was trained with a different vocabulary, judge_batch_s carries
    the source batch re-encoded in the judge's id space.
    """
    if not len(batch_s) or not len(batch_t):
        raise SpecError("need non-empty source and target batches")
    n_s, n_t = len(batch_s), len(batch_t)
    joint = _cat_batches(batch_s, batch_t)
    z = model.encode_content(joint, dropout_p, dropout_rng)
    y_s = model.encode_style(batch_s, SOURCE)

    y_joint = ad.concat([y_s, style_rows(model.target_style, n_t)], axis=0)
    nll = model.decode_teacher_forced(z, y_joint, joint, dropout_p, dropout_rng)
    rec = _segment_mean(nll, 0, n_s) + _segment_mean(nll, n_s, n_t)

    need_adv, need_cyc, need_dis = w.lambda_adv > 0, w.lambda_cyc > 0, w.lambda_dis > 0
    adv = cyc = dis = None

    if need_adv or need_cyc:
        z_gen, y_gen = z, style_rows(model.target_style, n_s + n_t)
        if need_cyc:
            if draw_idx is None:
                if draw_rng is None:
                    raise SpecError("cycle term needs draw_idx or draw_rng")
                draw_idx = draw_rng.integers(0, n_s, size=n_t)
            # third block: target contents decoded with drawn source styles
            z_gen = ad.concat([z, _rows(z, n_s, n_s + n_t)], axis=0)
            y_gen = ad.concat([y_gen, ad.take_rows(y_s, draw_idx)], axis=0)
        soft = model.generate_soft(z_gen, y_gen, joint.max_len, temperature,
                                   dropout_p, dropout_rng)
        if need_adv:
            p = ad.clip(d_clf.prob(soft), PROB_EPS, 1.0 - PROB_EPS)
            adv = (_segment_mean(ad.neg(ad.log(1.0 - p)), 0, n_s)
                   + _segment_mean(ad.neg(ad.log(p)), n_s, n_t))
        if need_cyc:
            z_back = model.encode_content(soft, dropout_p, dropout_rng)
            z_cyc = ad.concat([_rows(z_back, 0, n_s),
                               _rows(z_back, n_s + n_t, n_s + 2 * n_t)], axis=0)
            y_home = ad.concat([y_s, style_rows(model.target_style, n_t)], axis=0)
            nll_cyc = model.decode_teacher_forced(z_cyc, y_home, joint, dropout_p, dropout_rng)
            cyc = _segment_mean(nll_cyc, 0, n_s) + _segment_mean(nll_cyc, n_s, n_t)

    if need_dis:
        if judge is None:
            raise SpecError("style discrepancy term needs the pre-trained judge")
        judge_view = batch_s if judge_batch_s is None else judge_batch_s
        dis = style_discrepancy_loss(model, judge, judge_view, y_s=y_s)

    zero = Tensor(0.0)
    adv = zero if adv is None else adv
    cyc = zero if cyc is None else cyc
    dis = zero if dis is None else dis
    total = total_loss(rec, adv, cyc, dis, w)
    breakdown = LossBreakdown(rec=rec.item(), adv=adv.item(), dis=dis.item(),
                              cyc=cyc.item(), total=total.item())
    return total, breakdown
