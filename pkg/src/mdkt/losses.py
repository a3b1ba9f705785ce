"""Metric-learning and distillation losses for a teacher/student pair.

Directed distillation terms treat their target side as a constant, so each
term only sends gradient into its learner. The mutual variants add the
reverse direction, in which the roles swap.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LabelError, MDKTError, MiningError, ParameterError, ShapeError

TERMS = ("tr", "mkd", "pd", "mtcl", "ce")


@dataclass(frozen=True)
class LossConfig:
    tau1: float = 10.0
    tau2: float = 4.0
    margin: float = 0.3
    weight_mkd: float = 0.1
    weight_pd: float = 1e-4
    weight_mtcl: float = 1000.0
    use_tr: bool = True
    use_mkd: bool = True
    use_pd: bool = True
    use_mtcl: bool = True
    use_ce: bool = False
    mutual: bool = True

    def validate(self):
        if not self.tau1 > 0:
            raise ConfigError("tau1 must be positive", "tau1")
        if not self.tau2 > 0:
            raise ConfigError("tau2 must be positive", "tau2")
        if not self.margin >= 0:
            raise ConfigError("margin must be non-negative", "margin")
        if not any((self.use_tr, self.use_mkd, self.use_pd, self.use_mtcl, self.use_ce)):
            raise ConfigError("at least one loss term must be enabled", "use_tr")
        return self

    def weight(self, term):
        return {"tr": 1.0, "mkd": self.weight_mkd, "pd": self.weight_pd,
                "mtcl": self.weight_mtcl, "ce": 1.0}[term]

    def enabled(self, term):
        return getattr(self, f"use_{term}")


def loss_config_from_dict(d):
    known = {f.name for f in fields(LossConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown loss field '{key}'", key)
    return LossConfig(**d).validate()


def loss_config_to_dict(cfg):
    return asdict(cfg)


@dataclass(frozen=True)
class TripletIndices:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __len__(self):
        return len(self.anchor)

    def __iter__(self):
        return iter(zip(self.anchor.tolist(), self.positive.tolist(), self.negative.tolist()))


@dataclass(frozen=True)
class TripletProbabilityPair:
    """Two-point distribution ``[p, 1 - p]`` for one triplet."""

    p: float
    complement: float


@dataclass
class NetworkOutput:
    """Clip embeddings ``(B, d)`` and classifier logits ``(B, n_classes)`` of one network."""

    embeddings: Tensor
    logits: Tensor


# -- classification -----------------------------------------------------------------

def ce_loss(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"need {b} labels, got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise LabelError(f"labels must lie in [0, {c})")
    logp = ad.log_softmax_rows(logits)
    return -ad.mean(logp[np.arange(b), labels])


# -- mining and triplet loss ----------------------------------------------------------

def batch_hard_triplets(dist, labels):
    """Farthest same-label and nearest other-label sample for every anchor.

    Ties go to the smallest index.
    """
    d = dist.data if isinstance(dist, Tensor) else np.asarray(dist, dtype=np.float64)
    labels = np.asarray(labels)
    b = len(labels)
    if d.shape != (b, b):
        raise ShapeError(f"distance matrix {d.shape} does not match {b} labels")
    _, counts = np.unique(labels, return_counts=True)
    if len(counts) < 2:
        raise MiningError("batch-hard mining needs at least two distinct labels")
    if counts.min() < 2:
        raise MiningError("every label needs at least two members for batch-hard mining")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    positive = np.argmax(np.where(pos_mask, d, -np.inf), axis=1)
    negative = np.argmin(np.where(same, np.inf, d), axis=1)
    return TripletIndices(np.arange(b), positive, negative)


def triplet_loss(dist, triplets, margin):
    """Mean over anchors of ``max(0, dist[a,p] - dist[a,n] + margin)``."""
    dist = ad.as_tensor(dist)
    d_ap = dist[triplets.anchor, triplets.positive]
    d_an = dist[triplets.anchor, triplets.negative]
    return ad.mean(ad.relu(d_ap - d_an + margin))


def batch_hard_triplet_loss(embeddings, labels, margin):
    dist = ad.pairwise_sq_euclidean(embeddings)
    return triplet_loss(dist, batch_hard_triplets(dist, labels), margin)


# -- logits distillation ----------------------------------------------------------

def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ ({a.shape} vs {b.shape})")


def kd_directed(target_logits, learner_logits, tau1):
    """``tau1^2 * KL(softmax(target/tau1) || softmax(learner/tau1))``, target held constant."""
    target, learner = ad.as_tensor(target_logits), ad.as_tensor(learner_logits)
    _same_shape(target, learner, "kd_directed")
    p = ad.softmax_rows(target.detach(), tau1)
    q = ad.softmax_rows(learner, tau1)
    return ad.kl_divergence(p, q) * (tau1 * tau1)


def mutual_kd(teacher_logits, student_logits, tau1, mutual=True):
    loss = kd_directed(teacher_logits, student_logits, tau1)
    if mutual:
        loss = loss + kd_directed(student_logits, teacher_logits, tau1)
    return loss


# -- pairwise distance distillation -------------------------------------------------

def pd_loss(teacher_emb, student_emb):
    """Sum over pairs ``i < j`` of squared differences between teacher and student Euclidean distances."""
    t, s = ad.as_tensor(teacher_emb), ad.as_tensor(student_emb)
    if t.ndim != 2 or s.ndim != 2 or t.shape[0] != s.shape[0]:
        raise ShapeError(f"pd_loss needs equal batch sizes, got {t.shape} and {s.shape}")
    b = t.shape[0]
    if b < 2:
        raise ShapeError("pd_loss needs a batch of at least two")
    iu, ju = np.triu_indices(b, k=1)
    d_t = ad.sqrt(ad.pairwise_sq_euclidean(t)[iu, ju])
    d_s = ad.sqrt(ad.pairwise_sq_euclidean(s)[iu, ju])
    diff = d_t - d_s
    return ad.tsum(diff * diff)


# -- triplet contrast -----------------------------------------------------------------

def _triplet_scores(d_ap, d_an):
    d_ap, d_an = ad.as_tensor(d_ap), ad.as_tensor(d_an)
    n = d_ap.size
    return -ad.concatenate([ad.reshape(d_ap, (n, 1)), ad.reshape(d_an, (n, 1))], axis=1)


def _check_tau2(tau2):
    if not tau2 > 0:
        raise ParameterError(f"tau2 must be positive, got {tau2}")


def triplet_distributions(d_ap, d_an, tau2):
    """Rows ``[p, 1 - p]`` with ``p = softmax(-d_ap/tau2, -d_an/tau2)[0]``, one row per triplet."""
    _check_tau2(tau2)
    p = ad.softmax_rows(_triplet_scores(d_ap, d_an), tau2)[:, 0:1]
    return ad.concatenate([p, 1.0 - p], axis=1)


def triplet_log_distributions(d_ap, d_an, tau2):
    """Log of the rows ``[p, 1 - p]``, exact even where ``p`` underflows."""
    _check_tau2(tau2)
    return ad.log_softmax_rows(_triplet_scores(d_ap, d_an), tau2)


def triplet_probability(d_ap, d_an, tau2):
    dist = triplet_distributions(d_ap, d_an, tau2)
    p = float(dist.data[0, 0])
    return TripletProbabilityPair(p, 1.0 - p)


def two_point_kl(log_target, log_learner):
    """Sum over rows of ``KL(target || learner)`` from log-probabilities; the target is held constant.

    Working in log space keeps the gradient alive for saturated triplets, where
    the learner probability underflows and a clamped KL would go flat.
    """
    lt = log_target.detach()
    return ad.tsum(ad.exp(lt) * (lt - log_learner))


def mutual_tcl(teacher_emb, student_emb, labels, tau2, mutual=True, triplets=None):
    """Triplet contrast loss on triplets mined batch-hard in the student embedding.

    Returns the summed ``KL(P_t || P_s)`` over triplets, plus ``KL(P_s || P_t)``
    when ``mutual``; each direction holds its target distribution constant.
    """
    t, s = ad.as_tensor(teacher_emb), ad.as_tensor(student_emb)
    if t.shape[0] != s.shape[0]:
        raise ShapeError("teacher and student batches differ in size")
    dist_s = ad.pairwise_sq_euclidean(s)
    dist_t = ad.pairwise_sq_euclidean(t)
    if triplets is None:
        triplets = batch_hard_triplets(dist_s, labels)
    a, p, n = triplets.anchor, triplets.positive, triplets.negative
    log_t = triplet_log_distributions(dist_t[a, p], dist_t[a, n], tau2)
    log_s = triplet_log_distributions(dist_s[a, p], dist_s[a, n], tau2)
    loss = two_point_kl(log_t, log_s)
    if mutual:
        loss = loss + two_point_kl(log_s, log_t)
    return loss


# -- full objective ---------------------------------------------------------------------

@dataclass
class ObjectiveResult:
    total: Tensor
    terms: dict  # raw (unweighted) term values as Tensors; disabled terms absent
    weights: dict

    def breakdown(self):
        out = {name: 0.0 for name in TERMS}
        out.update({name: t.item() for name, t in self.terms.items()})
        out["total"] = self.total.item()
        return out


def combine_terms(terms, cfg):
    """Weighted sum of raw term values; disabled or missing terms contribute exactly 0."""
    total = 0.0
    for name in TERMS:
        if name in terms and cfg.enabled(name):
            total = total + cfg.weight(name) * terms[name]
    return total


def _term(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except MDKTError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def total_objective(teacher_out, student_out, labels, cfg):
    cfg.validate()
    labels = np.asarray(labels)
    terms = {}
    if cfg.use_tr:
        terms["tr"] = (_term("tr", batch_hard_triplet_loss, teacher_out.embeddings, labels, cfg.margin)
                       + _term("tr", batch_hard_triplet_loss, student_out.embeddings, labels, cfg.margin))
    if cfg.use_mkd:
        terms["mkd"] = _term("mkd", mutual_kd, teacher_out.logits, student_out.logits, cfg.tau1, cfg.mutual)
    if cfg.use_pd:
        terms["pd"] = _term("pd", pd_loss, teacher_out.embeddings, student_out.embeddings)
    if cfg.use_mtcl:
        terms["mtcl"] = _term("mtcl", mutual_tcl, teacher_out.embeddings, student_out.embeddings,
                              labels, cfg.tau2, cfg.mutual)
    if cfg.use_ce:
        terms["ce"] = (_term("ce", ce_loss, teacher_out.logits, labels)
                       + _term("ce", ce_loss, student_out.logits, labels))
    total = ad.as_tensor(combine_terms(terms, cfg))
    return ObjectiveResult(total, terms, {name: cfg.weight(name) for name in terms})
