"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .autodiff import Tensor, backward
from .errors import NumericError, ParameterError, UsageError


def numerical_gradient(f, x, step=1e-5):
    """Central differences of scalar ``f`` with respect to every entry of ``x``."""
    base = np.array(x.data, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        probe = base.copy().reshape(-1)
        probe[i] += step
        up = f(Tensor(probe.reshape(base.shape))).item()
        probe[i] -= 2 * step
        down = f(Tensor(probe.reshape(base.shape))).item()
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError("non-finite value during finite differencing")
        flat[i] = (up - down) / (2 * step)
    return grad


def grad_check(f, x, step=1e-5):
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` maps a Tensor to a scalar Tensor. Points where ``f`` has a kink
    (hinge exactly at zero, ties in batch-hard mining) are outside the contract:
    the one-sided derivatives differ there and no finite-difference check applies.
    """
    if not step > 0:
        raise ParameterError("step must be positive")
    leaf = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    out = f(leaf)
    if out.size != 1:
        raise UsageError("grad_check needs a scalar-valued function")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    numeric = numerical_gradient(f, leaf, step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())


# -- suite over primitives and the loss zoo --------------------------------------

TOLERANCE = 1e-4


def _pk_labels(P=4, K=2):
    return np.repeat(np.arange(P), K)


def _cases(rng):
    """Yield ``(name, f, x)`` triples for one random draw.

    Distillation terms are checked from the learner side only: the target side
    is detached, so finite differences through it would measure a different
    function than the one being differentiated.
    """
    from . import autodiff as ad
    from . import losses as L

    labels = _pk_labels()
    B, d, c = len(labels), 5, 6
    emb_t, emb_s = rng.normal(size=(B, d)), rng.normal(size=(B, d))
    log_t, log_s = rng.normal(size=(B, c)) * 2, rng.normal(size=(B, c)) * 2
    a, m = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    stoch = ad.softmax_rows(Tensor(rng.normal(size=(3, 4)))).data
    cls = rng.integers(0, c, size=B)
    cfg_student = L.LossConfig(mutual=False, use_ce=True)
    cfg_teacher = L.LossConfig(use_mkd=False, use_mtcl=False)

    yield "add", lambda x: ad.tsum((x + a) * a), Tensor(rng.normal(size=(3, 4)))
    yield "subtract", lambda x: ad.tsum((a - x) * a), Tensor(rng.normal(size=(3, 4)))
    yield "scalar-multiply", lambda x: ad.tsum(ad.scale(x, 2.5) * a), Tensor(rng.normal(size=(3, 4)))
    yield "multiply", lambda x: ad.tsum(x * x * a), Tensor(rng.normal(size=(3, 4)))
    yield "divide", lambda x: ad.tsum(a / x), Tensor(pos)
    yield "relu", lambda x: ad.tsum(ad.relu(x) * a), Tensor(rng.normal(size=(3, 4)))
    yield "log", lambda x: ad.tsum(ad.log(x) * a), Tensor(pos)
    yield "exp", lambda x: ad.tsum(ad.exp(x) * a), Tensor(rng.normal(size=(3, 4)))
    yield "sqrt", lambda x: ad.tsum(ad.sqrt(x) * a), Tensor(pos)
    yield "mean", lambda x: ad.tsum(ad.mean(x * a, axis=0) * ad.mean(x, axis=0)), Tensor(rng.normal(size=(3, 4)))
    yield "sum", lambda x: ad.tsum(ad.tsum(x, axis=1) * ad.tsum(x * a, axis=1)), Tensor(rng.normal(size=(3, 4)))
    yield "matmul", lambda x: ad.tsum(ad.matmul(x, m) * ad.matmul(x, m)), Tensor(rng.normal(size=(3, 4)))
    yield "concatenate-rows", lambda x: ad.tsum(ad.concat_rows([x, x * a]) * ad.concat_rows([a, x])), \
        Tensor(rng.normal(size=(3, 4)))
    yield "row-select", lambda x: ad.tsum(ad.take_rows(x, [2, 0, 2]) * a), Tensor(rng.normal(size=(3, 4)))
    yield "softmax_rows", lambda x: ad.tsum(ad.softmax_rows(x, 1.7) * a), Tensor(rng.normal(size=(3, 4)))
    yield "kl_divergence", lambda x: ad.kl_divergence(Tensor(stoch), ad.softmax_rows(x)), \
        Tensor(rng.normal(size=(3, 4)))
    yield "pairwise_sq_euclidean", lambda x: ad.tsum(ad.pairwise_sq_euclidean(x) * ad.tsum(a[:, :3], axis=0)), \
        Tensor(rng.normal(size=(3, 4)))
    yield "ce", lambda x: L.ce_loss(x, cls), Tensor(log_s)
    yield "triplet", lambda x: L.batch_hard_triplet_loss(x, labels, 0.3), Tensor(emb_s)
    yield "kd t2s", lambda x: L.kd_directed(Tensor(log_t), x, 10.0), Tensor(log_s)
    yield "kd s2t", lambda x: L.kd_directed(Tensor(log_s), x, 10.0), Tensor(log_t)
    yield "pd student", lambda x: L.pd_loss(Tensor(emb_t), x), Tensor(emb_s)
    yield "pd teacher", lambda x: L.pd_loss(x, Tensor(emb_s)), Tensor(emb_t)
    yield "triplet probability", lambda x: ad.tsum(
        L.triplet_distributions(x[:, 0], x[:, 1], 4.0) * a[:, :2]), Tensor(rng.uniform(0, 6, size=(3, 2)))
    yield "tcl t2s", lambda x: L.mutual_tcl(Tensor(emb_t), x, labels, 4.0, mutual=False), Tensor(emb_s)
    yield "tcl s2t", lambda x: _tcl_s2t(Tensor(emb_s), x, labels), Tensor(emb_t)
    yield "total student", lambda x: L.total_objective(
        L.NetworkOutput(Tensor(emb_t), Tensor(log_t)), L.NetworkOutput(x[:, :d], x[:, d:]),
        labels, cfg_student).total, Tensor(np.hstack([emb_s, log_s]))
    yield "total teacher", lambda x: L.total_objective(
        L.NetworkOutput(x[:, :d], x[:, d:]), L.NetworkOutput(Tensor(emb_s), Tensor(log_s)),
        labels, cfg_teacher).total, Tensor(np.hstack([emb_t, log_t]))


def _tcl_s2t(student, teacher, labels, tau2=4.0):
    """The student-to-teacher TCL direction alone, with triplets mined on the fixed student."""
    from . import autodiff as ad
    from . import losses as L

    dist_s = ad.pairwise_sq_euclidean(student)
    dist_t = ad.pairwise_sq_euclidean(teacher)
    tri = L.batch_hard_triplets(dist_s, labels)
    a, p, n = tri.anchor, tri.positive, tri.negative
    log_s = L.triplet_log_distributions(dist_s[a, p], dist_s[a, n], tau2)
    log_t = L.triplet_log_distributions(dist_t[a, p], dist_t[a, n], tau2)
    return L.two_point_kl(log_s, log_t)


def run_suite(n_seeds=20, step=1e-5, tolerance=TOLERANCE):
    """Max relative error per check over ``n_seeds`` random draws, and overall pass flag."""
    worst = {}
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        for name, f, x in _cases(rng):
            worst[name] = max(worst.get(name, 0.0), grad_check(f, x, step))
    passed = all(err < tolerance for err in worst.values())
    return worst, passed
