"""Two-stage training: a teacher on full clips, then teacher/student distillation.

Stage one fits the teacher with cross-entropy plus batch-hard triplet loss.
Stage two starts the student as a copy of the teacher and updates both networks
jointly: the teacher sees ``teacher_views`` frames of each clip, the student a
``student_views`` subset of those same frames.
"""

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .data import TRAIN, BatchSpec, sample_pk_batch, stack_frames, subset_views
from .errors import ConfigError, DivergenceError, NumericError
from .losses import LossConfig, NetworkOutput, ce_loss, batch_hard_triplet_loss, total_objective
from .optim import AdamState, optimizer_step

logger = logging.getLogger(__name__)

STAGES = ("teacher", "distill")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "distill"
    epochs: int = 30
    steps_per_epoch: int = 40
    batch_spec: BatchSpec = field(default_factory=BatchSpec)
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_config: LossConfig = field(default_factory=LossConfig)
    freeze_teacher: bool = False
    checkpoint_every: int = 0
    teacher_checkpoint: str = None

    def validate(self, frames_per_clip=None):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}", "stage")
        for name in ("epochs", "steps_per_epoch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0", "checkpoint_every")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative", "learning_rate")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid Adam coefficients", "adam_beta1")
        self.batch_spec.validate(frames_per_clip)
        self.loss_config.validate()
        return self


def teacher_defaults(**overrides):
    base = TrainConfig(stage="teacher", epochs=60, steps_per_epoch=40)
    return replace(base, **overrides)


@dataclass
class StepRecord:
    stage: str
    step: int
    epoch: int
    losses: dict
    grad_norm_teacher: float
    grad_norm_student: float
    wall_ms: float

    def to_json(self, digest=None):
        d = asdict(self)
        if digest is not None:
            d["config_digest"] = digest
        return json.dumps(d, sort_keys=True)


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    path: str = None
    digest: str = None

    def append(self, record):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(record.to_json(self.digest) + "\n")

    def epoch_means(self, key="total"):
        by_epoch = {}
        for r in self.records:
            by_epoch.setdefault(r.epoch, []).append(r.losses[key])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def _grad_norm(params):
    sq = sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)
    return float(np.sqrt(sq))


def _forward(net, frames):
    emb = mdl.encode_clips(net, frames)
    return NetworkOutput(emb, mdl.logits(net, emb))


def _checkpoint_path(run_dir, stage, epoch):
    return os.path.join(run_dir, f"{stage}-epoch{epoch}.ckpt")


def _start_log(run_dir, name, digest):
    if run_dir is None:
        return TrainingLog(digest=digest)
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, name)
    open(path, "w").close()
    return TrainingLog(path=path, digest=digest)


def default_model_config(dataset, seed=0, hidden=64, embedding=32):
    return mdl.ModelConfig((dataset.config.frame_dim, hidden, embedding),
                           dataset.config.n_train_ids, seed)


def train_teacher(dataset, cfg, model_config=None, run_dir=None, digest=None):
    """Fit a teacher with cross-entropy plus batch-hard triplet loss on full clips.

    Returns ``(net, log)``. Checkpoints go to ``run_dir/teacher-epoch<k>.ckpt``.
    """
    cfg.validate()
    if cfg.stage != "teacher":
        raise ConfigError("train_teacher needs stage='teacher'", "stage")
    model_config = model_config or default_model_config(dataset, cfg.seed)
    net = mdl.init(model_config)
    params = net.parameters()
    state = AdamState()
    rng = np.random.default_rng(cfg.seed)
    log = _start_log(run_dir, "teacher-log.jsonl", digest)
    margin = cfg.loss_config.margin
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(cfg.steps_per_epoch):
            tic = time.perf_counter()
            batch = sample_pk_batch(dataset, cfg.batch_spec, rng, TRAIN)
            labels = np.array([c.identity for c in batch])
            try:
                out = _forward(net, stack_frames(batch))
                l_ce = ce_loss(out.logits, labels)
                l_tr = batch_hard_triplet_loss(out.embeddings, labels, margin)
                loss = l_ce + l_tr
                net.zero_grad()
                ad.backward(loss)
            except NumericError as exc:
                raise DivergenceError(f"teacher training diverged at step {step}: {exc}", step) from exc
            grads = [p.grad for p in params]
            optimizer_step(params, grads, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            log.append(StepRecord("teacher", step, epoch,
                                  {"ce": l_ce.item(), "tr": l_tr.item(), "total": loss.item()},
                                  _grad_norm(params), 0.0, 1000 * (time.perf_counter() - tic)))
            step += 1
        _maybe_checkpoint(run_dir, "teacher", epoch, cfg, net)
        logger.info("teacher epoch %d: mean loss %.4f", epoch, log.epoch_means()[-1])
    return net, log


def _maybe_checkpoint(run_dir, stage, epoch, cfg, net):
    if run_dir is None:
        return
    if epoch == cfg.epochs or (cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0):
        mdl.save_checkpoint(net, _checkpoint_path(run_dir, stage, epoch))


def distill(teacher, dataset, cfg, run_dir=None, digest=None):
    """Jointly update teacher and student with the combined distillation objective.

    ``teacher`` is an :class:`~mdkt.model.EmbeddingNet` or a checkpoint path;
    it is copied, never modified. Returns ``(teacher', student, log)``.
    """
    T = dataset.config.frames_per_clip
    cfg.validate(T)
    if cfg.stage != "distill":
        raise ConfigError("distill needs stage='distill'", "stage")
    if isinstance(teacher, (str, os.PathLike)):
        teacher = mdl.load_checkpoint(teacher)
    teacher = mdl.clone(teacher)
    student = mdl.clone(teacher)
    t_params, s_params = teacher.parameters(), student.parameters()
    t_state, s_state = AdamState(), AdamState()
    spec = cfg.batch_spec
    rng = np.random.default_rng(cfg.seed)
    log = _start_log(run_dir, "distill-log.jsonl", digest)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(cfg.steps_per_epoch):
            tic = time.perf_counter()
            batch = sample_pk_batch(dataset, spec, rng, TRAIN)
            labels = np.array([c.identity for c in batch])
            t_clips = [subset_views(c, spec.teacher_views, rng) for c in batch]
            s_clips = [subset_views(c, spec.student_views, rng) for c in t_clips]
            try:
                t_out = _forward(teacher, stack_frames(t_clips))
                s_out = _forward(student, stack_frames(s_clips))
                result = total_objective(t_out, s_out, labels, cfg.loss_config)
                teacher.zero_grad()
                student.zero_grad()
                ad.backward(result.total)
            except NumericError as exc:
                raise DivergenceError(f"distillation diverged at step {step}: {exc}", step) from exc
            if cfg.freeze_teacher:
                teacher.zero_grad()
            g_t, g_s = _grad_norm(t_params), _grad_norm(s_params)
            optimizer_step(s_params, [p.grad for p in s_params], s_state,
                           cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            if not cfg.freeze_teacher:
                optimizer_step(t_params, [p.grad for p in t_params], t_state,
                               cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            log.append(StepRecord("distill", step, epoch, result.breakdown(), g_t, g_s,
                                  1000 * (time.perf_counter() - tic)))
            step += 1
        _maybe_checkpoint(run_dir, "distill-student", epoch, cfg, student)
        _maybe_checkpoint(run_dir, "distill-teacher", epoch, cfg, teacher)
        logger.info("distill epoch %d: mean loss %.4f", epoch, log.epoch_means()[-1])
    return teacher, student, log


def train_config_from_dict(d, base=None):
    base = base or TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for key, value in d.items():
        if key not in known:
            raise ConfigError(f"unknown train field '{key}'", key)
        if key == "batch_spec":
            bs_known = {f.name for f in fields(BatchSpec)}
            for k in value:
                if k not in bs_known:
                    raise ConfigError(f"unknown batch_spec field '{k}'", k)
            value = BatchSpec(**value)
        elif key == "loss_config":
            raise ConfigError("set loss parameters in the top-level 'loss' section", key)
        kwargs[key] = value
    return replace(base, **kwargs)


def train_config_to_dict(cfg):
    d = asdict(cfg)
    d.pop("loss_config")
    return d
