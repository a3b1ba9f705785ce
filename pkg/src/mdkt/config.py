"""Run configuration: one JSON document describing data, model, training, loss and evaluation."""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .data import DatasetConfig, config_from_dict as dataset_config_from_dict
from .errors import ConfigError
from .evaluation import EvalProtocol
from .losses import LossConfig, loss_config_from_dict
from .model import ModelConfig
from .trainer import TrainConfig, teacher_defaults, train_config_from_dict, train_config_to_dict

OUTPUT_ENV = "MDKT_OUTPUT_DIR"
DEFAULT_OUTPUT = "runs"


def _default_eval():
    return [EvalProtocol("I2V", "student"), EvalProtocol("V2V", "student")]


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = None
    teacher_train: TrainConfig = field(default_factory=teacher_defaults)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: tuple = field(default_factory=_default_eval)
    output_dir: str = None
    run_name: str = "run"

    def __post_init__(self):
        if self.model is None:
            d = self.dataset
            object.__setattr__(self, "model", ModelConfig((d.frame_dim, 64, 32), d.n_train_ids, 0))
        object.__setattr__(self, "eval", tuple(self.eval))
        # the top-level loss section is the single source of loss settings
        object.__setattr__(self, "train", replace(self.train, stage="distill", loss_config=self.loss))
        object.__setattr__(self, "teacher_train", replace(self.teacher_train, stage="teacher",
                                                          loss_config=self.loss))

    def validate(self):
        T = self.dataset.frames_per_clip
        _build("dataset", self.dataset.validate)
        _build("model", self.model.validate)
        if self.model.frame_dim != self.dataset.frame_dim:
            raise ConfigError("model input size must equal dataset frame_dim", "model.layer_dims")
        if self.model.n_classes != self.dataset.n_train_ids:
            raise ConfigError("model n_classes must equal dataset n_train_ids", "model.n_classes")
        _build("loss", self.loss.validate)
        _build("teacher_train", self.teacher_train.validate, T)
        _build("train", self.train.validate, T)
        for protocol in self.eval:
            _build("eval", protocol.validate)
        if not self.run_name or os.sep in self.run_name:
            raise ConfigError("run_name must be a non-empty plain name", "run_name")
        return self

    def to_dict(self):
        return {
            "dataset": asdict(self.dataset),
            "model": {**asdict(self.model), "layer_dims": list(self.model.layer_dims)},
            "teacher_train": train_config_to_dict(self.teacher_train),
            "train": train_config_to_dict(self.train),
            "loss": asdict(self.loss),
            "eval": [asdict(p) for p in self.eval],
            "output_dir": self.output_dir,
            "run_name": self.run_name,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self):
        """Content hash of the canonical JSON form; ``output_dir`` is excluded."""
        d = self.to_dict()
        d.pop("output_dir")
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def resolve_output_dir(self, override=None):
        return override or self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT

    def run_dir(self, override=None):
        return os.path.join(self.resolve_output_dir(override), self.run_name)


def _check_keys(d, cls, section):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be an object", section)
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown field '{section}.{key}'", f"{section}.{key}")


def _build(section, fn, *args):
    try:
        return fn(*args)
    except ConfigError as exc:
        name = exc.field if exc.field and exc.field.startswith(section) else f"{section}.{exc.field}"
        raise ConfigError(str(exc), name) from None
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}", section) from None


def from_dict(d):
    _check_keys(d, RunConfig, "config")
    kwargs = {}
    if "dataset" in d:
        kwargs["dataset"] = _build("dataset", dataset_config_from_dict, d["dataset"])
    if "model" in d:
        _check_keys(d["model"], ModelConfig, "model")
        kwargs["model"] = _build("model", lambda m: ModelConfig(**m).validate(), d["model"])
    if "loss" in d:
        kwargs["loss"] = _build("loss", loss_config_from_dict, d["loss"])
    if "teacher_train" in d:
        kwargs["teacher_train"] = _build("teacher_train", train_config_from_dict, d["teacher_train"],
                                         teacher_defaults())
    if "train" in d:
        kwargs["train"] = _build("train", train_config_from_dict, d["train"])
    if "eval" in d:
        protocols = []
        for item in d["eval"]:
            _check_keys(item, EvalProtocol, "eval")
            protocols.append(_build("eval", lambda e: EvalProtocol(**e).validate(), item))
        kwargs["eval"] = protocols
    for key in ("output_dir", "run_name"):
        if key in d:
            kwargs[key] = d[key]
    cfg = RunConfig(**kwargs)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc), exc.field) from None


def load(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})", None) from None
    return from_dict(raw)


def save(cfg, path):
    with open(path, "w") as fh:
        fh.write(cfg.to_json() + "\n")
