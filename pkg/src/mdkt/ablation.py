"""Ablation suites: which loss terms, mutual vs one-way distillation, and cross-entropy on or off.

Each (row, seed) cell runs the full pipeline: the teacher for a seed is trained
once per configuration and shared by every row, then each row distills from it and evaluates the
student. Finished cells are written to disk, so an interrupted suite resumes
where it stopped.
"""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import data as data_mod
from . import model as mdl
from . import trainer
from .evaluation import EvalProtocol, evaluate

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["label", "seed_count", "i2v_cmc1_mean", "i2v_cmc1_std", "i2v_map_mean", "i2v_map_std",
               "v2v_cmc1_mean", "v2v_cmc1_std", "v2v_map_mean", "v2v_map_std"]
METRICS = [("i2v_cmc1", "I2V", "cmc1"), ("i2v_map", "I2V", "mAP"),
           ("v2v_cmc1", "V2V", "cmc1"), ("v2v_map", "V2V", "mAP")]


@dataclass(frozen=True)
class AblationRow:
    label: str
    loss_overrides: tuple = ()
    freeze_teacher: bool = False

    def toggles(self):
        return dict(self.loss_overrides)


def _loss_row(label):
    parts = set(label.split("+"))
    if label == "ALL":
        parts = {"TR", "KD", "PD", "TCL"}
    return AblationRow(label, (("use_tr", "TR" in parts), ("use_mkd", "KD" in parts),
                               ("use_pd", "PD" in parts), ("use_mtcl", "TCL" in parts)))


_ALL_ON = (("use_tr", True), ("use_mkd", True), ("use_pd", True), ("use_mtcl", True))

SUITES = {
    "loss_terms": [_loss_row(label) for label in
                   ("TR", "TCL", "TR+TCL", "KD+PD+TCL", "TR+KD+PD", "TR+KD+TCL", "TR+PD+TCL", "ALL")],
    "mutual": [AblationRow("freeze teacher", _ALL_ON + (("mutual", True),), freeze_teacher=True),
               AblationRow("without mutual", _ALL_ON + (("mutual", False),)),
               AblationRow("with mutual", _ALL_ON + (("mutual", True),))],
    "ce": [AblationRow("with CE loss", _ALL_ON + (("use_ce", True),)),
           AblationRow("without CE loss", _ALL_ON + (("use_ce", False),))],
}


def _slug(label):
    return label.replace("+", "_").replace(" ", "-")


def _teacher_path(out_dir, seed, digest):
    return os.path.join(out_dir, "teachers", digest, f"seed{seed}.ckpt")


def _cell_path(out_dir, suite, row, seed):
    return os.path.join(out_dir, suite, "cells", f"{_slug(row.label)}__seed{seed}.json")


def _dataset(run_cfg, out_dir):
    path = os.path.join(out_dir, "dataset.mdkt")
    if os.path.exists(path):
        ds = data_mod.load(path)
        if ds.config == run_cfg.dataset:
            return ds
    ds = data_mod.generate(run_cfg.dataset)
    os.makedirs(out_dir, exist_ok=True)
    data_mod.save(ds, path)
    return ds


def _seeded_model(run_cfg, seed):
    return replace(run_cfg.model, init_seed=seed)


def ensure_teacher(run_cfg, dataset, seed, out_dir):
    path = _teacher_path(out_dir, seed, run_cfg.digest())
    if os.path.exists(path):
        return mdl.load_checkpoint(path)
    cfg = replace(run_cfg.teacher_train, seed=seed)
    net, _ = trainer.train_teacher(dataset, cfg, _seeded_model(run_cfg, seed))
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    mdl.save_checkpoint(net, tmp)
    os.replace(tmp, path)
    return net


def run_cell(run_cfg, dataset, teacher, row, seed):
    loss_cfg = replace(run_cfg.loss, **row.toggles())
    cfg = replace(run_cfg.train, seed=seed, loss_config=loss_cfg,
                  freeze_teacher=row.freeze_teacher or run_cfg.train.freeze_teacher)
    _, student, log = trainer.distill(teacher, dataset, cfg)
    reports = {mode: evaluate(student, dataset, EvalProtocol(mode, "student"), seed=seed)
               for mode in ("I2V", "V2V")}
    out = {"label": row.label, "seed": seed,
           "final_losses": log.records[-1].losses}
    for key, mode, metric in METRICS:
        out[key] = reports[mode][metric]
    return out


def _cell_job(args):
    run_cfg, out_dir, suite, row, seed = args
    path = _cell_path(out_dir, suite, row, seed)
    dataset = _dataset(run_cfg, out_dir)
    teacher = mdl.load_checkpoint(_teacher_path(out_dir, seed, run_cfg.digest()))
    result = run_cell(run_cfg, dataset, teacher, row, seed)
    result["config_digest"] = run_cfg.digest()
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=2)
    os.replace(tmp, path)
    return result


def _teacher_job(args):
    run_cfg, out_dir, seed = args
    ensure_teacher(run_cfg, _dataset(run_cfg, out_dir), seed, out_dir)
    return seed


def _map(fn, jobs, n_jobs):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, jobs))


def _load_cell(path, digest):
    try:
        with open(path) as fh:
            cell = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    return cell if cell.get("config_digest") == digest else None


def summarize(rows, cells):
    """One summary dict per row with mean and population std of each metric over seeds."""
    table = []
    for row in rows:
        mine = [c for c in cells if c["label"] == row.label]
        entry = {"label": row.label, "seed_count": len(mine)}
        for key, _, _ in METRICS:
            values = np.array([c[key] for c in mine], dtype=float)
            entry[f"{key}_mean"] = float(values.mean()) if len(values) else float("nan")
            entry[f"{key}_std"] = float(values.std()) if len(values) else float("nan")
        table.append(entry)
    return table


def run_suite(suite, run_cfg, seeds, out_dir, n_jobs=1):
    """Run (or resume) ``suite`` over ``seeds``; returns the summary table and per-cell results."""
    if suite not in SUITES:
        raise KeyError(f"unknown suite '{suite}'; choose from {sorted(SUITES)}")
    rows = SUITES[suite]
    digest = run_cfg.digest()
    _dataset(run_cfg, out_dir)
    missing_teachers = [s for s in seeds if not os.path.exists(_teacher_path(out_dir, s, digest))]
    _map(_teacher_job, [(run_cfg, out_dir, s) for s in missing_teachers], n_jobs)

    cells, todo = [], []
    for row in rows:
        for seed in seeds:
            cell = _load_cell(_cell_path(out_dir, suite, row, seed), digest)
            if cell is None:
                todo.append((run_cfg, out_dir, suite, row, seed))
            else:
                cells.append(cell)
    if todo:
        logger.info("%s: %d of %d cells to run", suite, len(todo), len(rows) * len(seeds))
    cells += _map(_cell_job, todo, n_jobs)
    order = {(r.label, s): i for i, (r, s) in enumerate((r, s) for r in rows for s in seeds)}
    cells.sort(key=lambda c: order[(c["label"], c["seed"])])
    return summarize(rows, cells), cells


def write_tables(suite, table, cells, out_dir, digest, seeds):
    suite_dir = os.path.join(out_dir, suite)
    os.makedirs(suite_dir, exist_ok=True)
    csv_path = os.path.join(suite_dir, f"{suite}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for entry in table:
            writer.writerow({k: (f"{entry[k]:.6f}" if isinstance(entry[k], float) else entry[k])
                             for k in CSV_COLUMNS})
    json_path = os.path.join(suite_dir, f"{suite}.json")
    payload = {"suite": suite, "config_digest": digest, "seeds": list(seeds), "rows": table,
               "cells": [{k: v for k, v in c.items() if k != "config_digest"} for c in cells]}
    with open(json_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    return csv_path, json_path
