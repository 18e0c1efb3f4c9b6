"""Glue between a RunConfig and the data/model/training modules."""

import json
from pathlib import Path

from .config import RunConfig, config_hash, resolve_data_path
from .data import ordered_split, read_samples
from .hashing import hash_dataset
from .models import CTRModel
from .snapshot import save_snapshot
from .training import TrainResult, train


def load_dataset(cfg: RunConfig):
    """Read, split (ordered) and hash; returns ``(train, test)`` as ``(indices, labels)`` pairs."""
    samples = read_samples(resolve_data_path(cfg.data_path), cfg.schema)
    if cfg.test_path:
        train_s = samples
        test_s = read_samples(resolve_data_path(cfg.test_path), cfg.schema)
    else:
        split = ordered_split(samples, cfg.train_fraction)
        train_s, test_s = split.train, split.test
    return hash_dataset(train_s, cfg.hasher), hash_dataset(test_s, cfg.hasher)


def select_part(dataset, part):
    train_data, test_data = dataset
    if part == "train":
        return train_data
    if part == "test":
        return test_data
    import numpy as np

    return (np.concatenate([train_data[0], test_data[0]]),
            np.concatenate([train_data[1], test_data[1]]))


def run_config(cfg: RunConfig, dataset, dump_path=None) -> TrainResult:
    model = CTRModel(cfg.model, seed=cfg.seed)
    train_data, test_data = dataset
    return train(model, train_data, cfg.train,
                 test_data if test_data[0].shape[0] else None, dump_path=dump_path)


def run_dir_name(cfg: RunConfig) -> str:
    return f"{config_hash(cfg.raw)}-s{cfg.seed}"


def echo(cfg: RunConfig) -> dict:
    return {"format": "ctrembed", "config": cfg.raw, "model": cfg.model.to_dict()}


def write_run(cfg: RunConfig, result: TrainResult, out_root) -> Path:
    """Write snapshot, metrics and normalized config under ``out_root/<hash>-s<seed>/``."""
    run_dir = Path(out_root) / run_dir_name(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_snapshot(result.model, run_dir / "snapshot.bin", echo(cfg))
    with open(run_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    (run_dir / "config.json").write_text(json.dumps(cfg.raw, sort_keys=True, indent=2) + "\n")
    return run_dir
