"""Lazy Adam, the ordered training loop and grid search."""

import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .metrics import MetricsReport, bce_loss, evaluate
from .models import CTRModel, Gradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10000
    epochs: int = 1
    learning_rate: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    eval_every: int = 0  # steps between held-out evaluations; 0 = end of epoch only
    max_rows: Optional[int] = None

    def errors(self):
        errs = []
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        if self.epochs < 0:
            errs.append("epochs must be >= 0")
        if not self.learning_rate > 0:
            errs.append("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errs.append("beta1 and beta2 must be in [0, 1)")
        if not self.epsilon > 0:
            errs.append("epsilon must be > 0")
        if self.eval_every < 0:
            errs.append("eval_every must be >= 0")
        if self.max_rows is not None and self.max_rows < 1:
            errs.append("max_rows must be >= 1")
        return errs


class TrainingDiverged(FloatingPointError):
    pass


class LazyAdam:
    """Adam with lazy row semantics for the embedding tables.

    Dense parameters (bias, module and DNN weights) get the standard update
    every step. Embedding rows get their moments and weights updated only on
    steps where they appear in the batch; other rows' moments do not decay.
    Bias correction uses the global step count.
    """

    def __init__(self, model: CTRModel, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.model = model
        self.lr, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, epsilon
        self.t = 0
        w = model.linear.weights
        self.m_lin = np.zeros((w.shape[0], 1), dtype=w.dtype)
        self.v_lin = np.zeros_like(self.m_lin)
        if model.interaction is not None:
            self.m_int = np.zeros_like(model.interaction.vectors)
            self.v_int = np.zeros_like(model.interaction.vectors)
        self.dense_m = {}
        self.dense_v = {}
        for name, p in [("linear.bias", model.linear.bias), *model.dense_params().items()]:
            self.dense_m[name] = np.zeros(p.shape)
            self.dense_v[name] = np.zeros(p.shape)

    def _dense(self, name, p, g, bc1, bc2):
        m, v = self.dense_m[name], self.dense_v[name]
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * g * g
        step = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        p[...] = (p.astype(np.float64) - step).astype(p.dtype)

    def step(self, grads: Gradients):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        model = self.model
        self._dense("linear.bias", model.linear.bias, np.array([grads.bias]), bc1, bc2)
        for name, p in model.dense_params().items():
            self._dense(name, p, grads.dense[name], bc1, bc2)
        w = model.linear.weights.reshape(-1, 1)
        kernels.lazy_adam_rows(w, self.m_lin, self.v_lin, grads.linear_rows,
                               grads.linear_grad.reshape(-1, 1), self.lr, self.beta1,
                               self.beta2, self.eps, bc1, bc2)
        if model.interaction is not None:
            kernels.lazy_adam_rows(model.interaction.vectors, self.m_int, self.v_int,
                                   grads.inter_rows, grads.inter_grad, self.lr, self.beta1,
                                   self.beta2, self.eps, bc1, bc2)


def batch_loss(p, y):
    return float(np.mean(bce_loss(p, y)))


@dataclass
class TrainResult:
    model: CTRModel
    steps: int = 0
    history: list = field(default_factory=list)  # dicts: epoch, step, train_loss, metrics
    final: Optional[MetricsReport] = None


def train(model: CTRModel, train_data, config: TrainConfig, test_data=None,
          dump_path=None) -> TrainResult:
    """Train on ``(indices, labels)`` in file order; evaluate on ``test_data``.

    Batches are taken in order with no shuffling. A non-finite loss aborts
    with :class:`TrainingDiverged`; if ``dump_path`` is set the diverged
    model is snapshotted there first.
    """
    idx, y = train_data
    if config.max_rows is not None:
        idx, y = idx[:config.max_rows], y[:config.max_rows]
    opt = LazyAdam(model, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    result = TrainResult(model)
    n = idx.shape[0]
    for epoch in range(config.epochs):
        losses = []
        for lo in range(0, n, config.batch_size):
            bi, by = idx[lo:lo + config.batch_size], y[lo:lo + config.batch_size]
            p, cache = model.forward(bi)
            loss = batch_loss(p, by)
            if not np.isfinite(loss) or not np.all(np.isfinite(p)):
                _dump(model, dump_path)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {opt.t}")
            try:
                grads = model.backward(cache, by)
            except FloatingPointError as exc:
                _dump(model, dump_path)
                raise TrainingDiverged(f"epoch {epoch}, step {opt.t}: {exc}") from exc
            opt.step(grads)
            losses.append(loss * bi.shape[0])
            if config.eval_every and test_data is not None and opt.t % config.eval_every == 0:
                rep = evaluate_model(model, test_data)
                result.history.append(dict(epoch=epoch, step=opt.t, metrics=rep.to_dict()))
        entry = dict(epoch=epoch, step=opt.t, train_loss=float(np.sum(losses) / max(n, 1)))
        if test_data is not None:
            result.final = evaluate_model(model, test_data)
            entry["metrics"] = result.final.to_dict()
            log.info("epoch %d: %s", epoch, result.final.row(model.spec.kind))
        result.history.append(entry)
    result.steps = opt.t
    if result.final is None and test_data is not None:
        result.final = evaluate_model(model, test_data)
    return result


def evaluate_model(model: CTRModel, data) -> MetricsReport:
    idx, y = data
    return evaluate(model.predict(idx), y)


def _dump(model, path):
    if path is None:
        return
    from .snapshot import save_snapshot

    save_snapshot(model, path, {"model": model.spec.to_dict(), "diverged": True})
    log.error("diverged model dumped to %s", path)


# --- grid search ----------------------------------------------------------


def expand_grid(grid: dict) -> list:
    """Cartesian product of ``{axis: [values]}``, axes in insertion order."""
    if not grid:
        return [{}]
    keys = list(grid)
    for k in keys:
        if len(grid[k]) == 0:
            raise ValueError(f"grid axis {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class GridRun:
    key: str
    assignment: dict
    metrics: dict
    wall_time: float
    resumed: bool = False

    @property
    def rig(self):
        r = self.metrics.get("rig")
        return -np.inf if r is None else r


@dataclass
class GridResult:
    runs: list  # ranked, best first

    @property
    def best(self) -> GridRun:
        return self.runs[0]


def read_ledger(path) -> dict:
    out = {}
    path = Path(path)
    if not path.exists():
        return out
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                continue  # torn last line from an interrupted run
            out[rec["key"]] = rec
    return out


def append_ledger(path, record):
    path = Path(path)
    lead = ""
    if path.exists() and path.stat().st_size:
        with open(path, "rb") as fh:
            fh.seek(-1, 2)
            if fh.read(1) != b"\n":
                lead = "\n"  # close a torn line so this record stays parseable
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(lead + json.dumps(record, sort_keys=True) + "\n")


def grid_search(assignments, run_fn, key_fn, ledger_path=None, workers=1) -> GridResult:
    """Evaluate every assignment, skipping those already in the ledger.

    ``run_fn(assignment) -> (MetricsReport, extra_record_dict)`` trains one
    configuration. ``key_fn(assignment) -> str`` names a run uniquely so an
    interrupted search resumes without repeating completed runs. Results are
    ranked by held-out RIG, best first.
    """
    done = read_ledger(ledger_path) if ledger_path else {}
    runs, todo = [], []
    for a in assignments:
        key = key_fn(a)
        if key in done:
            rec = done[key]
            runs.append(GridRun(key, a, rec["metrics"], rec.get("wall_time", 0.0), True))
        else:
            todo.append((key, a))

    def record(key, a, rep, extra, wall):
        run = GridRun(key, a, rep.to_dict(), wall)
        if ledger_path:
            append_ledger(ledger_path, dict(key=key, assignment=a, metrics=run.metrics,
                                            wall_time=wall, **extra))
        runs.append(run)

    if workers > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            futs = [(key, a, pool.submit(_timed, run_fn, a)) for key, a in todo]
            for key, a, fut in futs:
                (rep, extra), wall = fut.result()
                record(key, a, rep, extra, wall)
    else:
        for key, a in todo:
            (rep, extra), wall = _timed(run_fn, a)
            record(key, a, rep, extra, wall)
    runs.sort(key=lambda r: -r.rig)
    return GridResult(runs)


def _timed(fn, a):
    t0 = time.perf_counter()
    out = fn(a)
    return out, time.perf_counter() - t0


# grids explored per module (learning rates are searched separately)
MODULE_GRIDS = {
    "scale": {
        "factor": [0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1, 2, 3],
        "hidden_layers": [1, 2, 3],
        "activation": ["relu", "swish", "tanh"],
    },
    "fm_embed": {"latent_size": [2, 3, 4, 5, 6, 7, 8, 9, 10]},
    "encode": {
        "factor": [1.5, 2, 3, 4, 5, 6],
        "hidden_layers": [1, 2, 3],
        "activation": ["relu", "swish", "tanh"],
    },
    "nn_embed": {"hidden_layers": [1, 2, 3], "activation": ["relu", "swish", "tanh"]},
    "reweight": {},
}
