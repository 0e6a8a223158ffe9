"""Reverse-mode gradients, Adam, the learning-rate schedule and the training loop.

Batches are processed one sequence at a time, each on its own tape, and the
per-sequence gradients are summed in batch-index order.  The loss history is
therefore bitwise independent of how many worker threads are used.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from lmulm.checkpoint import decode_json, encode_json, load_checkpoint, save_checkpoint
from lmulm.data import PackedCorpus
from lmulm.errors import ConfigError, StateError, TrainingDiverged
from lmulm.model import LanguageModel, ModelConfig, ModelParams
from lmulm.numerics.tensor import GradTape, Tensor, get_precision, precision

DIVERGE_FACTOR = 2.0
DIVERGE_STEPS = 100


@dataclass
class TrainConfig:
    batch: int = 16
    steps: int = 2000
    peak_lr: float = 3e-4
    warmup: int = 100
    plateau_factor: float = 0.5
    plateau_patience: int = 3
    plateau_tol: float = 1e-3
    eval_every: int = 100
    seed: int = 0
    precision: str = "f32"
    workers: int = 1
    val_fraction: float = 0.1
    max_eval_seqs: int = 64

    def __post_init__(self) -> None:
        if not 0 <= self.warmup < self.steps:
            raise ConfigError(f"need 0 <= warmup < steps, got warmup={self.warmup}, steps={self.steps}")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError(f"plateau factor must lie in (0, 1), got {self.plateau_factor}")
        if self.batch < 1 or self.workers < 1 or self.eval_every < 1 or self.plateau_patience < 1:
            raise ConfigError("batch, workers, eval_every and plateau_patience must be positive")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak learning rate must be positive, got {self.peak_lr}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")


# ---------------------------------------------------------------------------
# gradients


def backward(loss: Tensor, tape: GradTape | None) -> list[Tensor]:
    """Populate ``.grad`` on every trainable leaf that ``loss`` depends on."""
    if tape is None:
        raise StateError("backward needs the tape that recorded the loss")
    return tape.backward(loss)


def named_gradients(loss: Tensor, tape: GradTape, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients by parameter name, zeros for parameters the loss ignores."""
    by_id = tape.gradients(loss)
    return {k: (by_id[id(p)][1] if id(p) in by_id else np.zeros_like(p.data)) for k, p in params.items()}


def _scalar(out) -> Tensor:
    return out[0] if isinstance(out, tuple) else out


def finite_diff_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5) -> dict[str, float]:
    """Compare analytic gradients with central differences, tensor by tensor.

    Parameters
    ----------
    loss_fn : callable
        Recomputes the scalar loss from the current parameter values.  It may
        return a tuple whose first item is the loss.
    params : mapping of name to Tensor
    eps : float

    Returns
    -------
    dict
        ``max |analytic - numeric| / max |numeric|`` per tensor.  The
        denominator is floored at 1e-8 so tensors with vanishing gradients do
        not report noise as a large ratio.
    """
    if get_precision() != "f64":
        raise StateError("finite-difference checks need 64-bit precision")
    with GradTape() as tape:
        loss = _scalar(loss_fn())
    analytic = named_gradients(loss, tape, params)
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(_scalar(loss_fn()).data)
            flat[i] = orig - eps
            dn = float(_scalar(loss_fn()).data)
            flat[i] = orig
            num[i] = (up - dn) / (2 * eps)
        diff = np.abs(analytic[name].reshape(-1) - num).max()
        report[name] = float(diff / max(np.abs(num).max(), 1e-8))
    return report


# ---------------------------------------------------------------------------
# optimizer and schedule


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        step = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
        p.data = p.data - step
    return state


def lr_at(step: int, cfg: TrainConfig, plateau: float = 1.0) -> float:
    """Linear warmup then cosine decay to zero at ``cfg.steps``, times ``plateau``."""
    if not 0 <= step <= cfg.steps:
        raise ConfigError(f"step {step} outside [0, {cfg.steps}]")
    if step < cfg.warmup:
        base = cfg.peak_lr * step / cfg.warmup
    else:
        frac = (step - cfg.warmup) / (cfg.steps - cfg.warmup)
        base = cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return base * plateau


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainState:
    adam: AdamState
    step: int = 0
    plateau: float = 1.0
    best_val: float = math.inf
    stale_evals: int = 0
    initial_loss: float | None = None
    over_steps: int = 0


@dataclass
class EvalRecord:
    step: int
    val_nats: float
    per_position: np.ndarray


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)
    state: TrainState | None = None

    @property
    def train_losses(self) -> list[float]:
        return [row["train_nats"] for row in self.history]


def _item(model: LanguageModel, corpus: PackedCorpus, i: int):
    x, y, m = corpus.example(int(i))
    count = int(m.sum())
    if count == 0:
        return 0.0, 0, None
    with GradTape() as tape:
        loss, _ = model.loss(x, y, m)
    return float(loss.data), count, named_gradients(loss, tape, model.params.tensors)


def evaluate(model: LanguageModel, corpus: PackedCorpus, max_seqs: int | None = None) -> tuple[float, np.ndarray]:
    """Token-weighted mean loss and per-position mean loss over ``corpus``."""
    k = len(corpus) if max_seqs is None else min(len(corpus), max_seqs)
    rows, total, count = [], 0.0, 0
    for i in range(k):
        x, y, m = corpus.example(i)
        _, per = model.loss(x, y, m)
        rows.append(per)
        total += float(np.nansum(per))
        count += int(m.sum())
    per_pos = np.array(rows)
    with np.errstate(invalid="ignore"):
        valid = np.isfinite(per_pos)
        per_mean = np.where(valid, per_pos, 0.0).sum(axis=0) / valid.sum(axis=0)
    return (total / count if count else math.nan), per_mean


def train_loop(model: LanguageModel, corpus: PackedCorpus, cfg: TrainConfig, state: TrainState | None = None,
               stop_at: int | None = None, out_dir: str | None = None,
               log: Callable[[str], None] | None = None) -> TrainResult:
    """Train ``model`` on packed sequences with Adam.

    Batch indices for step ``s`` come from ``default_rng([seed, s])``, so a run
    resumed from ``state`` continues exactly where it left off.  Validation
    runs every ``eval_every`` steps and at the last step; the schedule is
    scaled by ``plateau_factor`` when validation stalls for
    ``plateau_patience`` evaluations.

    Raises
    ------
    TrainingDiverged
        If the training loss stays above twice its first value for 100
        consecutive steps.
    """
    with precision(cfg.precision):
        model.cast()
        model.H  # build the frozen kernel before threads start
        train, val = corpus.split(cfg.val_fraction)
        params = model.params.tensors
        state = state or TrainState(AdamState.zeros(params))
        result = TrainResult(state=state)
        last = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
        pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
        try:
            for step in range(state.step + 1, last + 1):
                idx = np.random.default_rng([cfg.seed, step]).integers(0, len(train), size=cfg.batch)
                items = list(pool.map(lambda i: _item(model, train, i), idx)) if pool else [_item(model, train, i) for i in idx]
                tokens = sum(c for _, c, _ in items)
                if tokens == 0:
                    raise StateError(f"step {step}: batch has no unmasked targets")
                grads = {k: np.zeros_like(p.data) for k, p in params.items()}
                loss = 0.0
                for li, c, g in items:  # fixed order reduction
                    if c == 0:
                        continue
                    w = c / tokens
                    loss += li * w
                    for k in grads:
                        grads[k] += w * g[k]
                lr = lr_at(step, cfg, state.plateau)
                adam_step(params, grads, state.adam, lr)
                state.step = step

                if state.initial_loss is None:
                    state.initial_loss = loss
                state.over_steps = state.over_steps + 1 if loss > DIVERGE_FACTOR * state.initial_loss else 0
                if state.over_steps >= DIVERGE_STEPS:
                    raise TrainingDiverged(
                        f"loss {loss:.4f} above {DIVERGE_FACTOR}x initial {state.initial_loss:.4f} "
                        f"for {DIVERGE_STEPS} steps (step {step}, lr {lr:.3g})")

                row = {"step": step, "lr": lr, "train_nats": loss, "val_nats": math.nan}
                if step % cfg.eval_every == 0 or step == cfg.steps:
                    v, per = evaluate(model, val, cfg.max_eval_seqs)
                    row["val_nats"] = v
                    result.evals.append(EvalRecord(step, v, per))
                    if v < state.best_val - cfg.plateau_tol:
                        state.best_val, state.stale_evals = v, 0
                    else:
                        state.stale_evals += 1
                        if state.stale_evals >= cfg.plateau_patience:
                            state.plateau *= cfg.plateau_factor
                            state.stale_evals = 0
                    if log:
                        log(f"step {step:5d}  lr {lr:.3e}  train {loss:.4f}  val {v:.4f}")
                result.history.append(row)
        finally:
            if pool:
                pool.shutdown()
        if out_dir:
            write_outputs(result, out_dir)
            save_training(os.path.join(out_dir, "checkpoint.lmuc"), model, cfg, state)
    return result


def write_outputs(result: TrainResult, out_dir: str) -> None:
    """Loss history CSV plus one per-position CSV per evaluation."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "history.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["step", "lr", "train_nats", "val_nats"])
        w.writeheader()
        w.writerows(result.history)
    for ev in result.evals:
        write_per_position(os.path.join(out_dir, f"per_position_{ev.step:06d}.csv"), ev.per_position)


def write_per_position(path: str, per_position: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "nats"])
        for i, v in enumerate(per_position, start=1):
            w.writerow([i, float(v)])


# ---------------------------------------------------------------------------
# persistence


def save_training(path: str, model: LanguageModel, cfg: TrainConfig | None = None, state: TrainState | None = None) -> None:
    """Parameters, optimizer moments and loop bookkeeping in one checkpoint."""
    arrays: dict[str, np.ndarray] = {f"param/{k}": p.data for k, p in model.params.items()}
    meta = {"model": model.cfg.to_dict(), "train": asdict(cfg) if cfg else None}
    if state is not None:
        arrays.update({f"adam.m/{k}": a for k, a in state.adam.m.items()})
        arrays.update({f"adam.v/{k}": a for k, a in state.adam.v.items()})
        meta["state"] = {"step": state.step, "t": state.adam.t, "plateau": state.plateau,
                         "best_val": state.best_val, "stale_evals": state.stale_evals,
                         "initial_loss": state.initial_loss, "over_steps": state.over_steps}
    arrays["meta"] = encode_json(meta)
    save_checkpoint(arrays, path, precision=cfg.precision if cfg else get_precision())


def load_training(path: str) -> tuple[LanguageModel, TrainConfig | None, TrainState | None]:
    """Inverse of :func:`save_training`."""
    arrays, _ = load_checkpoint(path)
    meta = decode_json(arrays["meta"])
    mcfg = ModelConfig(**meta["model"])
    params = ModelParams({k[6:]: Tensor(a, requires_grad=True, name=k[6:]) for k, a in arrays.items() if k.startswith("param/")})
    model = LanguageModel(mcfg, params)
    cfg = TrainConfig(**meta["train"]) if meta.get("train") else None
    state = None
    if "state" in meta:
        s = meta["state"]
        adam = AdamState({k[7:]: a for k, a in arrays.items() if k.startswith("adam.m/")},
                         {k[7:]: a for k, a in arrays.items() if k.startswith("adam.v/")}, s["t"])
        state = TrainState(adam, s["step"], s["plateau"], s["best_val"], s["stale_evals"], s["initial_loss"], s["over_steps"])
    return model, cfg, state
