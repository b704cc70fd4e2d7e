"""Batched stream training, precision metric and k-fold cross-validation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from datetime import timedelta
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .eventlog import EventLog, TokenSchema, encode_aligned
from .lstm import (
    LstmState,
    NetworkParams,
    backward_unrolled,
    forward_unrolled,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .nncore import clip_by_global_norm, dropout_mask, make_rng
from .vocab import Vocabulary, build_vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    m: int = 125
    T: int = 20
    B: int = 20
    epochs: int = 100
    full_lr_epochs: int = 50
    base_lr: float = 1.0
    lr_decay: float = 0.75
    init_scale: float = 0.10
    max_grad_norm: float = 5.0
    dropout: float = 0.20
    # per-window unit dropout on h_{t-1} into the gates; off by default
    recurrent_dropout: float = 0.0
    forget_bias: float = 0.10
    peepholes: bool = False
    n_layers: int = 2
    seed: int = 0
    shuffle_traces: bool = False
    folds: int = 10
    # 0 disables the per-epoch precision curve; k records it every k epochs
    curve_every: int = 1
    eval_reset_per_trace: bool = False

    def __post_init__(self):
        for name in ("m", "T", "B", "epochs", "n_layers", "folds"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("base_lr", "lr_decay", "init_scale", "max_grad_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.recurrent_dropout < 1.0):
            raise ValueError("dropout rates must be in [0, 1)")
        if self.full_lr_epochs < 0 or self.curve_every < 0:
            raise ValueError("full_lr_epochs and curve_every must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(epoch: int, cfg: TrainingConfig) -> float:
    """Base rate through ``full_lr_epochs``, then multiplied by ``lr_decay`` each epoch."""
    if epoch < 1:
        raise ValueError("epochs are numbered from 1")
    if epoch <= cfg.full_lr_epochs:
        return cfg.base_lr
    return cfg.base_lr * cfg.lr_decay ** (epoch - cfg.full_lr_epochs)


# -- stream layout ------------------------------------------------------------


@dataclass
class BatchStream:
    """Concatenated token stream cut into ``B`` contiguous rows.

    ``targets[b, k]`` is the predictand following ``inputs[b, k]`` in the
    concatenated stream; the final token wraps to the stream start.
    """

    inputs: np.ndarray  # (B, seg)
    targets: np.ndarray  # (B, seg)
    T: int
    dropped: int

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[1] // self.T

    def window(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(j * self.T, (j + 1) * self.T)
        return self.inputs[:, sl].T, self.targets[:, sl].T


def flatten_stream(input_lists: Sequence[Sequence[int]], target_lists: Sequence[Sequence[int]] | None = None):
    """Flat input ids and the cyclically shifted target ids."""
    x = np.fromiter((i for tr in input_lists for i in tr), dtype=np.int64)
    src = input_lists if target_lists is None else target_lists
    p = np.fromiter((i for tr in src for i in tr), dtype=np.int64)
    if len(p) != len(x):
        raise ValueError("input and predictand streams differ in length")
    return x, np.roll(p, -1)


def make_stream(
    trace_id_lists: Sequence[Sequence[int]],
    B: int,
    T: int,
    target_id_lists: Sequence[Sequence[int]] | None = None,
) -> BatchStream:
    x, y = flatten_stream(trace_id_lists, target_id_lists)
    n = len(x)
    if n < B * T:
        raise ValueError(f"stream of {n} tokens is shorter than one batch window ({B}x{T})")
    seg = n // B
    kept = seg * B
    return BatchStream(x[:kept].reshape(B, seg), y[:kept].reshape(B, seg), T, n - kept)


# -- evaluation ----------------------------------------------------------------


def predict_stream(params: NetworkParams, ids: np.ndarray, chunk: int = 512, kernels=None) -> np.ndarray:
    """Argmax predictions along a single stream with state carried (B=1)."""
    states = None
    out = np.empty(len(ids), dtype=np.int64)
    for s in range(0, len(ids), chunk):
        win = ids[s : s + chunk].reshape(-1, 1)
        probs, states, _ = forward_unrolled(params, states, win, kernels=kernels)
        out[s : s + len(win)] = probs[:, 0, :].argmax(axis=1)
    return out


def precision(
    params: NetworkParams,
    input_ids,
    target_ids,
    unk_id: int | None = None,
    reset_at: Sequence[int] | None = None,
    kernels=None,
) -> float:
    """Fraction of positions whose argmax prediction equals the target.

    ``[UNK]`` never counts as correct, whether predicted or targeted.
    ``reset_at`` lists stream offsets where the state is zeroed (trace starts).
    """
    x = np.asarray(input_ids, dtype=np.int64)
    y = np.asarray(target_ids, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty evaluation stream")
    if reset_at:
        cuts = sorted(set(int(r) for r in reset_at if 0 < r < len(x)))
        bounds = [0, *cuts, len(x)]
        pred = np.concatenate([predict_stream(params, x[a:b], kernels=kernels) for a, b in zip(bounds, bounds[1:])])
    else:
        pred = predict_stream(params, x, kernels=kernels)
    ok = pred == y
    if unk_id is not None:
        ok &= y != unk_id
    return float(ok.mean())


# -- model bundle --------------------------------------------------------------


@dataclass
class TrainedModel:
    params: NetworkParams
    vocab_in: Vocabulary
    vocab_out: Vocabulary
    schema: TokenSchema
    config: TrainingConfig

    @property
    def shared_vocab(self) -> bool:
        return self.vocab_in.id_to_token == self.vocab_out.id_to_token

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "schema": schema_to_dict(self.schema),
            "vocab_in": self.vocab_in.to_list(),
            "vocab_out": self.vocab_out.to_list(),
        }
        save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        params, meta = load_checkpoint(path)
        vin = Vocabulary.from_list(meta["vocab_in"])
        vout = Vocabulary.from_list(meta["vocab_out"])
        if params.v_in != vin.v or params.v_out != vout.v:
            raise ValueError(f"{path}: vocabulary sizes do not match parameter shapes")
        return cls(params, vin, vout, schema_from_dict(meta["schema"]), TrainingConfig.from_dict(meta["config"]))


def schema_to_dict(schema: TokenSchema) -> dict:
    d = asdict(schema)
    d["quantum"] = schema.quantum.total_seconds()
    return d


def schema_from_dict(d: dict) -> TokenSchema:
    d = dict(d)
    if "quantum" in d:
        d["quantum"] = timedelta(seconds=float(d["quantum"]))
    return TokenSchema(**d)


@dataclass
class EncodedTraces:
    inputs: list[list[int]]
    predictands: list[list[int]]

    def stream(self) -> tuple[np.ndarray, np.ndarray]:
        return flatten_stream(self.inputs, self.predictands)

    def trace_starts(self) -> list[int]:
        starts, pos = [], 0
        for tr in self.inputs:
            starts.append(pos)
            pos += len(tr)
        return starts


def build_vocabularies(log_: EventLog, schema: TokenSchema) -> tuple[Vocabulary, Vocabulary]:
    tin, tout = encode_aligned(log_, schema)
    vin = build_vocabulary(tin, reserve_unk=True)
    vout = vin if schema.resource_mode != "predictor_only" else build_vocabulary(tout, reserve_unk=True)
    return vin, vout


def encode_ids(log_: EventLog, schema: TokenSchema, vocab_in: Vocabulary, vocab_out: Vocabulary, strict: bool = False):
    """Encode a log with existing vocabularies; unseen tokens become ``[UNK]`` unless ``strict``."""
    tin, tout = encode_aligned(log_, schema)
    lax = not strict
    return EncodedTraces(
        [vocab_in.ids(t, unknown_as_unk=lax) for t in tin],
        [vocab_out.ids(t, unknown_as_unk=lax) for t in tout],
    )


# -- training --------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    mean_loss: float
    train_precision: float | None = None
    validation_precision: float | None = None


def train(
    data: EncodedTraces,
    v_in: int,
    v_out: int,
    cfg: TrainingConfig,
    validation: EncodedTraces | None = None,
    unk_id: int | None = None,
    rng: np.random.Generator | None = None,
    kernels=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[NetworkParams, list[EpochRecord]]:
    """Plain SGD over the batched stream with the configured schedule.

    State is carried across windows within an epoch and reset at each epoch
    start. Each window's update uses the clipped mean gradient.
    """
    k = kernels or _backend.kernels
    rng = rng if rng is not None else make_rng(cfg.seed)
    params = init_params(rng, v_in, v_out, cfg.m, cfg.n_layers, cfg.peepholes, cfg.init_scale, cfg.forget_bias)
    stream = make_stream(data.inputs, cfg.B, cfg.T, data.predictands)
    tx, ty = data.stream()
    train_resets = data.trace_starts() if cfg.eval_reset_per_trace else None
    if validation is not None:
        vx, vy = validation.stream()
        val_resets = validation.trace_starts() if cfg.eval_reset_per_trace else None
    mask_shape = (cfg.T, cfg.B, cfg.m)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate(epoch, cfg)
        states = [LstmState.zeros(cfg.m, cfg.B) for _ in range(cfg.n_layers)]
        losses = []
        for j in range(stream.n_windows):
            x, y = stream.window(j)
            masks = None
            if cfg.dropout > 0:
                masks = [dropout_mask(rng, mask_shape, cfg.dropout) for _ in range(cfg.n_layers + 1)]
            rmasks = None
            if cfg.recurrent_dropout > 0:
                rmasks = [dropout_mask(rng, (cfg.m,), cfg.recurrent_dropout) for _ in range(cfg.n_layers)]
            _, states, acts = forward_unrolled(params, states, x, masks, kernels=k, recurrent_masks=rmasks)
            loss, grads = backward_unrolled(params, acts, y, kernels=k)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, window {j}")
            clipped, _ = clip_by_global_norm(grads.arrays(), cfg.max_grad_norm)
            for p, g in zip(params.arrays(), clipped):
                p -= lr * g
            losses.append(loss)
        rec = EpochRecord(epoch, lr, float(np.mean(losses)))
        if cfg.curve_every and (epoch % cfg.curve_every == 0 or epoch == cfg.epochs):
            rec.train_precision = precision(params, tx, ty, unk_id, train_resets, kernels=k)
            if validation is not None:
                rec.validation_precision = precision(params, vx, vy, unk_id, val_resets, kernels=k)
        curve.append(rec)
        log.debug("epoch %d lr %.4g loss %.4f", epoch, lr, rec.mean_loss)
        if on_epoch is not None:
            on_epoch(rec)
    return params, curve


def order_traces(log_: EventLog, cfg: TrainingConfig) -> EventLog:
    if not cfg.shuffle_traces:
        return log_
    perm = make_rng(np.random.SeedSequence([cfg.seed, 1])).permutation(len(log_))
    return log_.subset(perm.tolist())


def fit(log_: EventLog, schema: TokenSchema, cfg: TrainingConfig, kernels=None, on_epoch=None) -> tuple[TrainedModel, list[EpochRecord]]:
    """Build vocabularies, encode and train on a whole log."""
    log_ = order_traces(log_, cfg)
    vin, vout = build_vocabularies(log_, schema)
    data = encode_ids(log_, schema, vin, vout, strict=True)
    params, curve = train(data, vin.v, vout.v, cfg, unk_id=vout.unk_id, kernels=kernels, on_epoch=on_epoch)
    return TrainedModel(params, vin, vout, schema, cfg), curve


# -- cross-validation ------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    n_train_traces: int
    n_validation_traces: int
    train_precision: float
    validation_precision: float
    curve: list[EpochRecord] = field(default_factory=list)


@dataclass
class EvalReport:
    folds: list[FoldResult]

    @property
    def train_precisions(self) -> list[float]:
        return [f.train_precision for f in self.folds]

    @property
    def validation_precisions(self) -> list[float]:
        return [f.validation_precision for f in self.folds]

    @staticmethod
    def _sd(xs) -> float:
        return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0

    @property
    def train_mean(self) -> float:
        return float(np.mean(self.train_precisions))

    @property
    def train_sd(self) -> float:
        return self._sd(self.train_precisions)

    @property
    def validation_mean(self) -> float:
        return float(np.mean(self.validation_precisions))

    @property
    def validation_sd(self) -> float:
        return self._sd(self.validation_precisions)

    def to_dict(self) -> dict:
        return {
            "folds": len(self.folds),
            "train_precision": {"mean": self.train_mean, "sd": self.train_sd, "per_fold": self.train_precisions},
            "validation_precision": {
                "mean": self.validation_mean,
                "sd": self.validation_sd,
                "per_fold": self.validation_precisions,
            },
        }

    def fold_rows(self) -> list[dict]:
        return [
            {
                "fold": f.fold,
                "n_train_traces": f.n_train_traces,
                "n_validation_traces": f.n_validation_traces,
                "train_precision": f.train_precision,
                "validation_precision": f.validation_precision,
            }
            for f in self.folds
        ]

    def curve_rows(self) -> list[dict]:
        rows = []
        for f in self.folds:
            for r in f.curve:
                if r.train_precision is None:
                    continue
                rows.append(
                    {
                        "fold": f.fold,
                        "epoch": r.epoch,
                        "train_precision": r.train_precision,
                        "validation_precision": r.validation_precision,
                    }
                )
        return rows


def fold_partition(n: int, folds: int) -> list[list[int]]:
    """Contiguous, near-equal groups of indices covering range(n) exactly once."""
    if n < folds:
        raise ValueError(f"need at least {folds} traces for {folds}-fold cross-validation, got {n}")
    bounds = [round(k * n / folds) for k in range(folds + 1)]
    return [list(range(bounds[k], bounds[k + 1])) for k in range(folds)]


def run_fold(log_: EventLog, schema: TokenSchema, cfg: TrainingConfig, fold: int, backend: str | None = None) -> FoldResult:
    kernels = _backend.load(backend) if backend else None
    groups = fold_partition(len(log_), cfg.folds)
    val_idx = groups[fold]
    train_idx = [i for k, g in enumerate(groups) if k != fold for i in g]
    train_log, val_log = log_.subset(train_idx), log_.subset(val_idx)
    vin, vout = build_vocabularies(train_log, schema)
    tr = encode_ids(train_log, schema, vin, vout, strict=True)
    va = encode_ids(val_log, schema, vin, vout)
    rng = make_rng(np.random.SeedSequence([cfg.seed, 2, fold]))
    params, curve = train(tr, vin.v, vout.v, cfg, validation=va, unk_id=vout.unk_id, rng=rng, kernels=kernels)
    tx, ty = tr.stream()
    vx, vy = va.stream()
    tres = tr.trace_starts() if cfg.eval_reset_per_trace else None
    vres = va.trace_starts() if cfg.eval_reset_per_trace else None
    return FoldResult(
        fold,
        len(train_idx),
        len(val_idx),
        precision(params, tx, ty, vout.unk_id, tres, kernels=kernels),
        precision(params, vx, vy, vout.unk_id, vres, kernels=kernels),
        curve,
    )


def cross_validate(log_: EventLog, schema: TokenSchema, cfg: TrainingConfig, jobs: int = 1, backend: str | None = None) -> EvalReport:
    """k-fold cross-validation over contiguous trace groups (after optional seeded shuffle)."""
    if len(log_) < cfg.folds:
        raise ValueError(f"need at least {cfg.folds} traces for {cfg.folds}-fold cross-validation, got {len(log_)}")
    log_ = order_traces(log_, cfg)
    if jobs <= 1:
        results = [run_fold(log_, schema, cfg, k, backend) for k in range(cfg.folds)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(run_fold, log_, schema, cfg, k, backend) for k in range(cfg.folds)]
            results = [f.result() for f in futs]
    return EvalReport(results)
