"""Next-event prediction, self-fed generation ("hallucination") and remainder scoring."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .lstm import forward_unrolled
from .nncore import make_rng
from .training import TrainedModel

log = logging.getLogger(__name__)

MODES = ("argmax", "sample")


class _Stepper:
    """Feeds ids one window at a time, carrying state (batch of one)."""

    def __init__(self, model: TrainedModel, kernels=None):
        self.model = model
        self.kernels = kernels
        self.states = None

    def feed(self, ids: Sequence[int]) -> np.ndarray:
        win = np.asarray(ids, dtype=np.int64).reshape(-1, 1)
        probs, self.states, _ = forward_unrolled(self.model.params, self.states, win, kernels=self.kernels)
        return probs[-1, 0]


def _input_ids(model: TrainedModel, tokens: Sequence[str]) -> list[int]:
    unknown = [t for t in tokens if t not in model.vocab_in]
    if unknown:
        log.warning("mapping unseen tokens to [UNK]: %s", sorted(set(unknown)))
    return model.vocab_in.ids(tokens, unknown_as_unk=True)


def predict_next(model: TrainedModel, prefix: Sequence[str], kernels=None) -> np.ndarray:
    """Distribution over the output vocabulary after reading ``prefix`` from zero state."""
    if len(prefix) == 0:
        raise ValueError("prefix must contain at least one token")
    return _Stepper(model, kernels).feed(_input_ids(model, prefix))


def predict_next_token(model: TrainedModel, prefix: Sequence[str], kernels=None) -> str:
    return model.vocab_out.id_to_token[int(np.argmax(predict_next(model, prefix, kernels)))]


@dataclass
class Hallucination:
    seed: list[str]
    generated: list[str]
    mode: str
    rng_seed: int | None = None
    capped: bool = False


def _choose(probs: np.ndarray, mode: str, rng: np.random.Generator | None) -> int:
    if mode == "argmax":
        return int(np.argmax(probs))
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probs) - 1)


def hallucinate(
    model: TrainedModel,
    seed_tokens: Sequence[str],
    mode: str = "sample",
    max_len: int = 1000,
    stop_at_eoc: bool = False,
    rng_seed: int | None = 0,
    kernels=None,
) -> Hallucination:
    """Generate tokens by feeding each prediction back as the next input.

    ``argmax`` takes the most probable token; ``sample`` draws from the
    output distribution. Stops after ``max_len`` tokens, or at the first
    end-of-case token when ``stop_at_eoc`` is set (the token is kept).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not seed_tokens:
        raise ValueError("seed sequence must be non-empty")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if not model.shared_vocab:
        raise ValueError("hallucination needs identical input and output vocabularies")
    rng = make_rng(rng_seed) if mode == "sample" else None
    eoc = model.schema.eoc_token
    step = _Stepper(model, kernels or _backend.kernels)
    probs = step.feed(_input_ids(model, seed_tokens))
    out: list[str] = []
    capped = True
    for _ in range(max_len):
        k = _choose(probs, mode, rng)
        tok = model.vocab_out.id_to_token[k]
        out.append(tok)
        if stop_at_eoc and tok == eoc:
            capped = False
            break
        probs = step.feed([k])
    return Hallucination(list(seed_tokens), out, mode, rng_seed, capped and stop_at_eoc)


_WS = re.compile(r"\s+")


def format_sequence(tokens: Sequence[str]) -> str:
    """One line of whitespace-separated tokens; whitespace inside a token becomes '_'."""
    return " ".join(_WS.sub("_", t) for t in tokens)


def write_hallucinations(halls: Sequence[Hallucination], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h in halls:
            fh.write(format_sequence(h.generated) + "\n")


def damerau_levenshtein_normed(a: Sequence, b: Sequence, kernels=None) -> float:
    """Optimal-string-alignment distance over token identities, divided by the longer length."""
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    k = kernels or _backend.kernels
    alphabet: dict = {}
    ia = np.array([alphabet.setdefault(t, len(alphabet)) for t in a], dtype=np.int64)
    ib = np.array([alphabet.setdefault(t, len(alphabet)) for t in b], dtype=np.int64)
    return k.osa_distance(ia, ib) / n


@dataclass
class RemainderPrediction:
    prefix: list[str]
    actual: list[str]
    predicted: list[str]
    distance: float
    capped: bool = False


def predict_remainder(
    model: TrainedModel,
    trace_tokens: Sequence[str],
    prefix_len: int,
    mode: str = "sample",
    rng_seed: int | None = 0,
    max_len: int = 1000,
    kernels=None,
) -> RemainderPrediction:
    """Continue the first ``prefix_len`` events until end-of-case and score the rest.

    End-of-case tokens are stripped from both sides before scoring.
    """
    eoc = model.schema.eoc_token
    events = [t for t in trace_tokens if t != eoc]
    if prefix_len < 1 or len(events) < prefix_len:
        raise ValueError(f"trace of {len(events)} events is too short for prefix {prefix_len}")
    prefix, actual = events[:prefix_len], events[prefix_len:]
    h = hallucinate(model, prefix, mode, max_len, stop_at_eoc=True, rng_seed=rng_seed, kernels=kernels)
    predicted = [t for t in h.generated if t != eoc]
    return RemainderPrediction(prefix, actual, predicted, damerau_levenshtein_normed(predicted, actual, kernels), h.capped)


@dataclass
class RemainderReport:
    rows: list[dict] = field(default_factory=list)
    skipped: int = 0

    @property
    def distances(self) -> list[float]:
        return [r["distance"] for r in self.rows]

    @property
    def mean(self) -> float:
        return float(np.mean(self.distances)) if self.rows else float("nan")

    @property
    def sd(self) -> float:
        return float(np.std(self.distances, ddof=1)) if len(self.rows) > 1 else 0.0


def remainder_report(
    model: TrainedModel,
    traces: Sequence[tuple[str, Sequence[str]]],
    prefix_len: int = 5,
    mode: str = "sample",
    seed: int = 0,
    max_len: int | None = None,
    kernels=None,
) -> RemainderReport:
    """Score remainder prediction over ``(case_id, tokens)`` pairs.

    Traces shorter than the prefix are skipped and counted. The generation cap
    defaults to ten times the mean trace length.
    """
    eoc = model.schema.eoc_token
    if max_len is None:
        lengths = [sum(t != eoc for t in toks) for _, toks in traces] or [1]
        max_len = max(1, int(np.ceil(10 * np.mean(lengths))))
    rep = RemainderReport()
    for k, (case_id, toks) in enumerate(traces):
        n_events = sum(t != eoc for t in toks)
        if n_events < prefix_len:
            rep.skipped += 1
            continue
        seed_k = int(np.random.SeedSequence([seed, k]).generate_state(1)[0])
        r = predict_remainder(model, toks, prefix_len, mode, seed_k, max_len, kernels)
        rep.rows.append({"case_id": case_id, "prefix_len": prefix_len, "distance": r.distance, "capped": r.capped})
    return rep
