"""Command-line front end.

Every subcommand takes an optional JSON config file (``--config``) with the
sections ``training``, ``schema`` and ``run``; explicit flags override it.
Outputs go to ``--out`` (default: ``$NEXTEVENT_OUTPUT_DIR`` or ``.``) and
each run writes a ``manifest.json`` echoing the resolved configuration and
the SHA-256 of its inputs.

Exit codes: 0 success, 1 internal error, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .analytics import ks_event_frequencies, mi_curve, zipf
from .eventlog import EventLog, TokenSchema, encode_aligned, read_log
from .inference import (
    format_sequence,
    hallucinate,
    predict_next,
    remainder_report,
    write_hallucinations,
)
from .lstm import export_states, forward_unrolled, write_states_jsonl
from .training import (
    TrainedModel,
    TrainingConfig,
    cross_validate,
    fit,
    schema_from_dict,
    schema_to_dict,
)

log = logging.getLogger("nextevent")

OUTPUT_ENV = "NEXTEVENT_OUTPUT_DIR"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    schema: TokenSchema = field(default_factory=TokenSchema)
    run: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"training": self.training.to_dict(), "schema": schema_to_dict(self.schema), "run": dict(self.run)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"training", "schema", "run"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            TrainingConfig.from_dict(d.get("training", {})),
            schema_from_dict(d.get("schema", {})),
            dict(d.get("run", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


# flag dest -> (section, key)
_TRAIN_FLAGS = {
    "m": "m", "T": "T", "B": "B", "epochs": "epochs", "full_lr_epochs": "full_lr_epochs",
    "base_lr": "base_lr", "lr_decay": "lr_decay", "init_scale": "init_scale",
    "max_grad_norm": "max_grad_norm", "dropout": "dropout", "recurrent_dropout": "recurrent_dropout", "forget_bias": "forget_bias",
    "peepholes": "peepholes", "n_layers": "n_layers", "seed": "seed",
    "shuffle_traces": "shuffle_traces", "folds": "folds", "curve_every": "curve_every",
    "eval_reset_per_trace": "eval_reset_per_trace",
}  # fmt: skip
_SCHEMA_FLAGS = {
    "lifecycle": "use_lifecycle", "resource_mode": "resource_mode", "resource_field": "resource_field",
    "separator": "separator", "eoc_token": "eoc_token", "durations": "duration_quantized",
    "quantum_seconds": "quantum",
}  # fmt: skip


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--m", type=int, help="embedding / hidden size (default 125)")
    g.add_argument("--T", type=int, help="unrolled steps (default 20)")
    g.add_argument("--B", type=int, help="batch size (default 20)")
    g.add_argument("--epochs", type=int)
    g.add_argument("--full-lr-epochs", type=int)
    g.add_argument("--base-lr", type=float)
    g.add_argument("--lr-decay", type=float)
    g.add_argument("--init-scale", type=float)
    g.add_argument("--max-grad-norm", type=float)
    g.add_argument("--dropout", type=float)
    g.add_argument("--recurrent-dropout", type=float, help="dropout on the recurrent input (default 0)")
    g.add_argument("--forget-bias", type=float)
    g.add_argument("--peepholes", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--n-layers", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--shuffle-traces", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--folds", type=int)
    g.add_argument("--curve-every", type=int, help="record precision every k epochs (0: off)")
    g.add_argument("--eval-reset-per-trace", action=argparse.BooleanOptionalAction, default=None)
    s = p.add_argument_group("encoding")
    s.add_argument("--lifecycle", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--resource-mode", choices=["none", "predictor_only", "predictor_and_predictand"])
    s.add_argument("--resource-field", choices=["resource", "group"])
    s.add_argument("--separator")
    s.add_argument("--eoc-token")
    s.add_argument("--durations", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--quantum-seconds", type=float)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nextevent", description="LSTM next-event prediction for process event logs")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({_backend.BACKEND} kernels)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a whole log; write checkpoint, vocabulary and epoch curve")
    _common(p)
    p.add_argument("--log", type=Path, help="event log (.xes or .csv)")
    _add_model_flags(p)

    p = sub.add_parser("crossval", help="k-fold cross-validated precision")
    _common(p)
    p.add_argument("--log", type=Path)
    p.add_argument("--jobs", type=int, default=None, help="parallel fold workers")
    _add_model_flags(p)

    p = sub.add_parser("predict", help="next-event distribution after a prefix")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("prefix", nargs="+", help="prefix tokens")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--states-out", type=Path, help="write hidden/cell states as JSON lines")

    p = sub.add_parser("hallucinate", help="generate sequences by feeding predictions back")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("-n", type=int, default=None, help="number of sequences (default 20)")
    p.add_argument("--length", type=int, default=None, help="tokens per sequence (default 1000)")
    p.add_argument("--mode", choices=["argmax", "sample"], default=None)
    p.add_argument("--seed-tokens", nargs="+", help="seed sequence (default: the end-of-case token)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("remainder", help="predict trace remainders from prefixes and score them")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--log", type=Path)
    p.add_argument("--prefix-len", type=int, default=None)
    p.add_argument("--mode", choices=["argmax", "sample"], default=None)
    p.add_argument("--max-len", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("stats", help="mutual information, Zipf and KS statistics")
    _common(p)
    p.add_argument("--log", type=Path)
    p.add_argument("--d-max", type=int, default=None)
    p.add_argument("--within-trace", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--compare", type=Path, help="log (.xes/.csv) or hallucination text file for the KS test")
    for flag in ("--lifecycle",):
        p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--resource-mode", choices=["none", "predictor_only", "predictor_and_predictand"])
    p.add_argument("--resource-field", choices=["resource", "group"])
    p.add_argument("--eoc-token")
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from exc
    base = {k: dict(v) for k, v in base.items()}
    tr, sc, run = base.setdefault("training", {}), base.setdefault("schema", {}), base.setdefault("run", {})
    ns = vars(args)
    for dest, key in _TRAIN_FLAGS.items():
        if ns.get(dest) is not None:
            tr[key] = ns[dest]
    for dest, key in _SCHEMA_FLAGS.items():
        if ns.get(dest) is not None:
            sc[key] = ns[dest]
    for dest in ("log", "checkpoint", "jobs", "n", "length", "mode", "seed_tokens", "prefix_len", "max_len",
                 "d_max", "within_trace", "compare", "top"):  # fmt: skip
        if ns.get(dest) is not None:
            v = ns[dest]
            run[dest] = str(v) if isinstance(v, Path) else v
    if ns.get("seed") is not None:
        run["seed"] = ns["seed"]
    try:
        return RunConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _out_dir(args) -> Path:
    out = args.out or Path(os.environ.get(OUTPUT_ENV, "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _need(run: dict, key: str, flag: str) -> str:
    if not run.get(key):
        raise UsageError(f"missing {flag}")
    return run[key]


def _load_log(path: str) -> EventLog:
    if not Path(path).is_file():
        raise UsageError(f"cannot read event log {path}")
    return read_log(path)


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs: dict, outputs: list[str], extra=None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "backend": _backend.BACKEND,
        "config": cfg.to_dict(),
        "seed": cfg.run.get("seed", cfg.training.seed),
        "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in inputs.items()},
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if x is None else x for x in r])


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    log_path = _need(cfg.run, "log", "--log")
    elog = _load_log(log_path)
    out = _out_dir(args)

    def progress(rec):
        log.info("epoch %d  lr %.4g  loss %.4f  train precision %s", rec.epoch, rec.learning_rate, rec.mean_loss, rec.train_precision)

    model, curve = fit(elog, cfg.schema, cfg.training, on_epoch=progress)
    model.save(out / "model.ckpt")
    (out / "vocab.json").write_text(model.vocab_in.to_json() + "\n", encoding="utf-8")
    outputs = ["model.ckpt", "vocab.json", "curve.csv"]
    if not model.shared_vocab:
        (out / "vocab_out.json").write_text(model.vocab_out.to_json() + "\n", encoding="utf-8")
        outputs.append("vocab_out.json")
    _write_csv(
        out / "curve.csv",
        ["epoch", "train_precision", "validation_precision", "learning_rate", "mean_loss"],
        [(r.epoch, r.train_precision, r.validation_precision, r.learning_rate, r.mean_loss) for r in curve],
    )
    _write_manifest(out, "train", cfg, {"log": log_path}, outputs)
    print(f"trained on {len(elog)} traces; vocabulary {model.vocab_in.v}; wrote {out / 'model.ckpt'}")
    return 0


def cmd_crossval(args) -> int:
    cfg = resolve_config(args)
    log_path = _need(cfg.run, "log", "--log")
    elog = _load_log(log_path)
    if len(elog) < cfg.training.folds:
        raise UsageError(f"{len(elog)} traces are fewer than {cfg.training.folds} folds")
    out = _out_dir(args)
    report = cross_validate(elog, cfg.schema, cfg.training, jobs=int(cfg.run.get("jobs", 1)))
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = report.fold_rows()
    _write_csv(out / "folds.csv", list(rows[0].keys()), [list(r.values()) for r in rows])
    _write_csv(
        out / "curves.csv",
        ["fold", "epoch", "train_precision", "validation_precision"],
        [list(r.values()) for r in report.curve_rows()],
    )
    _write_manifest(out, "crossval", cfg, {"log": log_path}, ["report.json", "folds.csv", "curves.csv"])
    print(
        f"{report.to_dict()['folds']}-fold: training {report.train_mean:.3f} (sd {report.train_sd:.3f}), "
        f"validation {report.validation_mean:.3f} (sd {report.validation_sd:.3f})"
    )
    return 0


def _load_model(path: str) -> TrainedModel:
    if not Path(path).is_file():
        raise UsageError(f"cannot read checkpoint {path}")
    try:
        return TrainedModel.load(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"invalid checkpoint {path}: {exc}") from exc


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    model = _load_model(cfg.run["checkpoint"])
    out = _out_dir(args)
    prefix = list(args.prefix)
    probs = predict_next(model, prefix)
    order = np.argsort(-probs, kind="stable")[: max(1, int(cfg.run.get("top", 5)))]
    result = {
        "prefix": prefix,
        "top": [{"token": model.vocab_out.id_to_token[k], "probability": float(probs[k])} for k in order],
    }
    (out / "predict.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    outputs = ["predict.json"]
    if args.states_out:
        ids = np.array(model.vocab_in.ids(prefix, unknown_as_unk=True)).reshape(-1, 1)
        _, _, acts = forward_unrolled(model.params, None, ids)
        write_states_jsonl(export_states(acts), args.states_out)
        outputs.append(str(args.states_out))
    _write_manifest(out, "predict", cfg, {"checkpoint": cfg.run["checkpoint"]}, outputs)
    for row in result["top"]:
        print(f"{row['probability']:.4f}  {row['token']}")
    return 0


def cmd_hallucinate(args) -> int:
    cfg = resolve_config(args)
    model = _load_model(cfg.run["checkpoint"])
    if not model.shared_vocab:
        raise UsageError("checkpoint uses distinct input/output vocabularies; cannot feed predictions back")
    out = _out_dir(args)
    n = int(cfg.run.setdefault("n", 20))
    length = int(cfg.run.setdefault("length", 1000))
    mode = cfg.run.setdefault("mode", "sample")
    seed = int(cfg.run.setdefault("seed", model.config.seed))
    seed_tokens = cfg.run.setdefault("seed_tokens", [model.schema.eoc_token])
    if n < 0 or length < 1:
        raise UsageError("-n must be >= 0 and --length >= 1")
    halls = [
        hallucinate(model, seed_tokens, mode, length, rng_seed=int(np.random.SeedSequence([seed, k]).generate_state(1)[0]))
        for k in range(n)
    ]
    write_hallucinations(halls, out / "hallucinations.txt")
    _write_manifest(out, "hallucinate", cfg, {"checkpoint": cfg.run["checkpoint"]}, ["hallucinations.txt"])
    print(f"wrote {n} sequences to {out / 'hallucinations.txt'}")
    return 0


def cmd_remainder(args) -> int:
    cfg = resolve_config(args)
    model = _load_model(cfg.run["checkpoint"])
    log_path = _need(cfg.run, "log", "--log")
    elog = _load_log(log_path)
    out = _out_dir(args)
    prefix_len = int(cfg.run.setdefault("prefix_len", 5))
    mode = cfg.run.setdefault("mode", "sample")
    seed = int(cfg.run.setdefault("seed", model.config.seed))
    tin, _ = encode_aligned(elog, model.schema)
    traces = [(tr.case_id, toks) for tr, toks in zip(elog.traces, tin)]
    rep = remainder_report(model, traces, prefix_len, mode, seed, cfg.run.get("max_len"))
    _write_csv(out / "remainder.csv", ["case_id", "prefix_len", "distance"], [(r["case_id"], r["prefix_len"], r["distance"]) for r in rep.rows])
    summary = {
        "mean": rep.mean,
        "sd": rep.sd,
        "scored": len(rep.rows),
        "skipped": rep.skipped,
        "capped": sum(r["capped"] for r in rep.rows),
    }
    (out / "remainder.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "remainder", cfg, {"checkpoint": cfg.run["checkpoint"], "log": log_path}, ["remainder.csv", "remainder.json"])
    print(f"mean normalized Damerau-Levenshtein distance {rep.mean:.3f} over {len(rep.rows)} traces ({rep.skipped} skipped)")
    return 0


def _read_tokens(path: str, schema: TokenSchema) -> tuple[list[str], list[int]]:
    """Token stream and per-position trace index from a log or a hallucination text file."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"cannot read {path}")
    if p.suffix.lower() in (".xes", ".csv"):
        tin, _ = encode_aligned(read_log(p), schema)
        toks = [format_sequence([t]) for tr in tin for t in tr]
        tix = [k for k, tr in enumerate(tin) for _ in tr]
        return toks, tix
    toks, tix = [], []
    for k, line in enumerate(p.read_text(encoding="utf-8").splitlines()):
        words = line.split()
        toks.extend(words)
        tix.extend([k] * len(words))
    return toks, tix


def cmd_stats(args) -> int:
    cfg = resolve_config(args)
    log_path = _need(cfg.run, "log", "--log")
    stream, tix = _read_tokens(log_path, cfg.schema)
    if not stream:
        raise UsageError(f"{log_path} contains no events")
    out = _out_dir(args)
    d_max = int(cfg.run.setdefault("d_max", min(20, len(stream) - 1)))
    if d_max < 1 or d_max >= len(stream):
        raise UsageError(f"--d-max must be in [1, {len(stream) - 1}]")
    curve = mi_curve(stream, d_max, tix if cfg.run.get("within_trace") else None)
    _write_csv(out / "mi.csv", ["d", "mi_bits"], curve.rows())
    rf = zipf(stream)
    _write_csv(out / "zipf.csv", ["rank", "token", "rel_freq"], rf.rows())
    summary = {
        "n_tokens": len(stream),
        "vocabulary": len(rf.tokens),
        "zipf_slope": rf.slope,
        "mi_fit": {
            name: None if fitres is None else asdict(fitres) | {"rate": fitres.rate}
            for name, fitres in (("exponential", curve.exponential), ("power", curve.power))
        },
    }
    outputs = ["mi.csv", "zipf.csv", "stats.json"]
    inputs = {"log": log_path}
    if cfg.run.get("compare"):
        other, _ = _read_tokens(cfg.run["compare"], cfg.schema)
        ks = ks_event_frequencies(stream, other)
        (out / "ks.json").write_text(
            json.dumps({"D": ks.D, "p_value": ks.p_value, "n_a": ks.n_a, "n_b": ks.n_b, "frequencies": ks.table}, indent=2) + "\n",
            encoding="utf-8",
        )
        summary["ks"] = {"D": ks.D, "p_value": ks.p_value}
        outputs.append("ks.json")
        inputs["compare"] = cfg.run["compare"]
    (out / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_manifest(out, "stats", cfg, inputs, outputs)
    print(f"{len(stream)} tokens, {len(rf.tokens)} types, Zipf slope {rf.slope:.3f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "crossval": cmd_crossval,
    "predict": cmd_predict,
    "hallucinate": cmd_hallucinate,
    "remainder": cmd_remainder,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OSError, ValueError, KeyError) as exc:
        print(f"nextevent {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"nextevent {args.command}: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
