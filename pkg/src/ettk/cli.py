"""Command-line entry point: ``ettk <subcommand> ...``.

Exit status is 0 on success, 1 on a contract or data error and 2 on a
usage error. Every subcommand writes only below ``--out`` and leaves a
``run.json`` with the arguments, seed and effective configuration there.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_threads(argv) -> None:
    """Pin BLAS threads before numpy loads; default 1 for determinism."""
    n = os.environ.get("ETTK_THREADS", "1")
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    if n.isdigit() and int(n) >= 1:
        for var in _THREAD_VARS:
            os.environ[var] = n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ettk", description="Speech emotion transfer-learning toolkit.")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (default: $ETTK_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="shorthand for --set seed=N (default 0)")
        return sp

    s = add("synth-data", "Generate a synthetic corpus (WAV files plus manifest).")
    s.add_argument("--kind", choices=("asr", "ser"), required=True)
    s.add_argument("--utterances", type=int, default=600, help="ASR corpus size")
    s.add_argument("--sessions", type=int, default=3, help="SER sessions (two speakers each)")
    s.add_argument("--clips-per-speaker", type=int, default=100)
    s.add_argument("--format", choices=("float32", "pcm16"), default="float32")

    s = add("features", "Extract features for every clip of a manifest into one container.")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--kind", required=True, choices=("power_spec", "mfcc_delta", "mfcc_delta_pitch", "loudness", "asr_input"))
    s.add_argument("--format", choices=("ettk", "tsv"), default="ettk")

    s = add("train-asr", "Train the CTC speech recogniser.")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--val-manifest", type=Path, help="default: every 10th utterance of --manifest")
    s.add_argument("--config", type=Path)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    s = add("train-ser", "Train an emotion classifier on one leave-one-speaker-out fold.")
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--model", required=True, choices=("baseline", "ft_mp", "ft_rnn", "progressive"))
    s.add_argument("--tap", type=int, default=2, help="ASR recurrent layer to tap (transfer models)")
    s.add_argument("--asr-checkpoint", type=Path, help="pretrained ASR checkpoint (transfer models)")
    s.add_argument("--fold", type=int, default=0)
    s.add_argument("--train-limit", type=int, default=0, help="class-balanced subset of the training speakers")
    s.add_argument("--config", type=Path)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    s = add("eval", "Score a checkpoint on a manifest (CER for ASR, UA/WA/F1 for emotion).")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--fold", type=int, help="score only this fold's test speaker")

    s = add("probe", "Correlate one ASR unit with frame loudness.")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--layer", type=int, default=1)
    s.add_argument("--unit", type=int, default=0)

    s = add("export-embeddings", "Write utterance embeddings as TSV (id, label, vector).")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--manifest", required=True, type=Path)
    s.add_argument("--stage", default="pooled", help="pooled or tap-X")
    return p


# ------------------------------------------------------------------ helpers


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _record_run(out: Path, args, config: dict | None = None) -> None:
    info = {
        "command": args.command,
        "seed": args.seed,
        "arguments": {k: str(v) if isinstance(v, Path) else v for k, v in sorted(vars(args).items()) if k not in ("func", "threads")},
    }
    if config is not None:
        info["config"] = config
    _write(out, "run.json", json.dumps(info, indent=2, sort_keys=True) + "\n")


def _load_clips(manifest: Path, entries):
    from .audio import load_wav

    base = manifest.parent
    return [load_wav(base / e.path) for e in entries]


def _read_manifest(path: Path):
    from .data import read_asr_manifest, read_ser_manifest, sniff_manifest

    kind = sniff_manifest(path)
    entries = read_asr_manifest(path) if kind == "asr" else read_ser_manifest(path)
    return kind, entries


def _ser_examples(path: Path, records):
    from .data import filter_emotion_records
    from .train import ser_examples

    samples = filter_emotion_records(records)
    return ser_examples(_load_clips(path, [s.record for s in samples]), samples), samples


def _config(args):
    from .config import render_config, validate_config

    overrides = list(args.set) + ([] if args.seed is None else [f"seed={args.seed}"])
    cfg = validate_config(args.config, overrides)
    args.seed = cfg.train.seed
    _write(args.out, "config.effective", render_config(cfg))
    return cfg


# --------------------------------------------------------------- subcommands


def cmd_synth_data(args) -> None:
    from .audio import write_wav
    from .data import write_asr_manifest, write_ser_manifest
    from .synth import AsrSynthSpec, SerSynthSpec, synth_asr_corpus, synth_ser_corpus

    if args.kind == "asr":
        clips, entries = synth_asr_corpus(AsrSynthSpec(n_utterances=args.utterances), args.seed)
    else:
        clips, entries = synth_ser_corpus(SerSynthSpec(sessions=args.sessions, clips_per_speaker=args.clips_per_speaker), args.seed)
    (args.out / args.kind).mkdir(exist_ok=True)
    for clip, e in zip(clips, entries):
        write_wav(args.out / e.path, clip, args.format)
    (write_asr_manifest if args.kind == "asr" else write_ser_manifest)(args.out / "manifest.tsv", entries)
    _record_run(args.out, args)
    print(f"wrote {len(entries)} clips and {args.out / 'manifest.tsv'}")


def cmd_features(args) -> None:
    from .checkpoint import write_tensor_file
    from .features import EXTRACTORS

    _, entries = _read_manifest(args.manifest)
    clips = _load_clips(args.manifest, entries)
    feats = {e.path: EXTRACTORS[args.kind](c) for e, c in zip(entries, clips)}
    if args.format == "ettk":
        write_tensor_file(args.out / "features.ettk", feats, {"kind": "features", "feature": args.kind, "frame_rate": 100.0})
    else:
        lines = [f"{path}\t{t}\t" + "\t".join(f"{v:.8g}" for v in row) for path, arr in feats.items() for t, row in enumerate(arr)]
        _write(args.out, "features.tsv", "\n".join(lines) + "\n")
    _record_run(args.out, args)
    print(f"extracted {args.kind} for {len(feats)} clips")


def cmd_train_asr(args) -> None:
    from .checkpoint import save_checkpoint
    from .data import filter_long_utterances, read_asr_manifest
    from .metrics import history_csv
    from .models import build_asr
    from .pipeline import asr_spec_for
    from .train import INIT, asr_examples, evaluate_asr, stream_rng, train

    cfg = _config(args)
    entries = filter_long_utterances(read_asr_manifest(args.manifest))
    examples = asr_examples(_load_clips(args.manifest, entries), entries)
    if args.val_manifest:
        ventries = filter_long_utterances(read_asr_manifest(args.val_manifest))
        val = asr_examples(_load_clips(args.val_manifest, ventries), ventries)
        tr = examples
    else:
        val = examples[::10]
        tr = [e for i, e in enumerate(examples) if i % 10]
    model = build_asr(asr_spec_for(cfg.asr_size, cfg.asr_hidden), stream_rng(cfg.train.seed, INIT))
    result = train(model, tr, val, cfg.train, log=print)
    rate, _ = evaluate_asr(result.model, val)
    result.checkpoint.metadata["cer"] = rate
    save_checkpoint(result.checkpoint, args.out / "model.ettk")
    _write(args.out, "history.csv", history_csv(result.history))
    _write(args.out, "metrics.json", json.dumps({"cer": rate, "seed": cfg.train.seed, "best_epoch": result.best_epoch}, sort_keys=True) + "\n")
    _record_run(args.out, args, cfg.as_dict())
    print(f"validation CER {rate:.4f}; checkpoint {args.out / 'model.ettk'}")


def _write_ser_report(out: Path, report, cm) -> None:
    from .metrics import confusion_csv, report_jsonl, report_table

    _write(out, "report.txt", report_table(report))
    _write(out, "report.jsonl", report_jsonl([report]))
    _write(out, "confusion.csv", confusion_csv(cm))


def cmd_train_ser(args) -> None:
    from .checkpoint import read_checkpoint, save_checkpoint
    from .data import read_ser_manifest
    from .errors import ContractError
    from .metrics import history_csv
    from .pipeline import balanced_subset, run_ser, ser_fold

    cfg = _config(args)
    records = read_ser_manifest(args.manifest)
    clips = _load_clips(args.manifest, records)
    train_set, val_set, test_set = ser_fold(clips, records, args.fold)
    if args.train_limit:
        train_set = balanced_subset(train_set, args.train_limit, cfg.train.seed)
    asr = None
    if args.model != "baseline":
        if args.asr_checkpoint is None:
            raise ContractError(f"--model {args.model} needs --asr-checkpoint")
        asr = read_checkpoint(args.asr_checkpoint, "asr")
    result, report, cm = run_ser(args.model, train_set, val_set, test_set, cfg.train, args.tap, asr, cfg.ser_hidden, args.fold, log=print)
    if asr is not None:
        result.checkpoint.spec = _with_asr_path(result.checkpoint.spec, args.asr_checkpoint)
    save_checkpoint(result.checkpoint, args.out / "model.ettk")
    _write(args.out, "history.csv", history_csv(result.history))
    _write_ser_report(args.out, report, cm)
    _record_run(args.out, args, cfg.as_dict())
    print(f"test UA {report.ua:.4f}  WA {report.wa:.4f}; checkpoint {args.out / 'model.ettk'}")


def _with_asr_path(spec, path: Path):
    from dataclasses import replace

    return replace(spec, asr_checkpoint=str(path))


def cmd_eval(args) -> None:
    from .checkpoint import load_checkpoint, spec_name
    from .data import apply_split, loso_splits
    from .errors import SpecMismatchError
    from .metrics import report_table
    from .models import AsrNet
    from .train import asr_examples, evaluate_asr, evaluate_ser

    model = load_checkpoint(args.checkpoint)
    kind, entries = _read_manifest(args.manifest)
    is_asr = isinstance(model, AsrNet)
    if is_asr != (kind == "asr"):
        raise SpecMismatchError(
            f"spec mismatch: checkpoint holds a {spec_name(model.spec)} model but {args.manifest} is an {kind.upper()} manifest"
        )
    if is_asr:
        rate, hyps = evaluate_asr(model, asr_examples(_load_clips(args.manifest, entries), entries))
        _write(args.out, "metrics.json", json.dumps({"cer": rate}, sort_keys=True) + "\n")
        _write(args.out, "hypotheses.tsv", "".join(f"{e.path}\t{h}\t{e.transcript}\n" for e, h in zip(entries, hyps)))
        print(f"CER {rate:.4f}")
    else:
        examples, samples = _ser_examples(args.manifest, entries)
        if args.fold is not None:
            plan = loso_splits(samples)[args.fold]
            keep = {s.record.path for s in apply_split(samples, plan)[2]}
            examples = [e for e in examples if e.id in keep]
        report, cm = evaluate_ser(model, examples, fold=args.fold, seed=model.metadata.get("seed"))
        _write_ser_report(args.out, report, cm)
        print(report_table(report), end="")
    _record_run(args.out, args)


def cmd_probe(args) -> None:
    from .checkpoint import load_checkpoint
    from .probe import neuron_probe

    net = load_checkpoint(args.checkpoint, "asr")
    _, entries = _read_manifest(args.manifest)
    res = neuron_probe(net, _load_clips(args.manifest, entries), args.layer, args.unit)
    rows = "".join(f"{e.path}\t{'NaN' if r is None else f'{r:.6f}'}\n" for e, r in zip(entries, res.per_clip))
    _write(args.out, "probe.tsv", rows)
    _write(args.out, "probe.json", json.dumps({"layer": res.layer, "unit": res.unit, "mean_r": res.mean}, sort_keys=True) + "\n")
    _record_run(args.out, args)
    print(f"layer {res.layer} unit {res.unit}: mean r = {res.mean}")


def cmd_export_embeddings(args) -> None:
    from .checkpoint import load_checkpoint
    from .probe import export_embeddings

    model = load_checkpoint(args.checkpoint)
    _, records = _read_manifest(args.manifest)
    examples, _ = _ser_examples(args.manifest, records)
    _write(args.out, "embeddings.tsv", export_embeddings(model, examples, args.stage))
    _record_run(args.out, args)
    print(f"exported {len(examples)} embeddings")


COMMANDS = {
    "synth-data": cmd_synth_data,
    "features": cmd_features,
    "train-asr": cmd_train_asr,
    "train-ser": cmd_train_ser,
    "eval": cmd_eval,
    "probe": cmd_probe,
    "export-embeddings": cmd_export_embeddings,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    from .errors import EttkError

    if args.seed is None and not hasattr(args, "config"):
        args.seed = 0
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except (EttkError, ValueError, OSError, KeyError, IndexError) as exc:
        print(f"ettk {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
