"""Command-line entry point: train, evaluate, predict, synth, tabulate."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from ldnet.checkpoint import CheckpointError, load_checkpoint
from ldnet.config import RunConfigError, dump_run_config, load_run_config
from ldnet.dataset import DatasetError, load_dataset
from ldnet.features import AudioError, FeatureStore, extract_spectrogram
from ldnet.inference import check_mode, predict_dataset
from ldnet.metrics import CorrelationError, EvalReport, evaluate_split, read_report_rows, write_report_rows
from ldnet.model import CapabilityError
from ldnet.synthgen import SynthSpec, SynthSpecError, generate, write_synth
from ldnet.trainer import run_seeds

logger = logging.getLogger("ldnet")


class CommandError(Exception):
    pass


def _parse_seeds(text: str | None):
    if not text:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise CommandError(f"bad --seeds value {text!r}") from None


def _load_data(ratings, splits, audio_root, preset):
    if not ratings or not Path(ratings).exists():
        raise CommandError(f"ratings file not found: {ratings!r}")
    split_spec = splits or None
    if split_spec and split_spec not in ("vcc2018", "bvcc") and not Path(split_spec).exists():
        raise CommandError(f"split file not found: {split_spec!r}")
    return load_dataset(ratings, audio_root or None, split_spec, preset or "default")


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.override)
    seeds = _parse_seeds(args.seeds) or list(cfg.trainer.seeds)
    # all validation happens before the run directory exists
    dataset = _load_data(cfg.data.ratings, cfg.data.splits, cfg.data.audio_root, cfg.data.preset)
    out = Path(args.out) if args.out else Path("runs") / (Path(args.config).stem if args.config else "run")
    cfg.trainer = replace(cfg.trainer, seeds=tuple(seeds))
    features = FeatureStore(dataset.samples, cfg.features)
    modes = [cfg.inference.mode] if cfg.inference.mode else None

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.snapshot").write_text(dump_run_config(cfg))
    for seed in seeds:
        (out / f"seed{seed}").mkdir(exist_ok=True)
        (out / f"seed{seed}" / "config.snapshot").write_text(dump_run_config(cfg))
    result = run_seeds(cfg.model, dataset, cfg.objective, cfg.trainer, features, seeds, out, modes)

    tag = f"{cfg.model.family}/{cfg.model.encoder}/{cfg.model.decoder}"
    rows = [({"model": tag, "seed": seed, "mode": mode}, rep)
            for seed, reports in result.per_seed.items() for mode, rep in reports.items()]
    write_report_rows(out / "reports.csv", rows)
    for mode, rep in result.aggregate.items():
        (out / f"aggregate_{mode}.txt").write_text(rep.to_text())
        print(f"{tag} [{mode}] mean over seeds {seeds}: {rep.summary()}")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    mode = check_mode(ckpt.model, args.mode)
    dataset = _load_data(args.ratings, args.splits, args.audio_root, args.preset)
    features = FeatureStore(dataset.samples, ckpt.feature_config)
    preds = predict_dataset(ckpt.model, dataset.split(args.split), features, mode)
    report = evaluate_split(preds, dataset, args.split)
    print(report.to_text(), end="")
    if args.out:
        write_report_rows(args.out, [({"checkpoint": args.checkpoint, "mode": mode, "split": args.split}, report)])
    return 0


def _audio_files(path: Path):
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() == ".wav")
    return [path]


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    mode = check_mode(ckpt.model, args.mode)
    target = Path(args.path)
    if not target.exists():
        raise CommandError(f"no such file or directory: {target}")
    specs, failed = {}, []
    for f in _audio_files(target):
        try:
            specs[f.stem] = extract_spectrogram(f, ckpt.feature_config)
        except AudioError as exc:
            failed.append(f"{f}: {exc}")
    preds = predict_dataset(ckpt.model, list(specs), specs, mode) if specs else {}
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(("sample_id", "system_id", "predicted_mos"))
        for sid in specs:
            w.writerow((sid, "", repr(preds[sid])))
    finally:
        if out is not sys.stdout:
            out.close()
    if failed:
        print("unreadable audio:\n  " + "\n  ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(
        n_systems=args.n_systems, samples_per_system=args.samples_per_system, n_listeners=args.n_listeners,
        ratings_per_sample=args.ratings_per_sample, listener_bias_std=args.bias_std,
        rating_noise_std=args.noise_std, quality_range=(args.quality_low, args.quality_high), seed=args.seed,
        holdout_per_system=args.holdout_per_system, duration=args.duration,
    )
    spec.validate()
    paths = write_synth(generate(spec), args.out)
    print(f"wrote {len(list((Path(args.out) / 'wav').glob('*.wav')))} samples to {args.out}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def tabulate(rows) -> list[tuple[tuple, EvalReport, int]]:
    """Average reports over seeds, grouped by every other tag column."""
    groups = defaultdict(list)
    for tags, rep in rows:
        key = tuple((k, v) for k, v in tags.items() if k != "seed")
        groups[key].append(rep)
    out = []
    for key, reps in groups.items():
        flats = [r.flat() for r in reps]
        mean = {k: float(np.mean([f[k] for f in flats])) for k in flats[0]}
        out.append((key, EvalReport.from_flat(mean), len(reps)))
    return out


def cmd_tabulate(args) -> int:
    rows = []
    for path in args.reports:
        rows += read_report_rows(path)
    if not rows:
        raise CommandError("no report rows found")
    table = tabulate(rows)
    header = ["group", "n_seeds", "utt_mse", "utt_lcc", "utt_srcc", "sys_mse", "sys_lcc", "sys_srcc"]
    lines = []
    for key, rep, n in table:
        u, s = rep.utterance, rep.system
        group = " ".join(f"{k}={v}" for k, v in key)
        lines.append([group, str(n)] + [f"{x:.3f}" for x in (u.mse, u.lcc, u.srcc, s.mse, s.lcc, s.srcc)])
    width = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
    text = "\n".join("  ".join(c.ljust(w) for c, w in zip(r, width)) for r in [header] + lines)
    print(text)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(lines)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldnet", description="Listener-dependent MOS prediction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per seed and evaluate on the test split")
    p.add_argument("--config", help="INI run config")
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", help="run directory (default runs/<config name>)")
    p.set_defaults(func=cmd_train)

    def data_args(p):
        p.add_argument("--ratings", required=True)
        p.add_argument("--splits", help="split CSV or preset name")
        p.add_argument("--audio-root")
        p.add_argument("--preset", default="default")

    p = sub.add_parser("evaluate", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    data_args(p)
    p.add_argument("--split", default="test")
    p.add_argument("--mode", default="all_listeners", help="mean_net|all_listeners|mean_listener (or MN/All/ML)")
    p.add_argument("--out", help="CSV file for the report row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict MOS for a WAV file or a directory of WAVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("path")
    p.add_argument("--mode", default="all_listeners")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    d = SynthSpec()
    p = sub.add_parser("synth", help="write a synthetic listening test")
    p.add_argument("--out", required=True)
    p.add_argument("--n-systems", type=int, default=d.n_systems)
    p.add_argument("--samples-per-system", type=int, default=d.samples_per_system)
    p.add_argument("--n-listeners", type=int, default=d.n_listeners)
    p.add_argument("--ratings-per-sample", type=int, default=d.ratings_per_sample)
    p.add_argument("--bias-std", type=float, default=d.listener_bias_std)
    p.add_argument("--noise-std", type=float, default=d.rating_noise_std)
    p.add_argument("--quality-low", type=float, default=d.quality_range[0])
    p.add_argument("--quality-high", type=float, default=d.quality_range[1])
    p.add_argument("--holdout-per-system", type=int, default=d.holdout_per_system)
    p.add_argument("--duration", type=float, default=d.duration)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tabulate", help="merge per-seed report CSVs into one table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tabulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, RunConfigError, DatasetError, CapabilityError, CheckpointError, SynthSpecError,
            CorrelationError, AudioError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
