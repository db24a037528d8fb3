"""Command-line interface.

Subcommands and their outputs (all CSVs carry a header row):

  generate   dataset file (binary MGSQ format)
  train      checkpoint (binary MGNN) + sidecar JSON + ``epoch,loss`` CSV
  evaluate   ``t,error,error_normalized`` CSV; optional
             ``record_id,t,B_true,B_est`` sample trajectories
  baseline   ``t,error_smoothed,error_filtered`` CSV; optional
             ``t,B_true,B_smoothed,B_var_smoothed`` for one record
  compare    ``t,error_rnn,error_rnn_normalized,error_smoothed,error_filtered``
             CSV + ``metric,value`` summary CSV

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import compare as cmp
from . import gauss, nn, sim, train
from .kernels import backend_name

EXIT_USAGE = 2
EXIT_NUMERIC = 3

FULL_COUNT = 2_800_000
DESK_COUNT = 20_000

log = logging.getLogger("magrnn")


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file with 'physics', 'train' and 'paths' sections")
    p.add_argument("--seed", type=int, help="base seed (u64)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for generation/evaluation")
    p.add_argument("--desk-scale", action="store_true", help="use desk-scale defaults instead of full scale")
    p.add_argument("-v", "--verbose", action="store_true")


def _physics_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("physics (defaults: kappa2=18, mu=90, tau=0.01, n-steps=101, gamma-b=1, sigma-b=2)")
    g.add_argument("--kappa2", type=float, help="kappa^2 in 1/ms")
    g.add_argument("--mu", type=float, help="field coupling in 1/(pT ms)")
    g.add_argument("--tau", type=float, help="step in ms")
    g.add_argument("--n-steps", type=int, help="samples per record")
    g.add_argument("--gamma-b", type=float, help="field relaxation rate in 1/ms")
    g.add_argument("--sigma-b", type=float, help="field diffusion in pT^2/ms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magrnn",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a dataset")
    _common(p)
    _physics_flags(p)
    p.add_argument("--count", type=_positive_int, help="number of records")
    p.add_argument("--out", type=Path, help="dataset path")
    p.add_argument("--csv", type=Path, help="also export record 0 as t,signal,field")

    p = sub.add_parser("train", help="train the encoder-decoder network")
    _common(p)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path, help="checkpoint path; sidecar JSON is written next to it")
    p.add_argument("--metrics", type=Path, help="epoch,loss CSV (default: <out>.loss.csv)")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--hidden", type=_positive_int, help="hidden size m")
    p.add_argument("--eta", type=float)
    p.add_argument("--normalize-inputs", action="store_true", default=None)
    p.add_argument("--clip-norm", type=float)

    p = sub.add_parser("evaluate", help="time-resolved error of the network on a dataset")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path, help="t,error,error_normalized CSV")
    p.add_argument("--trajectories", type=Path, help="record_id,t,B_true,B_est CSV")
    p.add_argument("--n-samples", type=_positive_int, default=4)

    p = sub.add_parser("baseline", help="Kalman/RTS smoother error on a dataset")
    _common(p)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path, help="t,error_smoothed,error_filtered CSV")
    p.add_argument("--estimate", type=Path, help="t,B_true,B_smoothed,B_var_smoothed CSV for record 0")

    p = sub.add_parser("compare", help="network vs smoother on the same records")
    _common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--dataset", type=Path)
    p.add_argument("--out", type=Path, help="combined error CSV")
    p.add_argument("--summary", type=Path, help="metric,value CSV (default: <out>.summary.csv)")
    return parser


def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _path(args, cfg, name: str, required=True) -> Path | None:
    val = getattr(args, name, None)
    if val is None:
        val = cfg.get("paths", {}).get(name)
    if val is None and required:
        raise UsageError(f"--{name.replace('_', '-')} is required (flag or config paths.{name})")
    return Path(val) if val is not None else None


def physics_from(args, cfg) -> sim.PhysicsParams:
    d = dict(cfg.get("physics", {}))
    for flag, key in (("kappa2", "kappa2"), ("mu", "mu"), ("tau", "tau"), ("n_steps", "n_steps"),
                      ("gamma_b", "gamma_b"), ("sigma_b", "sigma_b")):
        v = getattr(args, flag, None)
        if v is not None:
            if key == "kappa2":
                d.pop("kappa", None)
            d[key] = v
    try:
        return sim.PhysicsParams.from_dict(d)
    except (TypeError, sim.ParameterError) as exc:
        raise UsageError(f"invalid physics parameters: {exc}")


def train_config_from(args, cfg) -> train.TrainConfig:
    desk = args.desk_scale or cfg.get("desk_scale", False)
    base = train.TrainConfig() if desk else train.TrainConfig.full()
    d = {**base.to_dict(), **cfg.get("train", {})}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("hidden", "m"), ("eta", "eta"),
                      ("normalize_inputs", "normalize_inputs"), ("clip_norm", "clip_norm"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    try:
        return train.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}")


def _load_dataset(path: Path) -> sim.Dataset:
    try:
        return sim.load_dataset(path)
    except FileNotFoundError:
        raise UsageError(f"dataset not found: {path}")
    except (OSError, sim.DatasetError) as exc:
        raise UsageError(f"cannot load dataset {path}: {exc}")


def sidecar_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.name + ".json")


def _load_model(path: Path):
    try:
        model = nn.load_checkpoint(path)
    except FileNotFoundError:
        raise UsageError(f"model not found: {path}")
    except (OSError, nn.CheckpointError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        model.input_mean = meta.get("input_mean", 0.0)
        model.input_std = meta.get("input_std", 1.0)
    return model, meta


def _check_lengths(meta: dict, ds: sim.Dataset):
    n = meta.get("n_steps")
    if n is not None and n != ds.params.n_steps:
        raise UsageError(f"model was trained on records of length {n}, dataset has {ds.params.n_steps}")


def cmd_generate(args, cfg) -> int:
    params = physics_from(args, cfg)
    desk = args.desk_scale or cfg.get("desk_scale", False)
    count = args.count or cfg.get("count") or (DESK_COUNT if desk else FULL_COUNT)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = _path(args, cfg, "out")
    ds = sim.generate_dataset(params, count, seed, workers=args.threads)
    try:
        sim.save_dataset(ds, out)
        if args.csv:
            sim.export_record_csv(params, ds[0], args.csv)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}")
    print(sim.dataset_path_summary(out))
    return 0


def cmd_train(args, cfg) -> int:
    ds = _load_dataset(_path(args, cfg, "dataset"))
    tcfg = train_config_from(args, cfg)
    out = _path(args, cfg, "out")
    metrics = args.metrics or Path(str(out) + ".loss.csv")
    log.info("training on %d records with %s (backend %s)", len(ds), tcfg, backend_name())
    try:
        model, report = train.train(ds, tcfg, progress=lambda e, l: print(f"epoch {e:3d}  loss {l:.6g}", flush=True))
    except train.TrainingDiverged as exc:
        print(f"magrnn: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    nn.save_checkpoint(model, out)
    report.write_csv(metrics)
    meta = {
        "train": tcfg.to_dict(),
        "dataset_header_sha256": ds.header_hash(),
        "n_steps": ds.params.n_steps,
        "input_mean": model.input_mean,
        "input_std": model.input_std,
        "checksum": report.checksum,
        "backend": backend_name(),
    }
    sidecar_path(out).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} (sha256 {hashlib.sha256(out.read_bytes()).hexdigest()[:16]}...), {metrics}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    model, meta = _load_model(_path(args, cfg, "model"))
    ds = _load_dataset(_path(args, cfg, "dataset"))
    _check_lengths(meta, ds)
    ec = train.evaluate_error_curve(model, ds, workers=args.threads)
    ec.write_csv(_path(args, cfg, "out"))
    if args.trajectories:
        train.write_trajectories_csv(ds, ec.estimates, args.trajectories, args.n_samples)
    s = ec.summary
    print(f"mid-interval error {s['mid']:.6g} pT^2, edge/middle {s['ratio_start']:.3g} (start) "
          f"{s['ratio_end']:.3g} (end)")
    return 0


def cmd_baseline(args, cfg) -> int:
    ds = _load_dataset(_path(args, cfg, "dataset"))
    params = ds.params
    if "physics" in cfg:
        params = physics_from(args, cfg)
    try:
        bc = gauss.baseline_error_curve(params, ds)
    except ValueError as exc:
        raise UsageError(str(exc))
    bc.write_csv(_path(args, cfg, "out"))
    if args.estimate:
        model = gauss.build_model(ds.params)
        _, sr = gauss.filter_smooth_batch(model, ds.signals[:1])
        gauss.write_estimate_csv(ds.params, ds.fields[0], sr, args.estimate)
    s = bc.summary_smoothed
    print(f"smoother mid-interval error {s['mid']:.6g} pT^2, edge/middle {s['ratio_start']:.3g} (start) "
          f"{s['ratio_end']:.3g} (end)")
    return 0


def cmd_compare(args, cfg) -> int:
    model, meta = _load_model(_path(args, cfg, "model"))
    ds = _load_dataset(_path(args, cfg, "dataset"))
    _check_lengths(meta, ds)
    summary, rnn, base = cmp.compare(model, ds, workers=args.threads)
    out = _path(args, cfg, "out")
    cmp.write_combined_csv(rnn, base, out)
    cmp.write_summary_csv(summary, args.summary or Path(str(out) + ".summary.csv"))
    print(cmp.format_summary(summary))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"magrnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"magrnn {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
