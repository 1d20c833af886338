"""Command-line front end: synth, featurize, train, eval, ablate, gradcheck.

Every subcommand accepts ``--json`` (one JSON document on stdout, see
docs/cli_output.schema.json), ``--seed``, ``--out`` and ``--config``. Failures
print a single-line JSON object ``{"code", "message", "path"}`` on stderr and
exit nonzero. ``AMR_THREADS`` caps the worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

_threads = os.environ.get("AMR_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    # Has to precede the first numpy import to reach the BLAS pool.
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .errors import AmrError, ConfigError, InvalidArgumentError, WriteError  # noqa: E402

CONFIRM_THRESHOLD = 1_000_000
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(AmrError):
    code = "usage_error"


class CheckFailed(AmrError):
    code = "gradcheck_failed"

    def __init__(self, message: str, result: dict):
        super().__init__(message)
        self.result = result


class ConfirmationRequired(AmrError):
    code = "confirmation_required"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers

def worker_count(requested: int | None = None) -> int:
    """``requested`` (or the CPU count) capped by ``AMR_THREADS``."""
    n = requested if requested else (os.cpu_count() or 1)
    cap = os.environ.get("AMR_THREADS")
    if cap:
        try:
            cap_n = int(cap)
        except ValueError:
            raise ConfigError(f"AMR_THREADS must be a positive integer, got {cap!r}") from None
        if cap_n < 1:
            raise ConfigError(f"AMR_THREADS must be a positive integer, got {cap!r}")
        n = min(n, cap_n)
    return max(1, int(n))


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what} path")
    p = Path(path)
    if not p.exists():
        raise InvalidArgumentError(f"{what} not found", path=str(p))
    return p


def _load_json(path: Path, what: str) -> dict:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} is not valid JSON: {exc}", path=str(path)) from None
    if not isinstance(data, dict):
        raise ConfigError(f"{what} must be a JSON object", path=str(path))
    return data


def _file_config(args) -> dict:
    return _load_json(_existing(args.config, "config file"), "config file") if args.config else {}


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _merge(default: dict, file_sec: dict, cli: dict) -> dict:
    """CLI flag > config file > built-in default."""
    out = dict(default)
    out.update(file_sec)
    out.update({k: v for k, v in cli.items() if v is not None})
    return out


def _prepare_out_dir(path: str | None, what: str = "--out") -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteError(f"cannot create output directory: {exc}", path=str(p)) from exc
    return p


def _prepare_out_file(path: str | None) -> Path:
    if path is None:
        raise UsageError("--out is required")
    p = Path(path)
    if p.exists() and p.is_dir():
        raise InvalidArgumentError("--out names a directory, expected a file", path=str(p))
    if not p.parent.exists():
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise WriteError(f"cannot create output directory: {exc}", path=str(p.parent)) from exc
    return p


def write_effective_config(target: Path, config: dict) -> Path:
    """Directory outputs get ``effective_config.json``; file outputs a ``.effective_config.json`` sibling."""
    path = target / "effective_config.json" if target.is_dir() else \
        target.with_name(target.name + ".effective_config.json")
    try:
        path.write_text(json.dumps(config, indent=2, sort_keys=True, default=_jsonable) + "\n")
    except OSError as exc:
        raise WriteError(f"cannot write effective config: {exc}", path=str(path)) from exc
    return path


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _fmt_bytes(n: int) -> str:
    for unit in ("B", "KiB", "MiB", "GiB"):
        if n < 1024 or unit == "GiB":
            return f"{n:.1f} {unit}" if unit != "B" else f"{n} B"
        n /= 1024
    return f"{n:.1f} GiB"


def _log(args, msg: str) -> None:
    if not (args.json or args.quiet):
        print(msg, flush=True)


# ---------------------------------------------------------------------------
# report artefacts

def accuracy_svg(per_snr: dict[float, float], title: str = "Accuracy vs SNR",
                 width: int = 640, height: int = 400) -> str:
    """Self-contained SVG line plot of accuracy against SNR."""
    snrs = sorted(per_snr)
    ml, mr, mt, mb = 60, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    lo, hi = (snrs[0], snrs[-1]) if snrs else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 1, hi + 1

    def x(s):
        return ml + (s - lo) / (hi - lo) * pw

    def y(a):
        return mt + (1 - a) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>']
    for i in range(6):
        a = i / 5
        parts.append(f'<line x1="{ml}" y1="{y(a):.1f}" x2="{ml + pw}" y2="{y(a):.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 8}" y="{y(a) + 4:.1f}" text-anchor="end">{a:.1f}</text>')
    for s in snrs:
        parts.append(f'<line x1="{x(s):.1f}" y1="{mt + ph}" x2="{x(s):.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{x(s):.1f}" y="{mt + ph + 18}" text-anchor="middle">{s:g}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    if snrs:
        pts = " ".join(f"{x(s):.1f},{y(per_snr[s]):.1f}" for s in snrs)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
        for s in snrs:
            parts.append(f'<circle cx="{x(s):.1f}" cy="{y(per_snr[s]):.1f}" r="3" fill="#1f77b4"/>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">SNR (dB)</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 16 {mt + ph / 2:.1f})">Accuracy</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_embeddings_csv(path: Path, emb: np.ndarray, labels, snr_db, class_names) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "class_name", "snr_db"] + [f"e{i}" for i in range(emb.shape[1])])
            for row, lab, s in zip(emb, labels, snr_db):
                name = class_names[lab] if lab < len(class_names) else str(lab)
                w.writerow([int(lab), name, f"{float(s):g}"] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise WriteError(f"cannot write embeddings: {exc}", path=str(path)) from exc
    return path


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> dict:
    from .sigsynth import DatasetManifest, synth_dataset

    man_path = _existing(args.manifest, "manifest")
    data = _merge({}, _section(_file_config(args), "manifest"), {})
    data.update(_load_json(man_path, "manifest"))
    if args.seed is not None:
        data["seed"] = args.seed
    manifest = DatasetManifest.from_dict(data)
    est = manifest.estimated_bytes()
    _log(args, f"{manifest.frame_count} frames, estimated size {_fmt_bytes(est)} ({est} bytes)")
    if manifest.frame_count > CONFIRM_THRESHOLD and not args.confirm:
        raise ConfirmationRequired(
            f"{manifest.frame_count} frames (estimated {est} bytes) exceeds {CONFIRM_THRESHOLD}; "
            "rerun with --confirm", path=str(man_path))
    out = _prepare_out_file(args.out)
    workers = worker_count(args.workers)
    res = synth_dataset(manifest, out, workers=workers)
    eff = write_effective_config(out, {"manifest": json.loads(manifest.to_json()), "workers": workers})
    _log(args, f"wrote {res.path} ({res.frame_count} frames, sha256 {res.sha256[:16]}...)")
    return {"path": str(res.path), "manifest_path": str(res.manifest_path), "frame_count": res.frame_count,
            "estimated_bytes": est, "bytes": res.path.stat().st_size, "sha256": res.sha256,
            "outputs": {"dataset": str(res.path), "manifest": str(res.manifest_path),
                        "effective_config": str(eff)}}


def cmd_featurize(args) -> dict:
    from .featex import DEFAULT_RESOLUTION, featurize_dataset, write_features
    from .sigsynth import read_dataset

    src = _existing(args.input or args.input_flag, "dataset")
    opts = _merge({"resolution": DEFAULT_RESOLUTION, "eye_k": None, "eye_channels": 1},
                  _section(_file_config(args), "featurize"),
                  {"resolution": args.res, "eye_k": args.eye_k, "eye_channels": args.eye_channels})
    out = _prepare_out_file(args.out)
    raw = read_dataset(src)
    workers = worker_count(args.workers)
    fs = featurize_dataset(raw, int(opts["resolution"]), opts["eye_k"], int(opts["eye_channels"]),
                           workers=workers)
    write_features(fs, out)
    eff = write_effective_config(out, {"featurize": {**opts, "eye_k": fs.meta["eye_k"]},
                                       "input": str(src), "workers": workers})
    _log(args, f"wrote {out} ({len(fs)} samples at {fs.resolution}x{fs.resolution})")
    return {"path": str(out), "count": len(fs), "resolution": fs.resolution,
            "wavelet_length": int(fs.wavelet.shape[1]), "class_names": fs.class_names,
            "outputs": {"features": str(out), "effective_config": str(eff)}}


def _model_and_train_configs(args, features):
    from .mcanet import McanetConfig
    from .trainer import TrainConfig

    file_cfg = _file_config(args)
    derived = {"n_classes": features.n_classes, "image_res": features.resolution,
               "eye_channels": int(features.eye.shape[1]),
               "frame_length": int(features.meta.get("frame_length", 128))}
    model_d = _merge(McanetConfig(n_classes=max(2, derived["n_classes"])).to_dict(),
                     _section(file_cfg, "model"), {})
    model_d.update(derived)
    cli_train = {"epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
                 "patience": args.patience, "seed": args.seed}
    train_d = _merge(TrainConfig().to_dict(), _section(file_cfg, "train"), cli_train)
    unknown = set(file_cfg) - {"model", "train", "manifest", "featurize", "ablation", "eval"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}", path=args.config)
    if args.seed is not None:
        model_d["init_seed"] = args.seed
    return McanetConfig.from_dict(model_d), TrainConfig.from_dict(train_d), file_cfg


def _epoch_logger(args, prefix=""):
    def log(rec):
        _log(args, f"{prefix}epoch {rec['epoch']:3d}  train_loss {rec['train_loss']:.4f}  "
                   f"train_acc {rec['train_accuracy']:.3f}  val_loss {rec['val_loss']:.4f}  "
                   f"val_acc {rec['val_accuracy']:.3f}  ({rec['seconds']:.1f}s)")
    return log


def cmd_train(args) -> dict:
    from . import tensorcore as tc
    from .featex import read_features
    from .mcanet import McanetModel
    from .trainer import evaluate, split_dataset, train

    fs = read_features(_existing(args.features, "features"))
    model_cfg, train_cfg, _ = _model_and_train_configs(args, fs)
    out = _prepare_out_dir(args.out)
    eff = write_effective_config(out, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                                       "features": str(args.features)})
    sp = split_dataset(fs, train_cfg.split_ratio, train_cfg.seed)
    for w in sp.warnings:
        _log(args, f"warning: {w['message']}")
    tr, va, te = (fs.subset(i) for i in sp)
    with tc.default_dtype(np.float32):
        model = McanetModel(model_cfg)
    _log(args, f"training on {len(tr)} samples ({model.num_parameters()} parameters), "
               f"validating on {len(va)}, testing on {len(te)}")
    res = train(model, tr, va, train_cfg, out_dir=out, progress=_epoch_logger(args))
    rep = evaluate(model, te, train_cfg.eval_batch_size)
    rep.loss_curve = res.history
    rep.extra = {"split_warnings": sp.warnings, **res.summary()}
    paths = rep.write(out)
    split_path = out / "split.json"
    split_path.write_text(json.dumps({k: v.tolist() for k, v in zip(("train", "val", "test"), sp)}) + "\n")
    _log(args, f"test accuracy {rep.overall_accuracy:.4f} (best epoch {res.best_epoch}); "
               f"checkpoint {res.checkpoint}")
    return {"checkpoint": str(res.checkpoint), "n_parameters": model.num_parameters(),
            "test_overall_accuracy": rep.overall_accuracy, "test_highest_accuracy": rep.highest_accuracy,
            "train": res.summary(), "split_sizes": [len(tr), len(va), len(te)],
            "split_warnings": sp.warnings,
            "outputs": {"checkpoint": str(res.checkpoint), "metrics": str(paths["metrics"]),
                        "per_snr_csv": str(paths["per_snr"]), "split": str(split_path),
                        "effective_config": str(eff)}}


def cmd_eval(args) -> dict:
    from .featex import read_features
    from .mcanet import load_model
    from .trainer import embeddings, evaluate

    ckpt = _existing(args.checkpoint, "checkpoint")
    fs = read_features(_existing(args.features, "features"))
    opts = _merge({"batch_size": 256, "split": "all", "split_seed": 0}, _section(_file_config(args), "eval"),
                  {"batch_size": args.batch_size, "split": args.split, "split_seed": args.seed})
    model = load_model(ckpt)
    out = _prepare_out_dir(args.out)
    if opts["split"] != "all":
        from .trainer import split_dataset

        sp = split_dataset(fs, seed=int(opts["split_seed"]))
        fs = fs.subset(getattr(sp, opts["split"]))
    eff = write_effective_config(out, {"eval": opts, "checkpoint": str(ckpt), "features": str(args.features),
                                       "model": model.config.to_dict()})
    rep = evaluate(model, fs, int(opts["batch_size"]))
    paths = rep.write(out)
    svg = out / "accuracy_vs_snr.svg"
    svg.write_text(accuracy_svg(rep.per_snr_accuracy))
    emb_path = write_embeddings_csv(out / "embeddings.csv", embeddings(model, fs, int(opts["batch_size"])),
                                    fs.labels, fs.snr_db, rep.class_names)
    _log(args, f"overall accuracy {rep.overall_accuracy:.4f}, highest {rep.highest_accuracy:.4f} "
               f"over {len(fs)} samples")
    for s in rep.snr_grid:
        _log(args, f"  {s:6g} dB  {rep.per_snr_accuracy[s]:.4f}  (n={rep.per_snr_count[s]})")
    return {"overall_accuracy": rep.overall_accuracy, "highest_accuracy": rep.highest_accuracy,
            "count": len(fs), "per_snr_accuracy": {f"{s:g}": rep.per_snr_accuracy[s] for s in rep.snr_grid},
            "outputs": {"metrics": str(paths["metrics"]), "per_snr_csv": str(paths["per_snr"]),
                        "plot_svg": str(svg), "embeddings_csv": str(emb_path), "effective_config": str(eff)}}


def cmd_ablate(args) -> dict:
    from .featex import read_features
    from .trainer import VARIANTS, run_ablation, split_dataset

    fs = read_features(_existing(args.features, "features"))
    model_cfg, train_cfg, file_cfg = _model_and_train_configs(args, fs)
    abl = _merge({"seeds": [0, 1, 2], "variants": list(VARIANTS)}, _section(file_cfg, "ablation"),
                 {"seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None})
    bad = set(abl["variants"]) - set(VARIANTS)
    if bad:
        raise ConfigError(f"unknown ablation variants {sorted(bad)}", path=args.config)
    out = _prepare_out_dir(args.out)
    eff = write_effective_config(out, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                                       "ablation": abl, "features": str(args.features)})
    sp = split_dataset(fs, train_cfg.split_ratio, train_cfg.seed)
    tr, va, te = (fs.subset(i) for i in sp)

    def progress(variant, seed, rec):
        _log(args, f"[{variant} seed {seed}] epoch {rec['epoch']}  val_loss {rec['val_loss']:.4f}  "
                   f"val_acc {rec['val_accuracy']:.3f}")

    rep = run_ablation(model_cfg, tr, va, te, train_cfg, seeds=abl["seeds"], variants=abl["variants"],
                       out_dir=out, progress=progress)
    summary = rep.summary()
    _log(args, f"{'variant':16s} {'params':>8s} {'acc mean':>9s} {'acc std':>8s} {'delta':>8s} {'best ep':>8s}")
    for v, s in summary.items():
        _log(args, f"{v:16s} {s['n_parameters']:8d} {s['overall_accuracy_mean']:9.4f} "
                   f"{s['overall_accuracy_std']:8.4f} {s['delta_vs_full_mean']:+8.4f} "
                   f"{s['epochs_to_best_val_mean']:8.1f}")
    return {"summary": summary, "runs": [r.to_dict() for r in rep.runs],
            "outputs": {"json": str(out / "ablation.json"), "csv": str(out / "ablation.csv"),
                        "effective_config": str(eff)}}


def cmd_gradcheck(args) -> dict:
    from .gradsuite import cases_for, run_gradchecks

    cases_for(args.scope)  # validate before doing any work
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    start = time.perf_counter()

    def progress(rep):
        mark = "ok  " if rep.passed else "FAIL"
        _log(args, f"{mark} {rep.scope:12s} {rep.name:22s} max_rel_err {rep.max_rel_error:.2e} "
                   f"(tol {rep.tol:g}, {len(rep.seeds)} seeds)")

    reports = run_gradchecks(args.scope, seeds=seeds, progress=progress)
    failed = [r.name for r in reports if not r.passed]
    result = {"scope": args.scope, "passed": not failed, "failed": failed,
              "seconds": round(time.perf_counter() - start, 3), "checks": [r.to_dict() for r in reports]}
    if args.out:
        out = _prepare_out_dir(args.out)
        (out / "gradcheck.json").write_text(json.dumps(result, indent=2) + "\n")
        write_effective_config(out, {"scope": args.scope, "seeds": seeds})
    _log(args, f"{len(reports) - len(failed)}/{len(reports)} checks passed in {result['seconds']:.1f}s")
    if failed:
        raise CheckFailed(f"gradient check failed for: {', '.join(failed)}", result=result)
    return result


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {"synth": cmd_synth, "featurize": cmd_featurize, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit one JSON document on stdout")
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress human-readable progress")

    p = _Parser(prog="amrkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"amrkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="synthesize an AMRD dataset from a manifest")
    s.add_argument("manifest")
    s.add_argument("--confirm", action="store_true", help=f"allow more than {CONFIRM_THRESHOLD} frames")
    s.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("featurize", parents=[common], help="render rasters and wavelet vectors")
    s.add_argument("input", nargs="?", default=None)
    s.add_argument("--in", dest="input_flag", default=None, help="raw dataset (alternative to the positional)")
    s.add_argument("--res", type=int, default=None)
    s.add_argument("--eye-k", type=int, default=None)
    s.add_argument("--eye-channels", type=int, default=None, choices=(1, 2))
    s.add_argument("--workers", type=int, default=None)

    for name, helptext in (("train", "train a model"), ("ablate", "run the four-variant ablation")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("features")
        s.add_argument("--epochs", type=int, default=None)
        s.add_argument("--lr", type=float, default=None)
        s.add_argument("--batch-size", type=int, default=None)
        s.add_argument("--patience", type=int, default=None)
        if name == "ablate":
            s.add_argument("--seeds", default=None, help="comma-separated seeds (default 0,1,2)")

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("features")
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--split", choices=("all", "train", "val", "test"), default=None,
                   help="evaluate one split (re-derived with --seed) instead of the whole file")

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("scope", nargs="?", default="all",
                   help="paff, scape, freqformer, fusion-gate, encoder, ops, model or all")
    s.add_argument("--seeds", default=None, help="comma-separated seeds overriding each case's list")
    return p


_USAGE_ERRORS = (UsageError, ConfigError, InvalidArgumentError, ConfirmationRequired)


def error_line(exc: AmrError) -> str:
    return json.dumps({"code": exc.code, "message": exc.message, "path": exc.path})


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(error_line(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        result = COMMANDS[args.command](args)
        ok = True
    except CheckFailed as exc:
        result, ok = exc.result, False
        err = exc
    except (AmrError, OSError) as exc:
        if isinstance(exc, OSError) and not isinstance(exc, AmrError):
            exc = WriteError(str(exc), path=getattr(exc, "filename", None))
        print(error_line(exc), file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, _USAGE_ERRORS) else EXIT_FAILURE
    if args.json:
        print(json.dumps({"command": args.command, "ok": ok, "version": __version__, "result": result},
                         default=_jsonable, sort_keys=True))
    if not ok:
        print(error_line(err), file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
