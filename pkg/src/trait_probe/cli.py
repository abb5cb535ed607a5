"""Command-line entry point: synth, mfcc, sweeps, report, validate.

Exit codes: 0 success, 1 validation/pipeline error, 2 usage error. All
diagnostics go to stderr; machine-readable output goes to files only. Every
output-writing run drops a run.json provenance record next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .audio import mfcc, read_wav
from .errors import ParseError, TraitProbeError
from .feature_store import MODEL_SPECS, SOURCE_SSL, scan_store, write_features
from .manifest import load_manifest, summarize
from .nn import TrainConfig
from .sweep import (
    PcaPlan,
    SweepPlan,
    SweepSystem,
    parse_report_csv,
    render_report,
    run_layer_sweep,
    run_pca_sweep,
)
from .synth import SslSimSpec, SynthSpec, generate_corpus, generate_pseudo_ssl

log = logging.getLogger("trait_probe")

ENV_SEED = "TRAIT_PROBE_SEED"


def _parse_int_list(text: str) -> list[int]:
    """Accept '0-12' ranges and '0,3,7' lists (mixed: '0-2,5')."""
    out: list[int] = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "-" in tok[1:]:
            lo, hi = tok.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    if not out:
        raise ParseError(f"empty integer list {text!r}")
    return out


def _parse_best_layers(text: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if ":" not in tok:
            raise ParseError(f"expected model:layer, got {tok!r}")
        model, layer = tok.rsplit(":", 1)
        out[model] = int(layer)
    if not out:
        raise ParseError(f"empty best-layer list {text!r}")
    return out


def _load_plan_file(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def _apply_plan(args: argparse.Namespace) -> None:
    if not getattr(args, "plan", None):
        return
    plan = _load_plan_file(Path(args.plan))
    str_keys = ("manifest", "features", "task", "models", "layers", "ks",
                "best_layers", "out")
    int_keys = ("epochs", "batch_size", "patience", "seed")
    for key, val in plan.items():
        attr = key.replace("-", "_")
        if attr in str_keys:
            if getattr(args, attr, None) is None:
                setattr(args, attr, val)
        elif attr in int_keys:
            if getattr(args, attr, None) is None:
                setattr(args, attr, int(val))
        else:
            raise ParseError(f"unknown plan key {key!r}")


def _resolve_seed(args: argparse.Namespace) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(ENV_SEED)
    return int(env) if env else 0


def write_run_record(out_dir: Path, command: str, config: dict, seed: int) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    path = out_dir / "run.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size if args.batch_size is not None else 32,
        max_epochs=args.epochs if args.epochs is not None else 50,
        patience=args.patience if args.patience is not None else 7,
        seed=seed,
    )


# --- subcommands -------------------------------------------------------------


def _cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    ages = tuple(_parse_int_list(args.ages))
    lo, hi = (float(x) for x in args.duration.split(":"))
    ssl_sim = None
    if args.ssl_dim or args.ssl_layers:
        if not (args.ssl_dim and args.ssl_layers):
            log.error("--ssl-dim and --ssl-layers must be given together")
            return 2
        ssl_sim = SslSimSpec(
            n_layers=args.ssl_layers,
            dim=args.ssl_dim,
            signal_decay_per_layer=args.ssl_decay,
            signal_scale=args.ssl_signal,
            noise_scale=args.ssl_noise,
        )
    spec = SynthSpec(
        n_speakers=args.speakers,
        utterances_per_speaker=args.utts,
        age_classes=ages,
        duration_range_s=(lo, hi),
        train_fraction=args.train_fraction,
        dataset_name=args.dataset,
        seed=seed,
        ssl_sim=ssl_sim,
    )
    out_dir = Path(args.out)
    manifest = generate_corpus(spec, out_dir)
    log.info("wrote %d utterances under %s", len(manifest.entries), out_dir)
    if ssl_sim is not None:
        features_dir = Path(args.features_out or out_dir / "features")
        count = generate_pseudo_ssl(spec, manifest, features_dir)
        log.info("wrote %d pseudo-SSL feature files under %s", count, features_dir)
    write_run_record(out_dir, "synth", _echo_args(args), seed)
    return 0


def _cmd_mfcc(args) -> int:
    seed = _resolve_seed(args)
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    out_dir = Path(args.out)
    root = manifest_path.parent

    def one(entry):
        matrix = mfcc(read_wav(root / entry.audio_path))
        matrix.utterance_id = entry.utterance_id
        write_features(matrix, out_dir)

    if args.jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(one, manifest.entries))
    else:
        for entry in manifest.entries:
            one(entry)
    log.info("wrote %d MFCC feature files under %s", len(manifest.entries), out_dir)
    write_run_record(out_dir, "mfcc", _echo_args(args), seed)
    return 0


def _default_layers(model_id: str, spec_text) -> tuple:
    if spec_text:
        return tuple(_parse_int_list(spec_text))
    if model_id in MODEL_SPECS:
        return tuple(range(MODEL_SPECS[model_id].n_layers))
    raise ParseError(f"--layers is required for model {model_id!r}")


def _cmd_sweep_layers(args) -> int:
    _apply_plan(args)
    for required in ("manifest", "features", "models", "task"):
        if getattr(args, required) is None:
            log.error("missing required option --%s", required.replace("_", "-"))
            return 2
    seed = _resolve_seed(args)
    systems = []
    if not args.no_baseline:
        systems.append(SweepSystem(model_id="mfcc"))
    for model_id in args.models.split(","):
        model_id = model_id.strip()
        systems.append(
            SweepSystem(model_id=model_id, layers=_default_layers(model_id, args.layers))
        )
    plan = SweepPlan(
        manifest_path=Path(args.manifest),
        features_dir=Path(args.features),
        task=args.task,
        systems=tuple(systems),
        train=_train_config(args, seed),
        seed=seed,
    )
    report = run_layer_sweep(plan, jobs=args.jobs)
    out_dir = Path(args.out or "sweep-out")
    paths = render_report(report, out_dir)
    _log_report(report, paths)
    write_run_record(out_dir, "sweep-layers", _echo_args(args), seed)
    return 0


def _cmd_sweep_pca(args) -> int:
    _apply_plan(args)
    for required in ("manifest", "features", "best_layers", "task"):
        if getattr(args, required) is None:
            log.error("missing required option --%s", required.replace("_", "-"))
            return 2
    seed = _resolve_seed(args)
    plan = SweepPlan(
        manifest_path=Path(args.manifest),
        features_dir=Path(args.features),
        task=args.task,
        systems=(),
        train=_train_config(args, seed),
        seed=seed,
        pca=PcaPlan(
            best_layers=_parse_best_layers(args.best_layers),
            ks=tuple(_parse_int_list(args.ks)) if args.ks else None,
        ),
    )
    report = run_pca_sweep(plan, jobs=args.jobs)
    out_dir = Path(args.out or "sweep-out")
    paths = render_report(report, out_dir)
    _log_report(report, paths)
    write_run_record(out_dir, "sweep-pca", _echo_args(args), seed)
    return 0


def _cmd_report(args) -> int:
    seed = _resolve_seed(args)
    report = parse_report_csv(Path(args.infile))
    out_dir = Path(args.out)
    paths = render_report(report, out_dir)
    log.info("re-rendered %s", ", ".join(str(p) for p in paths))
    write_run_record(out_dir, "report", _echo_args(args), seed)
    return 0


def _cmd_validate(args) -> int:
    manifest = load_manifest(Path(args.manifest))
    table = summarize(manifest)
    log.info(
        "manifest ok: dataset=%s train(utt=%d male_spk=%d female_spk=%d dur=%.1fs) "
        "test(utt=%d male_spk=%d female_spk=%d dur=%.1fs)",
        manifest.dataset_name,
        table.train.n_utterances,
        table.train.n_male_speakers,
        table.train.n_female_speakers,
        table.train.total_duration_s,
        table.test.n_utterances,
        table.test.n_male_speakers,
        table.test.n_female_speakers,
        table.test.total_duration_s,
    )
    if args.features:
        models = (args.models or "none").split(",")
        checked = 0
        for model_id in models:
            model_id = model_id.strip()
            layers = _default_layers(model_id, args.layers)
            for layer in layers:
                for split in ("train", "test"):
                    handles = scan_store(
                        Path(args.features),
                        manifest,
                        source=SOURCE_SSL,
                        model_id=model_id,
                        layer=layer,
                        split=split,
                    )
                    for handle in handles:
                        handle.load().validate()
                        checked += 1
        log.info("feature store ok: %d files validated", checked)
    return 0


def _echo_args(args: argparse.Namespace) -> dict:
    skip = {"func"}
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in skip
    }


def _log_report(report, paths) -> None:
    for cell in report.rows:
        if cell.is_best:
            note = ""
            if cell.paper_ref_accuracy is not None:
                note = f" (published best: {cell.paper_ref_accuracy:.2f}%)"
            where = f"layer {cell.layer}" if cell.k is None else f"k={cell.k}"
            log.info(
                "best for %s: %s, accuracy %.4f%s",
                cell.model_id, where, cell.accuracy, note,
            )
    for model_id, result in sorted(report.wilcoxon.items()):
        if isinstance(result, str):
            log.info("wilcoxon %s vs baseline: %s", model_id, result)
        else:
            log.info(
                "wilcoxon %s vs baseline: W+=%.1f W-=%.1f n=%d p=%.3g (%s)",
                model_id, result.w_plus, result.w_minus,
                result.n_effective, result.p_value, result.method,
            )
    for path in paths:
        log.info("wrote %s", path)


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trait-probe",
        description="Layer-wise probing toolbench for age/gender classification",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${ENV_SEED} or 0)")
        p.add_argument("--jobs", type=int, default=1, help="worker pool size")
        p.add_argument("--quiet", action="store_true", help="suppress info logs")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=12)
    p.add_argument("--utts", type=int, default=4, help="utterances per speaker")
    p.add_argument("--ages", default="6-11")
    p.add_argument("--duration", default="1.0:2.0", help="seconds, LO:HI")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--ssl-layers", type=int, default=None)
    p.add_argument("--ssl-dim", type=int, default=None)
    p.add_argument("--ssl-decay", type=float, default=0.7)
    p.add_argument("--ssl-signal", type=float, default=4.0)
    p.add_argument("--ssl-noise", type=float, default=1.0)
    p.add_argument("--features-out", default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mfcc", help="extract MFCC baseline features")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mfcc)

    p = sub.add_parser("sweep-layers", help="train a probe per (model, layer)")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--models", default=None, help="comma-separated model ids")
    p.add_argument("--task", choices=("age", "gender"), default=None)
    p.add_argument("--layers", default=None, help="e.g. 0-12 or 0,1,5")
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--no-baseline", action="store_true",
                   help="skip the MFCC baseline system")
    p.add_argument("--plan", default=None, help="key=value plan file")
    p.set_defaults(func=_cmd_sweep_layers)

    p = sub.add_parser("sweep-pca", help="PCA sweep over the best layers")
    common(p)
    p.add_argument("--manifest", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--best-layers", default=None, help="model:layer,model:layer")
    p.add_argument("--task", choices=("age", "gender"), default=None)
    p.add_argument("--ks", default=None, help="e.g. 512,256,64")
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--plan", default=None, help="key=value plan file")
    p.set_defaults(func=_cmd_sweep_pca)

    p = sub.add_parser("report", help="re-render CSV and SVG from a report CSV")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("validate", help="validate a manifest and feature store")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--models", default=None)
    p.add_argument("--layers", default=None)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except TraitProbeError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    except OSError as exc:
        log.error("io error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
