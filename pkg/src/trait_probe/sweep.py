"""Layer-wise and PCA experiment orchestration with CSV/SVG reports.

Every (model, layer) or (model, k) cell trains the same classifier with the
same seed, so cells differ only by their input features. Failed cells are
recorded and rendered as gaps. Reports are byte-deterministic for a fixed
plan and seed: no timestamps enter the CSV.
"""

from __future__ import annotations

import csv
import hashlib
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import refs
from .errors import (
    AllZeroDifferences,
    InvalidK,
    ParseError,
    TooFewPairs,
    TraitProbeError,
    ValidationError,
)
from .feature_store import MODEL_SPECS, SOURCE_MFCC, SOURCE_SSL, scan_store
from .manifest import load_manifest, make_task_spec
from .nn import ClassifierConfig, TrainConfig, predict, train
from .pca import fit_pca, pca_sweep_dims, project
from .stats import PairingSpec, compare_to_baseline, compute_metrics

CSV_COLUMNS = (
    "dataset",
    "task",
    "model",
    "layer",
    "k",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "is_best",
    "paper_ref_accuracy",
    "seed",
    "config_hash",
)

SVG_WIDTH = 1200
SVG_HEIGHT = 675

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class SweepSystem:
    model_id: str  # "mfcc" or an ssl model id ("none" for pseudo features)
    layers: tuple = ()

    def validate(self) -> None:
        if self.model_id == "mfcc":
            return
        if self.model_id in MODEL_SPECS:
            spec = MODEL_SPECS[self.model_id]
            for layer in self.layers:
                if not 0 <= layer < spec.n_layers:
                    raise ValidationError(
                        f"layer {layer} outside [0, {spec.n_layers - 1}] "
                        f"for {self.model_id}"
                    )
        if not self.layers:
            raise ValidationError(f"system {self.model_id} has no layers")


@dataclass(frozen=True)
class PcaPlan:
    best_layers: dict  # model_id -> layer index
    ks: tuple | None = None  # None -> pca_sweep_dims(D)
    include_full_control: bool = True


@dataclass
class SweepPlan:
    manifest_path: Path
    features_dir: Path
    task: str
    systems: tuple = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    pca: PcaPlan | None = None
    pairing: PairingSpec | None = None

    def validate(self) -> None:
        if self.task not in ("age", "gender"):
            raise ValidationError(f"unknown task {self.task!r}")
        for system in self.systems:
            system.validate()

    def resolved_train(self) -> TrainConfig:
        cfg = self.train
        if cfg.seed != self.seed:
            cfg = TrainConfig(
                learning_rate=cfg.learning_rate,
                beta1=cfg.beta1,
                beta2=cfg.beta2,
                adam_eps=cfg.adam_eps,
                batch_size=cfg.batch_size,
                max_epochs=cfg.max_epochs,
                patience=cfg.patience,
                val_fraction=cfg.val_fraction,
                seed=self.seed,
            )
        return cfg

    def config_hash(self) -> str:
        cfg = self.resolved_train()
        parts = [
            self.task,
            str(self.seed),
            repr(
                [
                    (s.model_id, tuple(s.layers))
                    for s in self.systems
                ]
            ),
            repr(
                (
                    cfg.learning_rate,
                    cfg.beta1,
                    cfg.beta2,
                    cfg.adam_eps,
                    cfg.batch_size,
                    cfg.max_epochs,
                    cfg.patience,
                    cfg.val_fraction,
                )
            ),
        ]
        if self.pca is not None:
            parts.append(repr(sorted(self.pca.best_layers.items())))
            parts.append(repr(self.pca.ks))
            parts.append(repr(self.pca.include_full_control))
        digest = hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()
        return digest[:12]


@dataclass
class SweepCell:
    model_id: str
    layer: int  # -1 for mfcc
    k: int | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    n_test: int = 0
    predictions: list = field(default_factory=list)  # (utt, true, pred)
    error: str | None = None
    is_best: bool = False
    paper_ref_accuracy: float | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepReport:
    dataset: str
    task: str
    mode: str  # "layers" | "pca"
    rows: list
    wilcoxon: dict = field(default_factory=dict)  # model -> result or note
    seed: int = 0
    config_hash: str = ""
    created_utc: str = ""

    def best_cell(self, model_id: str):
        cells = [c for c in self.rows if c.model_id == model_id and c.is_best]
        return cells[0] if cells else None


def _load_split(plan, manifest, task_spec, source, model_id, layer, split):
    handles = scan_store(
        plan.features_dir,
        manifest,
        source=source,
        model_id=model_id if source == SOURCE_SSL else "none",
        layer=layer,
        split=split,
    )
    feats = [h.load().data.astype(np.float64) for h in handles]
    labels = np.array([task_spec.label_index(h.entry) for h in handles], dtype=np.int64)
    ids = [h.utterance_id for h in handles]
    return feats, labels, ids


def _train_and_score(
    train_feats, train_labels, test_feats, test_labels, test_ids, n_classes, train_cfg
):
    cfg = ClassifierConfig(in_dim=train_feats[0].shape[1], n_classes=n_classes)
    model, _ = train(train_feats, train_labels, cfg, train_cfg)
    preds = [predict(model, f)[0] for f in test_feats]
    report = compute_metrics(list(zip(test_labels, preds)), n_classes=n_classes)
    predictions = list(zip(test_ids, (int(t) for t in test_labels), preds))
    return report, predictions


def _fill_cell(cell: SweepCell, report, predictions) -> None:
    cell.accuracy = report.accuracy
    cell.precision = report.precision
    cell.recall = report.recall
    cell.f1 = report.f1
    cell.n_test = report.n_test
    cell.predictions = predictions


def _mark_best_layers(rows) -> None:
    by_model: dict = {}
    for cell in rows:
        if cell.ok:
            by_model.setdefault(cell.model_id, []).append(cell)
    for cells in by_model.values():
        cells.sort(key=lambda c: c.layer)  # ties resolve to the lower layer
        best = max(cells, key=lambda c: c.accuracy)
        best.is_best = True


def _mark_best_ks(rows) -> None:
    by_model: dict = {}
    for cell in rows:
        if cell.ok and cell.k is not None:
            by_model.setdefault(cell.model_id, []).append(cell)
    for cells in by_model.values():
        cells.sort(key=lambda c: c.k)  # ties resolve to the smaller k
        best = max(cells, key=lambda c: c.accuracy)
        best.is_best = True


def _run_cells(jobs: int, tasks):
    """Run cell closures on a bounded pool; order of results is fixed."""
    if jobs <= 1:
        return [fn() for fn in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn) for fn in tasks]
        return [f.result() for f in futures]


def run_layer_sweep(plan: SweepPlan, jobs: int = 1) -> SweepReport:
    """Train one probe per (model, layer) plus the MFCC baseline; pick bests."""
    plan.validate()
    manifest = load_manifest(plan.manifest_path)
    task_spec = make_task_spec(plan.task, manifest)
    train_cfg = plan.resolved_train()

    specs = []
    for system in plan.systems:
        if system.model_id == "mfcc":
            specs.append((SOURCE_MFCC, "mfcc", -1))
        else:
            for layer in system.layers:
                specs.append((SOURCE_SSL, system.model_id, layer))

    def make_task(source, model_id, layer):
        def job():
            cell = SweepCell(model_id=model_id, layer=layer)
            try:
                tr = _load_split(plan, manifest, task_spec, source, model_id, layer, "train")
                te = _load_split(plan, manifest, task_spec, source, model_id, layer, "test")
                report, predictions = _train_and_score(
                    tr[0], tr[1], te[0], te[1], te[2], task_spec.n_classes, train_cfg
                )
                _fill_cell(cell, report, predictions)
            except TraitProbeError as exc:
                cell.error = f"{type(exc).__name__}: {exc}"
            return cell

        return job

    rows = _run_cells(jobs, [make_task(*s) for s in specs])
    _mark_best_layers(rows)

    report = SweepReport(
        dataset=manifest.dataset_name,
        task=plan.task,
        mode="layers",
        rows=rows,
        seed=plan.seed,
        config_hash=plan.config_hash(),
        created_utc=datetime.now(timezone.utc).isoformat(),
    )

    baseline = next((c for c in rows if c.model_id == "mfcc" and c.ok), None)
    pairing = plan.pairing or PairingSpec(seed=plan.seed)
    for cell in rows:
        if cell.is_best:
            ref = refs.layer_reference(manifest.dataset_name, plan.task, cell.model_id)
            if ref is not None:
                cell.paper_ref_accuracy = ref[1]
        if cell.is_best and cell.model_id != "mfcc" and baseline is not None:
            report.wilcoxon[cell.model_id] = _safe_compare(
                baseline.predictions, cell.predictions, pairing
            )
    return report


def _safe_compare(baseline_predictions, candidate_predictions, pairing):
    try:
        return compare_to_baseline(baseline_predictions, candidate_predictions, pairing)
    except AllZeroDifferences:
        return "no difference"
    except TooFewPairs as exc:
        return f"insufficient pairs: {exc}"


def run_pca_sweep(plan: SweepPlan, jobs: int = 1) -> SweepReport:
    """PCA the best layer of each model and probe every reduced dimension.

    Each model gets a no-PCA reference row, a k=D rotation-control row, and
    one row per reduction target; PCA is fitted once per model on training
    frames and truncated per k.
    """
    plan.validate()
    if plan.pca is None:
        raise ValidationError("plan has no pca section")
    manifest = load_manifest(plan.manifest_path)
    task_spec = make_task_spec(plan.task, manifest)
    train_cfg = plan.resolved_train()

    rows: list = []
    wilcoxon: dict = {}
    pairing = plan.pairing or PairingSpec(seed=plan.seed)

    for model_id in sorted(plan.pca.best_layers):
        layer = plan.pca.best_layers[model_id]
        base_cell = SweepCell(model_id=model_id, layer=layer, k=None)
        try:
            tr_feats, tr_labels, _ = _load_split(
                plan, manifest, task_spec, SOURCE_SSL, model_id, layer, "train"
            )
            te_feats, te_labels, te_ids = _load_split(
                plan, manifest, task_spec, SOURCE_SSL, model_id, layer, "test"
            )
        except TraitProbeError as exc:
            base_cell.error = f"{type(exc).__name__}: {exc}"
            rows.append(base_cell)
            continue

        dim = tr_feats[0].shape[1]
        ks = list(plan.pca.ks) if plan.pca.ks is not None else pca_sweep_dims(dim)
        if plan.pca.include_full_control:
            ks = [dim] + [k for k in ks if k != dim]

        stacked = np.concatenate(tr_feats, axis=0)
        k_fit = min(dim, min(stacked.shape[0], 200_000) - 1)
        pca_full = fit_pca(
            stacked,
            k_fit,
            fitted_on=(model_id, layer, manifest.dataset_name, stacked.shape[0]),
            seed=plan.seed,
        )

        def make_task(cell, k=None):
            def job():
                try:
                    if k is None:
                        tr_k, te_k = tr_feats, te_feats
                    else:
                        if k > pca_full.k:
                            raise InvalidK(
                                f"k={k} exceeds fit rank {pca_full.k}"
                            )
                        pca_k = pca_full.truncated(k)
                        tr_k = [project(pca_k, f) for f in tr_feats]
                        te_k = [project(pca_k, f) for f in te_feats]
                    report, predictions = _train_and_score(
                        tr_k, tr_labels, te_k, te_labels, te_ids,
                        task_spec.n_classes, train_cfg,
                    )
                    _fill_cell(cell, report, predictions)
                except TraitProbeError as exc:
                    cell.error = f"{type(exc).__name__}: {exc}"
                return cell

            return job

        model_cells = [base_cell]
        tasks = [make_task(base_cell)]
        for k in ks:
            cell = SweepCell(model_id=model_id, layer=layer, k=int(k))
            model_cells.append(cell)
            tasks.append(make_task(cell, int(k)))
        _run_cells(jobs, tasks)
        rows.extend(model_cells)

    _mark_best_ks(rows)

    report = SweepReport(
        dataset=manifest.dataset_name,
        task=plan.task,
        mode="pca",
        rows=rows,
        wilcoxon=wilcoxon,
        seed=plan.seed,
        config_hash=plan.config_hash(),
        created_utc=datetime.now(timezone.utc).isoformat(),
    )

    for model_id in sorted(plan.pca.best_layers):
        best = report.best_cell(model_id)
        control = next(
            (c for c in rows if c.model_id == model_id and c.k is None and c.ok), None
        )
        if best is not None:
            ref = refs.pca_reference(manifest.dataset_name, plan.task, model_id)
            if ref is not None:
                best.paper_ref_accuracy = ref[1]
            if control is not None:
                report.wilcoxon[model_id] = _safe_compare(
                    control.predictions, best.predictions, pairing
                )
    return report


# --- rendering ---------------------------------------------------------------


def _format_float(value) -> str:
    return "" if value is None else f"{value:.6f}"


def report_to_csv_text(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for cell in report.rows:
        writer.writerow(
            [
                report.dataset,
                report.task,
                cell.model_id,
                cell.layer,
                "" if cell.k is None else cell.k,
                _format_float(cell.accuracy),
                _format_float(cell.precision),
                _format_float(cell.recall),
                _format_float(cell.f1),
                int(cell.is_best),
                "" if cell.paper_ref_accuracy is None else f"{cell.paper_ref_accuracy:.2f}",
                report.seed,
                report.config_hash,
            ]
        )
    return buf.getvalue()


def parse_report_csv(path) -> SweepReport:
    """Rebuild a (metrics-only) report from its CSV rendering."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ParseError(f"{path}: unexpected CSV header {header}")
        rows = []
        dataset = task = ""
        seed = 0
        config_hash = ""
        has_k = False
        for rec in reader:
            if len(rec) != len(CSV_COLUMNS):
                raise ParseError(f"{path}: row with {len(rec)} fields")
            dataset, task = rec[0], rec[1]
            cell = SweepCell(
                model_id=rec[2],
                layer=int(rec[3]),
                k=None if rec[4] == "" else int(rec[4]),
                accuracy=None if rec[5] == "" else float(rec[5]),
                precision=None if rec[6] == "" else float(rec[6]),
                recall=None if rec[7] == "" else float(rec[7]),
                f1=None if rec[8] == "" else float(rec[8]),
                is_best=rec[9] == "1",
                paper_ref_accuracy=None if rec[10] == "" else float(rec[10]),
            )
            if cell.accuracy is None:
                cell.error = "missing"
            has_k = has_k or cell.k is not None
            seed = int(rec[11])
            config_hash = rec[12]
            rows.append(cell)
    return SweepReport(
        dataset=dataset,
        task=task,
        mode="pca" if has_k else "layers",
        rows=rows,
        seed=seed,
        config_hash=config_hash,
    )


def _x_value(cell: SweepCell, mode: str):
    if mode == "pca":
        return cell.k  # None for the no-PCA reference row
    return cell.layer if cell.model_id != "mfcc" else None


def render_svg_text(report: SweepReport) -> str:
    """Deterministic line plot: accuracy (0-100) vs layer index or k."""
    left, right, top, bottom = 70.0, 230.0, 50.0, 60.0
    plot_w = SVG_WIDTH - left - right
    plot_h = SVG_HEIGHT - top - bottom

    series: dict[str, list] = {}
    baseline_acc = None
    for cell in report.rows:
        x = _x_value(cell, report.mode)
        if cell.model_id == "mfcc" and cell.ok:
            baseline_acc = cell.accuracy * 100.0
            continue
        if x is None:
            continue
        series.setdefault(cell.model_id, []).append(
            (x, None if not cell.ok else cell.accuracy * 100.0)
        )

    xs = sorted({x for pts in series.values() for x, _ in pts})
    if not xs:
        xs = [0]
    x_min, x_max = min(xs), max(xs)
    span = (x_max - x_min) or 1

    def sx(x):
        return left + (x - x_min) / span * plot_w

    def sy(acc):
        return top + (100.0 - acc) / 100.0 * plot_h

    xlabel = "reduced dimension k" if report.mode == "pca" else "layer index"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<text x="{left:.1f}" y="28" font-size="18" font-family="sans-serif">'
        f"{report.dataset} / {report.task} / {report.mode} sweep</text>",
    ]
    for tick in range(0, 101, 20):
        y = sy(tick)
        parts.append(
            f'<line x1="{left:.1f}" y1="{y:.1f}" x2="{left + plot_w:.1f}" '
            f'y2="{y:.1f}" stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{left - 10:.1f}" y="{y + 4:.1f}" font-size="12" '
            f'font-family="sans-serif" text-anchor="end">{tick}</text>'
        )
    step = max(1, len(xs) // 16)
    for x in xs[::step]:
        parts.append(
            f'<text x="{sx(x):.1f}" y="{top + plot_h + 20:.1f}" font-size="12" '
            f'font-family="sans-serif" text-anchor="middle">{x}</text>'
        )
    parts.append(
        f'<line x1="{left:.1f}" y1="{top + plot_h:.1f}" x2="{left + plot_w:.1f}" '
        f'y2="{top + plot_h:.1f}" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{left:.1f}" y1="{top:.1f}" x2="{left:.1f}" '
        f'y2="{top + plot_h:.1f}" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{SVG_HEIGHT - 16}" font-size="14" '
        f'font-family="sans-serif" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="20" y="{top + plot_h / 2:.1f}" font-size="14" '
        f'font-family="sans-serif" transform="rotate(-90 20 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle">accuracy (%)</text>'
    )

    if baseline_acc is not None:
        y = sy(baseline_acc)
        parts.append(
            f'<line x1="{left:.1f}" y1="{y:.1f}" x2="{left + plot_w:.1f}" '
            f'y2="{y:.1f}" stroke="#555555" stroke-width="1.5" '
            f'stroke-dasharray="8 4"/>'
        )

    legend_y = top + 10
    for idx, model_id in enumerate(sorted(series)):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = sorted(series[model_id])
        run: list = []
        for x, acc in pts:
            if acc is None:  # failed cell renders as a gap
                _emit_run(parts, run, color)
                run = []
            else:
                run.append((sx(x), sy(acc)))
        _emit_run(parts, run, color)
        for x, acc in pts:
            if acc is not None:
                parts.append(
                    f'<circle cx="{sx(x):.1f}" cy="{sy(acc):.1f}" r="3.5" '
                    f'fill="{color}"/>'
                )
        lx = left + plot_w + 20
        parts.append(
            f'<line x1="{lx:.1f}" y1="{legend_y:.1f}" x2="{lx + 26:.1f}" '
            f'y2="{legend_y:.1f}" stroke="{color}" stroke-width="2.5"/>'
        )
        parts.append(
            f'<text x="{lx + 32:.1f}" y="{legend_y + 4:.1f}" font-size="13" '
            f'font-family="sans-serif">{model_id}</text>'
        )
        legend_y += 22
    if baseline_acc is not None:
        lx = left + plot_w + 20
        parts.append(
            f'<line x1="{lx:.1f}" y1="{legend_y:.1f}" x2="{lx + 26:.1f}" '
            f'y2="{legend_y:.1f}" stroke="#555555" stroke-width="1.5" '
            f'stroke-dasharray="8 4"/>'
        )
        parts.append(
            f'<text x="{lx + 32:.1f}" y="{legend_y + 4:.1f}" font-size="13" '
            f'font-family="sans-serif">mfcc baseline</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _emit_run(parts: list, run: list, color: str) -> None:
    if len(run) < 2:
        return
    coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in run)
    parts.append(
        f'<polyline points="{coords}" fill="none" stroke="{color}" '
        f'stroke-width="2.5"/>'
    )


def render_report(report: SweepReport, out_dir) -> list[Path]:
    """Write <stem>.csv and <stem>.svg; returns the written paths."""
    if not report.rows:
        raise ValidationError("report has no rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"sweep_{report.mode}_{refs.dataset_key(report.dataset) or 'dataset'}_{report.task}"
    csv_path = out_dir / f"{stem}.csv"
    svg_path = out_dir / f"{stem}.svg"
    csv_path.write_text(report_to_csv_text(report), encoding="utf-8")
    svg_path.write_text(render_svg_text(report), encoding="utf-8")
    return [csv_path, svg_path]
