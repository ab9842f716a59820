"""Evaluation reports, the per-lead sweep and the loss-term ablation grid."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import trainer
from .checkpoint import Checkpoint
from .metrics import f1_macro, macro_auc, mean_accuracy, per_class_auc
from .models import BackboneConfig
from .signal import Dataset
from .trainer import TrainConfig


@dataclass
class EvalReport:
    macro_auc: float | None
    macro_f1: float
    mean_accuracy: float
    per_class: list[dict] = field(default_factory=list)
    n_records: int = 0
    lead: int | None = None
    fold: int | None = None

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _finite_or_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else float(v)


def evaluate(checkpoint: Checkpoint, dataset: Dataset, fold: int, lead: int | None = None) -> EvalReport:
    """Eval-mode metrics of one model on one fold; single-lead models need ``lead``."""
    man = dataset.manifest
    if checkpoint.backbone.n_classes != man.n_classes or (
        checkpoint.label_names is not None and list(checkpoint.label_names) != list(man.label_names)
    ):
        raise ValueError(
            f"label-space mismatch: checkpoint {checkpoint.label_names} vs dataset {man.label_names}"
        )
    in_leads = checkpoint.backbone.in_leads
    if in_leads == 1:
        if lead is None:
            raise ValueError("evaluating a single-lead model requires a lead index")
        if not 0 <= lead < man.n_leads:
            raise IndexError(f"lead {lead} out of range for {man.n_leads} leads")
    else:
        if man.n_leads != in_leads:
            raise ValueError(f"model expects {in_leads} leads, dataset has {man.n_leads}")
        lead = None

    idx = dataset.fold_indices(fold)
    scores = trainer.predict(checkpoint.model, trainer._inputs(dataset, idx, lead))
    labels = dataset.labels(idx)
    aucs = per_class_auc(scores, labels) if len(idx) else [None] * man.n_classes
    f1, f1s = f1_macro(scores, labels) if len(idx) else (0.0, [0.0] * man.n_classes)
    return EvalReport(
        macro_auc=_finite_or_none(macro_auc(scores, labels)) if len(idx) else None,
        macro_f1=f1,
        mean_accuracy=mean_accuracy(scores, labels) if len(idx) else 0.0,
        per_class=[
            {"label_name": name, "auc": a, "f1": f}
            for name, a, f in zip(man.label_names, aucs, f1s)
        ],
        n_records=len(idx),
        lead=lead,
        fold=fold,
    )


# -- tables and charts -------------------------------------------------------


def write_csv(rows: list[dict], path) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def line_chart_svg(x: list, series: dict[str, list[float]], title: str = "",
                   x_label: str = "lead", y_label: str = "AUC") -> str:
    """Minimal static SVG line chart; byte-stable for identical inputs."""
    width, height, pad = 480, 320, 48
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    values = [v for ys in series.values() for v in ys if v is not None]
    lo = min(values + [0.5]) if values else 0.0
    hi = max(values + [1.0]) if values else 1.0
    if hi - lo < 1e-9:
        hi = lo + 1.0
    n = len(x)

    def px(i):
        return pad + (width - 2 * pad) * (i / (n - 1) if n > 1 else 0.5)

    def py(v):
        return height - pad - (height - 2 * pad) * (v - lo) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{x_label}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{y_label}</text>',
    ]
    for i, xv in enumerate(x):
        out.append(
            f'<text x="{px(i):.1f}" y="{height - pad + 16}" text-anchor="middle" font-size="10">{xv}</text>'
        )
    for t in np.linspace(lo, hi, 5):
        out.append(
            f'<text x="{pad - 6}" y="{py(t) + 3:.1f}" text-anchor="end" font-size="10">{t:.3f}</text>'
        )
    for k, (name, ys) in enumerate(series.items()):
        color = colors[k % len(colors)]
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(ys) if v is not None)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        for i, v in enumerate(ys):
            if v is not None:
                out.append(f'<circle cx="{px(i):.1f}" cy="{py(v):.1f}" r="3" fill="{color}"/>')
        out.append(
            f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="11" fill="{color}">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- experiments -------------------------------------------------------------


def _student_auc(dataset, teacher, config, backbone, log=None) -> tuple[float, Checkpoint]:
    ckpt = trainer.distill_student(dataset, teacher, config, backbone, log=log)
    report = evaluate(ckpt, dataset, trainer.TEST_FOLD, config.student_lead)
    return report.macro_auc, ckpt


def lead_sweep(
    dataset: Dataset,
    teacher: Checkpoint,
    config: TrainConfig,
    backbone_config: BackboneConfig,
    leads: list[int],
    out_dir=None,
    log=None,
) -> list[dict]:
    """Baseline (alpha=beta=0) vs MVKT student test macro-AUC for each lead."""
    if not leads:
        raise ValueError("lead_sweep needs at least one lead")
    if dataset.manifest.n_leads != 12:
        raise ValueError("lead_sweep needs a 12-lead dataset")
    rows = []
    for lead in leads:
        base_cfg = config.replace(student_lead=lead, alpha=0.0, beta=0.0)
        mvkt_cfg = config.replace(student_lead=lead)
        base_auc, _ = _student_auc(dataset, teacher, base_cfg, backbone_config, log)
        mvkt_auc, _ = _student_auc(dataset, teacher, mvkt_cfg, backbone_config, log)
        rows.append({"lead": lead, "baseline_auc": base_auc, "mvkt_auc": mvkt_auc})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / "lead_sweep.csv")
        (out / "lead_sweep.svg").write_text(
            line_chart_svg(
                [r["lead"] for r in rows],
                {"baseline": [r["baseline_auc"] for r in rows], "MVKT": [r["mvkt_auc"] for r in rows]},
                title="Student test macro-AUC by lead",
            ),
            encoding="utf-8",
        )
    return rows


ABLATION_ROWS = ("BCE", "BCE+MKD", "BCE+CLT", "BCE+MKD+CLT")


def ablation_grid(
    dataset: Dataset,
    teacher: Checkpoint,
    config: TrainConfig,
    backbone_config: BackboneConfig,
    out_dir=None,
    log=None,
) -> list[dict]:
    """Four distillations differing only in which extra loss terms are on."""
    a0, b0 = config.alpha, config.beta
    grid = zip(ABLATION_ROWS, ((0.0, 0.0), (a0, 0.0), (0.0, b0), (a0, b0)))
    rows = []
    for name, (alpha, beta) in grid:
        cfg = config.replace(alpha=alpha, beta=beta)
        init_digest = trainer.initial_student(dataset, cfg, backbone_config).digest()
        ckpt = trainer.distill_student(dataset, teacher, cfg, backbone_config, log=log)
        report = evaluate(ckpt, dataset, trainer.TEST_FOLD, cfg.student_lead)
        row = {"config": name, "alpha": alpha, "beta": beta, "macro_auc": report.macro_auc}
        for pc in report.per_class:
            row[f"auc_{pc['label_name']}"] = pc["auc"]
        row["init_digest"] = init_digest
        rows.append(row)
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            Path(out_dir, f"report_{name.replace('+', '_')}.json").write_text(report.dumps(), encoding="utf-8")
    if out_dir is not None:
        write_csv(rows, Path(out_dir) / "ablation.csv")
    return rows
