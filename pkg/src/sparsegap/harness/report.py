"""CSV persistence and figure emission for experiment records.

Record files hold only deterministic fields so that reruns are byte-identical;
wall-clock times go to a separate ``*_timing.csv``.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..metrics import MetricRow
from .experiments import ExperimentRecord

FIXED = ("experiment", "method", "variant", "seed", "record_seed", "status")
METRIC_ORDER = tuple(MetricRow().as_dict()) + ("code_gap", "analytic", "simulated", "abs_diff", "mc_samples")
HIDDEN_PARAMS = ("d_y",)

X_KEY = {
    "phase": "delta", "vary-latents": "d_z", "vary-samples": "p", "vary-sparsity": "k", "frozen": "d_z",
    "warmstart-decoder": "round", "warmstart-encoder": "iters", "lambda-sweep": "lam", "support": "d_z",
}
LOG_X = {"p", "lam"}
UNITS = {"delta": "d_y / d_h", "d_z": "latents", "p": "training samples", "k": "active latents",
         "round": "outer rounds", "iters": "FISTA iterations", "lam": "lambda"}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def _parse(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _columns(records):
    params = sorted({k for r in records for k in r.params})
    present = {k for r in records for k in r.metrics}
    metrics = [m for m in METRIC_ORDER if m in present] + sorted(present - set(METRIC_ORDER))
    return params, metrics


def write_records_csv(path, records) -> None:
    params, metrics = _columns(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FIXED) + params + metrics)
        for r in records:
            row = [r.experiment, r.method, r.variant, r.seed, r.record_seed, r.status]
            row += [r.params.get(p, "") for p in params]
            row += [r.metrics.get(m, math.nan) for m in metrics]
            w.writerow([fmt(v) for v in row])


def read_records_csv(path) -> list[ExperimentRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            metrics = {k: float(v) for k, v in row.items() if k in METRIC_ORDER}
            params = {k: _parse(v) for k, v in row.items() if k not in FIXED and k not in METRIC_ORDER and v != ""}
            out.append(ExperimentRecord(
                experiment=row["experiment"], method=row["method"], params=params, seed=int(row["seed"]),
                record_seed=int(row["record_seed"]), metrics=metrics, variant=row["variant"], status=row["status"],
            ))
    return out


def write_timing_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "method", "variant", "seed", "record_seed", "wall_time"])
        for r in records:
            w.writerow([r.experiment, r.method, r.variant, r.seed, r.record_seed, fmt(r.wall_time)])


# ----------------------------------------------------------------- aggregation

def _series_label(r: ExperimentRecord, x_key: str, varying: list[str]) -> str:
    label = r.method + (f"[{r.variant}]" if r.variant else "")
    extra = ",".join(f"{k}={fmt(r.params[k])}" for k in varying if k != x_key and k in r.params)
    return f"{label} {extra}" if extra else label


def aggregate(records, metric: str):
    """``{series: [(x, mean, min, max, n), ...]}`` over seeds, NaNs dropped."""
    if not records:
        return {}
    x_key = X_KEY[records[0].experiment]
    keys = sorted({k for r in records for k in r.params} - set(HIDDEN_PARAMS))
    varying = [k for k in keys if len({fmt(r.params.get(k)) for r in records}) > 1]
    groups = defaultdict(list)
    for r in records:
        if r.status != "ok" or metric not in r.metrics or x_key not in r.params:
            continue
        v = r.metrics[metric]
        if math.isnan(v):
            continue
        groups[(_series_label(r, x_key, varying), float(r.params[x_key]))].append(v)
    out = defaultdict(list)
    for (series, x), vals in sorted(groups.items()):
        a = np.array(vals)
        out[series].append((x, float(a.mean()), float(a.min()), float(a.max()), a.size))
    return dict(out)


def _metric_files(records):
    """(metric column, file metric name, split) triples present in the records."""
    present = {k for r in records for k, v in r.metrics.items() if not math.isnan(v)}
    out = []
    for base in ("mcc", "auc", "acc"):
        for split in ("id", "ood"):
            if f"{base}_{split}" in present:
                out.append((f"{base}_{split}", base, split))
    for name in ("support_precision", "support_recall", "mean_active", "dict_cosine", "code_gap"):
        if name in present:
            out.append((name, name, "id"))
    return out


def _figure_setup():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "sparsegap"
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def _save_svg(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def plot_series(path, series: dict, x_key: str, ylabel: str, title: str) -> None:
    plt = _figure_setup()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, pts in series.items():
        x = [p[0] for p in pts]
        ax.plot(x, [p[1] for p in pts], marker="o", ms=3, lw=1.2, label=name)
        ax.fill_between(x, [p[2] for p in pts], [p[3] for p in pts], alpha=0.15)
    if x_key in LOG_X:
        ax.set_xscale("log")
    ax.set_xlabel(f"{x_key} ({UNITS.get(x_key, '')})")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=10)
    if len(series) <= 12:
        ax.legend(fontsize=6, frameon=False)
    fig.tight_layout()
    _save_svg(fig, path)
    plt.close(fig)


def _emit_theory(out, records):
    ok = [r for r in records if r.status == "ok"]
    csv_path = out / "theory-grid_accuracy_ood.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "theta", "case", "acc_analytic", "acc_simulated", "n", "abs_diff"])
        for r in ok:
            w.writerow([fmt(r.params["phi"]), fmt(r.params["theta"]), r.variant, fmt(r.metrics["analytic"]),
                        fmt(r.metrics["simulated"]), int(r.metrics["mc_samples"]), fmt(r.metrics["abs_diff"])])
    paths = [csv_path]
    if ok:
        plt = _figure_setup()
        fig, ax = plt.subplots(figsize=(4.6, 4.4))
        a = np.array([r.metrics["analytic"] for r in ok])
        s = np.array([r.metrics["simulated"] for r in ok])
        for case in sorted({r.variant for r in ok}):
            m = np.array([r.variant == case for r in ok])
            ax.scatter(a[m], s[m], s=10, label=case)
        lo, hi = float(min(a.min(), s.min())), float(max(a.max(), s.max()))
        ax.plot([lo, hi], [lo, hi], color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("analytic OOD accuracy (fraction)")
        ax.set_ylabel("Monte-Carlo OOD accuracy (fraction)")
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        svg = out / "theory-grid_accuracy_ood.svg"
        _save_svg(fig, svg)
        plt.close(fig)
        paths.append(svg)
    return paths


def emit_report(records, out_dir, svg: bool = True) -> list[Path]:
    """Write records, per-metric aggregates and (optionally) SVG charts.

    Returns the written paths.  Records are grouped by experiment.
    """
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_exp = defaultdict(list)
    for r in records:
        by_exp[r.experiment].append(r)
    written = []
    for exp, recs in sorted(by_exp.items()):
        recs = sorted(recs, key=ExperimentRecord.sort_key)
        path = out / f"{exp}_records.csv"
        write_records_csv(path, recs)
        written.append(path)
        if exp == "theory-grid":
            written += _emit_theory(out, recs)
            continue
        x_key = X_KEY[exp]
        for col, name, split in _metric_files(recs):
            series = aggregate(recs, col)
            csv_path = out / f"{exp}_{name}_{split}.csv"
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["series", x_key, "mean", "min", "max", "n"])
                for s_name, pts in series.items():
                    for x, mean, lo, hi, n in pts:
                        w.writerow([s_name, fmt(x), fmt(mean), fmt(lo), fmt(hi), n])
            written.append(csv_path)
            if svg and series:
                svg_path = out / f"{exp}_{name}_{split}.svg"
                plot_series(svg_path, series, x_key, f"{name} ({split})", exp)
                written.append(svg_path)
    return written
