"""File formats: cluster CSV, slice/ensemble model files, metrics tables, plots.

Cluster data file
    ``timestamp,<site_1>,...,<site_k>`` header, ISO-8601 timestamps on a
    fixed step, wind speeds in m/s, empty field for a missing value.

Slice model file (``slice_<i>.npz``)
    ``format_version`` (int), delay network ``theta``/``dt``/``d``,
    ``activation``, ``memory`` (bool), the eight trainable arrays
    (``e_x`` ... ``output_bias``), ``train_loss_curve``, ``val_loss_curve``
    and ``best_epoch``.

Ensemble directory
    ``manifest.json`` (format name, version, target, neighbour order, k_row,
    combination, slice shapes and preprocessing metadata) plus one slice
    file per slice.
"""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .cluster import SiteCluster
from .ensemble import EnsembleModel, SliceConfig
from .lmu import TRAINABLE, LmuParams, build_delay_network
from .training import TrainedSlice

SLICE_FORMAT_VERSION = 1
ENSEMBLE_FORMAT = "mslmu-ensemble"
ENSEMBLE_FORMAT_VERSION = 1
METRICS_HEADER = ("model", "slices", "mape_pct", "mae", "rmse")


class DataFormatError(ValueError):
    """Input file does not follow the documented layout."""


def _parse_time(text: str, line: int) -> datetime:
    try:
        return datetime.fromisoformat(text.strip())
    except ValueError:
        raise DataFormatError(f"line {line}: bad timestamp {text!r}") from None


def ingest(path) -> SiteCluster:
    """Read a cluster data file, validating the time grid."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0].strip().lower() != "timestamp" or len(header) < 2:
            raise DataFormatError(f"{path}: header must be 'timestamp,<site>,...'")
        sites = [h.strip() for h in header[1:]]
        times, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            t = _parse_time(row[0], line)
            vals = []
            for field in row[1:]:
                field = field.strip()
                if not field:
                    vals.append(math.nan)
                    continue
                try:
                    v = float(field)
                except ValueError:
                    raise DataFormatError(f"line {line}: non-numeric value {field!r}") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"line {line}: non-finite value {field!r}")
                vals.append(v)
            if times:
                if t == times[-1]:
                    raise DataFormatError(f"line {line}: duplicate timestamp {row[0]}")
                if t < times[-1]:
                    raise DataFormatError(f"line {line}: timestamp {row[0]} out of order")
                step = times[1] - times[0] if len(times) > 1 else t - times[-1]
                if t - times[-1] != step:
                    raise DataFormatError(f"line {line}: non-uniform step at {row[0]}")
            times.append(t)
            rows.append(vals)
    if len(times) < 2:
        raise DataFormatError(f"{path}: need at least two rows")
    values = np.array(rows, dtype=float).T
    return SiteCluster(sites, values, times[0], times[1] - times[0], {"source": str(path)})


def write_cluster(cluster: SiteCluster, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", *cluster.site_ids])
        for i, ts in enumerate(cluster.timestamps()):
            w.writerow([ts.isoformat()] + ["" if math.isnan(v) else repr(float(v)) for v in cluster.values[:, i]])
    return path


def save_slice(trained: TrainedSlice, path) -> Path:
    path = Path(path)
    p = trained.params
    np.savez(
        path,
        format_version=np.array(SLICE_FORMAT_VERSION),
        theta=np.array(trained.dn.theta), dt=np.array(trained.dn.dt), d=np.array(trained.dn.d),
        activation=np.array(p.hidden_activation), memory=np.array(p.memory),
        train_loss_curve=np.asarray(trained.train_loss_curve, dtype=float),
        val_loss_curve=np.asarray(trained.val_loss_curve, dtype=float),
        best_epoch=np.array(trained.best_epoch),
        **p.arrays(),
    )
    return path


def load_slice(path) -> TrainedSlice:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != SLICE_FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported slice format version {version}")
        dn = build_delay_network(float(z["theta"]), float(z["dt"]), int(z["d"]))
        params = LmuParams(**{k: z[k] for k in TRAINABLE}, hidden_activation=str(z["activation"]),
                           memory=bool(z["memory"]))
        return TrainedSlice(params, dn, z["train_loss_curve"].tolist(), z["val_loss_curve"].tolist(),
                            int(z["best_epoch"]))


def save_ensemble(model: EnsembleModel, directory, extra: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(model.slices, start=1):
        name = f"slice_{i}.npz"
        save_slice(s, directory / name)
        files.append(name)
    manifest = {
        "format": ENSEMBLE_FORMAT,
        "version": ENSEMBLE_FORMAT_VERSION,
        "target": model.target,
        "neighbors": list(model.neighbors),
        "combination": model.combination,
        "k_row": model.k_row,
        "slice_configs": [vars(c).copy() for c in model.slice_configs],
        "slice_files": files,
        "meta": model.meta,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_ensemble(directory) -> EnsembleModel:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise DataFormatError(f"{directory}: no manifest.json") from None
    if manifest.get("format") != ENSEMBLE_FORMAT or manifest.get("version") != ENSEMBLE_FORMAT_VERSION:
        raise DataFormatError(f"{directory}: unsupported model format")
    slices = [load_slice(directory / f) for f in manifest["slice_files"]]
    configs = [SliceConfig(**c) for c in manifest["slice_configs"]]
    model = EnsembleModel(manifest["target"], manifest["neighbors"], slices, configs,
                          combination=manifest["combination"], k_row=manifest["k_row"],
                          meta=manifest.get("meta", {}))
    return model


def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_table(path, header: Sequence[str], rows: Iterable[dict]) -> Path:
    """Comma-delimited table; floats at fixed precision so reruns are byte-identical."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h)) for h in header])
    return path


def write_metrics(path, rows: Iterable[dict]) -> Path:
    return write_table(path, METRICS_HEADER, rows)


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_series(path, timestamps, real, pred) -> Path:
    rows = ({"timestamp": t.isoformat(), "real": float(r), "pred": float(p)}
            for t, r, p in zip(timestamps, real, pred))
    return write_table(path, ("timestamp", "real", "pred"), rows)


def plot_series(path, real, pred, title: str = "") -> Path:
    """Static SVG of real vs forecast values."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(np.asarray(real), label="real", lw=1.0)
    ax.plot(np.asarray(pred), label="forecast", lw=1.0)
    ax.set_xlabel("test step")
    ax.set_ylabel("wind speed (m/s)")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    # fixed hash salt and no date stamp keep the file reproducible
    matplotlib.rcParams["svg.hashsalt"] = "mslmu"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def convert_agrimet(path, out_path, mph: bool = False, missing_flags=(998877.0, 999.0)) -> Path:
    """Convert an AgriMet-style download to a cluster data file.

    The reader is deliberately tolerant: it uses the rows between ``BEGIN
    DATA`` and ``END DATA`` when those markers exist, expects a header row
    whose first column is the date (optionally ``DATE TIME``) and whose other
    columns name the stations, and accepts comma or whitespace separators.
    Non-numeric or flagged values become missing.  ``mph=True`` converts
    miles per hour to m/s.
    """
    text = Path(path).read_text().splitlines()
    lines = [ln for ln in text if ln.strip()]
    upper = [ln.strip().upper() for ln in lines]
    if "BEGIN DATA" in upper:
        start = upper.index("BEGIN DATA") + 1
        stop = upper.index("END DATA") if "END DATA" in upper else len(lines)
        lines = lines[start:stop]
    if not lines:
        raise DataFormatError(f"{path}: no data rows")

    def split(ln):
        return [f.strip() for f in ln.split(",")] if "," in ln else ln.split()

    header = split(lines[0])
    date_cols = 2 if len(header) > 1 and header[1].upper() == "TIME" else 1
    sites = [h.split()[0] for h in header[date_cols:]]
    if not sites:
        raise DataFormatError(f"{path}: no station columns in header")
    times, rows = [], []
    for n, ln in enumerate(lines[1:], start=2):
        fields = split(ln)
        stamp = " ".join(fields[:date_cols]) if date_cols == 2 else fields[0]
        t = None
        for fmt in ("%m/%d/%Y %H:%M", "%m/%d/%Y %H%M", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S"):
            try:
                t = datetime.strptime(stamp, fmt)
                break
            except ValueError:
                continue
        if t is None:
            try:
                t = datetime.fromisoformat(stamp)
            except ValueError:
                raise DataFormatError(f"row {n}: unrecognised timestamp {stamp!r}") from None
        vals = []
        for f in fields[date_cols:date_cols + len(sites)]:
            try:
                v = float(f)
            except ValueError:
                v = math.nan
            if v in missing_flags or v < 0:
                v = math.nan
            vals.append(v * 0.44704 if mph and not math.isnan(v) else v)
        vals += [math.nan] * (len(sites) - len(vals))
        times.append(t)
        rows.append(vals)
    order = np.argsort(times, kind="stable")
    times = [times[i] for i in order]
    values = np.array([rows[i] for i in order], dtype=float).T
    step = min(b - a for a, b in zip(times, times[1:]) if b > a)
    # re-grid onto the uniform step, leaving holes as missing values
    n_steps = int((times[-1] - times[0]) / step) + 1
    grid = np.full((len(sites), n_steps), np.nan)
    for j, t in enumerate(times):
        k = (t - times[0]) / step
        if abs(k - round(k)) < 1e-9:
            grid[:, int(round(k))] = values[:, j]
    cluster = SiteCluster(sites, grid, times[0], step)
    return write_cluster(cluster, out_path)


def timestamps_at(cluster: SiteCluster, idx) -> list:
    return [cluster.start + int(i) * cluster.step for i in idx]

