"""Command-line entry point.

Every command takes ``--config`` (YAML, see :mod:`mslmu.config`),
``--seed`` and ``--out-dir``.  Outputs are staged in a temporary sibling
directory and moved into ``--out-dir`` only when the command succeeds, so a
failed run leaves nothing behind.  Errors print ``error: ...`` to stderr and
exit with status 1.

Outputs per command::

    synth               cluster.csv
    convert             cluster.csv
    impute              imputed.csv
    preprocess          processed.csv, scaled.csv, preprocess.json
    train               model/ (manifest.json + slice_<i>.npz)
    predict             forecast.csv (timestamp,real,pred), forecast.svg with --plot
    evaluate            metrics.csv, metrics.txt
    ablate-slices       metrics.csv, metrics.txt, trials.csv
    missing-data-study  missing_data.csv, missing_data.txt, trials.csv
    denoise-study       metrics.csv, metrics.txt, trials.csv

Commands that consume data read ``--data`` (a cluster data file); the studies
fall back to the synthetic generator settings in the config when it is
omitted.  The effective config is written next to the outputs as
``config.yaml``.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import experiments
from .config import ExperimentConfig, ImputationSection, config_from_dict, load_config
from .correlation import CpkMatrix, compute_cpk, cpk_weights, impute_cluster
from .evaluation import metrics
from .io import (METRICS_HEADER, _fmt, convert_agrimet, ingest, load_ensemble, plot_series, save_ensemble,
                 write_cluster, write_metrics, write_series, write_table)
from .pipeline import fit, forecast, prepare
from .preprocess import Normalizer, split_sizes
from .synthetic import generate_synthetic, noise_for_snr

log = logging.getLogger("mslmu")


class CommandError(Exception):
    """Bad input detected by a command."""


def _common(p: argparse.ArgumentParser, data: Optional[str] = None):
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out-dir", type=Path, required=True, help="output directory")
    if data == "required":
        p.add_argument("--data", type=Path, required=True, help="cluster data file")
    elif data == "optional":
        p.add_argument("--data", type=Path, help="cluster data file (default: synthetic per seed)")


def _study(p: argparse.ArgumentParser):
    p.add_argument("--replicates", type=int, help="number of seeded trials")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mslmu", description="Multi-slice LMU wind-speed forecasting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cluster")
    _common(p)
    p.add_argument("--sites", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--correlation-strength", type=float)
    p.add_argument("--noise-level", type=float)
    p.add_argument("--snr-db", type=float, help="choose the noise level for this SNR (overrides --noise-level)")

    p = sub.add_parser("convert", help="convert a station download to a cluster data file")
    _common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--mph", action="store_true", help="input speeds are miles per hour")

    p = sub.add_parser("impute", help="fill missing values")
    _common(p, "required")
    p.add_argument("--method", choices=("maa", "cck"))
    p.add_argument("--order", type=int, help="MAA window length")

    p = sub.add_parser("preprocess", help="impute, denoise and scale")
    _common(p, "required")

    p = sub.add_parser("train", help="train an ensemble")
    _common(p, "required")

    for name, text in (("predict", "forecast with a trained ensemble"),
                       ("evaluate", "score a trained ensemble")):
        p = sub.add_parser(name, help=text)
        _common(p, "required")
        p.add_argument("--model", type=Path, required=True, help="model directory from 'train'")
        p.add_argument("--split", choices=("train", "val", "test"), default="test")
        if name == "predict":
            p.add_argument("--plot", action="store_true", help="also write forecast.svg")

    p = sub.add_parser("ablate-slices", help="compare 1..n slice ensembles")
    _common(p, "optional")
    _study(p)
    p.add_argument("--counts", type=int, nargs="+", default=[1, 2, 3])

    p = sub.add_parser("missing-data-study", help="MAA vs CCK forecasts across injected gaps")
    _common(p, "optional")
    _study(p)
    p.add_argument("--lengths", type=int, nargs="+")

    p = sub.add_parser("denoise-study", help="single-slice forecasts with and without WMF")
    _common(p, "optional")
    _study(p)
    p.add_argument("--snr-db", type=float, help="synthetic noise for this SNR")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "replicates", None) is not None:
        cfg = replace(cfg, replicates=args.replicates)
    return cfg


def _write_config(cfg: ExperimentConfig, out: Path):
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


def _report(path: Path, header, rows):
    """Aligned plain-text rendering of a table."""
    cells = [list(header)] + [[_fmt(r.get(h)) for h in header] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = ["  ".join(c[i].rjust(widths[i]) for i in range(len(header))) for c in cells]
    path.write_text("\n".join(lines) + "\n")


def _load_data(args, cfg: ExperimentConfig):
    cluster = ingest(args.data)
    if cfg.sites:
        missing = [s for s in cfg.sites if s not in cluster.site_ids]
        if missing:
            raise CommandError(f"config sites not in data: {missing}")
    if cfg.target and cfg.target not in cluster.site_ids:
        raise CommandError(f"target {cfg.target!r} not in data")
    return cluster


def _model_config(model) -> ExperimentConfig:
    data = model.meta.get("config")
    if data is None:
        raise CommandError("model manifest carries no config")
    return config_from_dict(data)


def _model_prep(model, cluster):
    cfg = _model_config(model)
    sites = list(model.meta["cpk_sites"])
    missing = [s for s in sites if s not in cluster.site_ids]
    if missing:
        raise CommandError(f"data lacks sites the model was trained on: {missing}")
    r = np.array(model.meta["cpk_r"], dtype=float)
    cpk = CpkMatrix(tuple(sites), r, cpk_weights(r))
    norms = {s: Normalizer(*v) for s, v in model.meta["normalizers"].items()}
    cfg = replace(cfg, sites=sites, target=model.target)
    return cfg, prepare(cluster, cfg, cpk=cpk, normalizers=norms)


def cmd_synth(args, out: Path):
    cfg = _config(args)
    s = cfg.synth
    kw = dict(sites=args.sites or s.sites, length=args.length or s.length,
              correlation_strength=(s.correlation_strength if args.correlation_strength is None
                                    else args.correlation_strength))
    noise = s.noise_level if args.noise_level is None else args.noise_level
    if args.snr_db is not None:
        noise = noise_for_snr(cfg.seed, args.snr_db, **kw)
    cluster = generate_synthetic(cfg.seed, noise_level=noise, **kw)
    write_cluster(cluster, out / "cluster.csv")
    _write_config(cfg, out)


def cmd_convert(args, out: Path):
    convert_agrimet(args.input, out / "cluster.csv", mph=args.mph)


def cmd_impute(args, out: Path):
    cfg = _config(args)
    imp = cfg.imputation
    cfg = replace(cfg, imputation=ImputationSection(method=args.method or imp.method,
                                                    order=args.order or imp.order))
    cluster = _load_data(args, cfg)
    if cfg.sites:
        cluster = cluster.subset(cfg.sites)
    k = None
    if cfg.imputation.method == "cck":
        k = compute_cpk(cluster, slice(0, split_sizes(len(cluster))[0]))
    completed = impute_cluster(cluster, cfg.imputation.method, cfg.imputation.order, k)
    write_cluster(completed, out / "imputed.csv")
    _write_config(cfg, out)


def cmd_preprocess(args, out: Path):
    cfg = _config(args)
    prep = prepare(_load_data(args, cfg), cfg)
    c = prep.completed
    write_cluster(c.with_values(np.vstack([prep.physical[s] for s in c.site_ids])), out / "processed.csv")
    write_cluster(c.with_values(np.vstack([prep.scaled[s] for s in c.site_ids])), out / "scaled.csv")
    info = {
        "target": prep.target,
        "sizes": list(prep.sizes),
        "normalizers": {s: [n.minimum, n.maximum] for s, n in prep.normalizers.items()},
        "krcc": prep.cpk.r.tolist(),
        "cpk": prep.cpk.k.tolist(),
        "sites": list(prep.cpk.site_ids),
    }
    (out / "preprocess.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    _write_config(cfg, out)


def cmd_train(args, out: Path):
    cfg = _config(args)
    cluster = _load_data(args, cfg)
    prep = prepare(cluster, cfg)
    model = fit(prep, cfg)
    model.meta["config"] = replace(cfg, target=prep.target, sites=list(prep.completed.site_ids)).to_dict()
    save_ensemble(model, out / "model")
    _write_config(cfg, out)


def _split_ts(model, prep, split: str):
    train, val, test = prep.split_ts(model.offset)
    return {"train": train, "val": val, "test": test}[split]


def cmd_predict(args, out: Path):
    model = load_ensemble(args.model)
    cfg, prep = _model_prep(model, _load_data(args, _config(args)))
    ts = _split_ts(model, prep, args.split)
    pred = forecast(model, prep, ts)
    stamps = [prep.cluster.start + int(i) * prep.cluster.step for i in ts]
    write_series(out / "forecast.csv", stamps, prep.reference[ts], pred)
    if args.plot:
        plot_series(out / "forecast.svg", prep.reference[ts], pred,
                    title=f"{model.target}: {experiments.model_name(cfg, model.n)}")


def cmd_evaluate(args, out: Path):
    model = load_ensemble(args.model)
    cfg, prep = _model_prep(model, _load_data(args, _config(args)))
    ts = _split_ts(model, prep, args.split)
    rep = metrics(prep.reference[ts], forecast(model, prep, ts))
    row = {"model": experiments.model_name(cfg, model.n), "slices": model.n, **rep.as_row()}
    write_metrics(out / "metrics.csv", [row])
    _report(out / "metrics.txt", METRICS_HEADER, [row])


def _source(args):
    return experiments.ClusterSource(path=str(args.data) if args.data else None)


def cmd_ablate(args, out: Path):
    cfg = _config(args)
    if any(c < 1 for c in args.counts):
        raise CommandError("slice counts must be >= 1")
    rows, detail = experiments.ablate_slices(cfg, _source(args), args.counts, jobs=args.jobs)
    write_metrics(out / "metrics.csv", rows)
    _report(out / "metrics.txt", METRICS_HEADER, rows)
    write_table(out / "trials.csv", ("seed",) + METRICS_HEADER, detail)
    _write_config(cfg, out)


def cmd_missing(args, out: Path):
    cfg = _config(args)
    if args.lengths:
        cfg = replace(cfg, gaps=replace(cfg.gaps, lengths=list(args.lengths)))
    rows, detail, _ = experiments.missing_data_study(cfg, _source(args), jobs=args.jobs)
    write_table(out / "missing_data.csv", experiments.GAP_TABLE_HEADER, rows)
    _report(out / "missing_data.txt", experiments.GAP_TABLE_HEADER, rows)
    write_table(out / "trials.csv", ("seed", "gap_length", "set", "mape_pct", "mae", "rmse"), detail)
    _write_config(cfg, out)


def cmd_denoise(args, out: Path):
    cfg = _config(args)
    source = _source(args)
    if args.snr_db is not None:
        if args.data:
            raise CommandError("--snr-db applies only to synthetic data")
        source = experiments.snr_source(cfg, args.snr_db, cfg.seed)
    rows, detail, _ = experiments.denoise_study(cfg, source, jobs=args.jobs)
    write_metrics(out / "metrics.csv", rows)
    _report(out / "metrics.txt", METRICS_HEADER, rows)
    write_table(out / "trials.csv", ("seed",) + METRICS_HEADER, detail)
    _write_config(cfg, out)


COMMANDS = {
    "synth": cmd_synth, "convert": cmd_convert, "impute": cmd_impute, "preprocess": cmd_preprocess,
    "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate, "ablate-slices": cmd_ablate,
    "missing-data-study": cmd_missing, "denoise-study": cmd_denoise,
}


def _commit(stage: Path, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.iterdir()):
        dest = out / item.name
        if dest.is_dir() and not dest.is_symlink():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        shutil.move(str(item), str(dest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out_dir
    if out.exists() and not out.is_dir():
        print(f"error: {out} exists and is not a directory", file=sys.stderr)
        return 1
    parent = out.resolve().parent
    try:
        parent.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=f".{out.name}.partial-", dir=parent))
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args, stage)
        _commit(stage, out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a diagnostic
        if args.verbose:
            log.exception("command failed")
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
