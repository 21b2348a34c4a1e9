"""Command-line front end.

Subcommands: simulate, ingest, fit, baseline, cluster, label, sensitivity,
plot, and run (all-in-one).  Stage commands share one artifact, the model
JSON at <output-dir>/model.json.  Options resolve as flags > config file >
defaults; the config file is flat ``key = value`` lines using the long flag
names with dashes or underscores.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields as dc_fields

from . import pipeline, plots, synthgen
from .data import filter_by_total, parse_corpus, write_corpus
from .errors import CitetrajError, ConfigError, DataError, NumericalError, StageError
from .pipeline import ModelFile, PipelineConfig, load_model, run_pipeline, save_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_CONFIG_FIELD_TYPES = {f.name: f.type for f in dc_fields(PipelineConfig)}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_scalar(name: str, raw: str):
    raw = raw.strip().strip('"').strip("'")
    low = raw.lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    if low in ("none", "null"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; keys use flag names (dashes ok)."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, raw = body.split("=", 1)
            key = key.strip().replace("-", "_")
            out[key] = _parse_scalar(key, raw)
    unknown = sorted(set(out) - set(_CONFIG_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return out


def _int_list(raw: str) -> list[int]:
    try:
        return [int(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _k_range(raw: str) -> list[int]:
    if ":" in raw:
        lo, hi = raw.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return _int_list(raw)


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat key=value options file")
    p.add_argument("--input", default=None, help="corpus file (csv or jsonl)")
    p.add_argument("--format", default=None, choices=["csv", "jsonl"])
    p.add_argument("--output-dir", default=None, help="artifact directory (default out)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k-basis", type=int, default=None, help="basis functions kept (default 4)")
    p.add_argument("--fve", type=float, default=None,
                   help="keep smallest K reaching this variance share instead of --k-basis")
    p.add_argument("--k-clusters", type=int, default=None, help="clusters (default 4)")
    p.add_argument("--method", default=None, choices=["kmeans", "kmedoids", "ward"])
    p.add_argument("--min-total", type=int, default=None, help="citation floor (default 0)")
    p.add_argument("--m-wsb", type=float, default=None, help="WSB m constant (default 30)")
    p.add_argument("--standardize", action="store_true", default=None,
                   help="divide score dimension k by sqrt(eigenvalue k) before clustering")
    p.add_argument("--eval-grid", type=int, default=None,
                   help="evaluation points for density curves (default 256)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default 1)")
    p.add_argument("--restarts", type=int, default=None, help="k-means restarts (default 10)")
    p.add_argument("--no-baseline", action="store_true", default=False,
                   help="skip the WSB baseline stage")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="fixed mean-curve bandwidth (default: GCV)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="citetraj",
        description="Cluster annual count trajectories with a functional "
        "Poisson regression model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, helptext):
        p = sub.add_parser(name, help=helptext)
        _add_global_flags(p)
        return p

    p = cmd("simulate", "generate a synthetic corpus with ground truth")
    p.add_argument("--n-items", type=int, default=2000)
    p.add_argument("--n-years", type=int, default=30)
    p.add_argument("--out-format", default="jsonl", choices=["csv", "jsonl"])

    cmd("ingest", "validate a corpus file and write the normalized copy")
    cmd("fit", "estimate the basis and per-item scores; writes model.json")
    cmd("baseline", "add per-item WSB fits and the model comparison")
    cmd("cluster", "cluster fitted scores; adds the result to model.json")
    cmd("label", "label clusters and items by trajectory shape")

    p = cmd("sensitivity", "robustness sweeps over K, methods, and count floors")
    p.add_argument("--thresholds", default="0,10", help="comma-separated count floors")
    p.add_argument("--k-range", default="2:6", help="K values, e.g. 2:6 or 2,4,6")
    p.add_argument("--methods", default="kmeans,kmedoids,ward")

    p = cmd("plot", "emit figure CSVs and SVGs from model.json")
    p.add_argument("--figures", default="all",
                   help="comma-separated figure ids or 'all'")

    cmd("run", "full pipeline: ingest, fit, baseline, cluster, label, plot")
    return parser


def _merge_config(args: argparse.Namespace) -> PipelineConfig:
    file_opts = read_config_file(args.config) if args.config else {}
    merged = {}
    for f in dc_fields(PipelineConfig):
        if f.name == "baseline":
            continue
        cli_val = getattr(args, f.name, None)
        if cli_val is not None:
            merged[f.name] = cli_val
        elif f.name in file_opts and file_opts[f.name] is not None:
            merged[f.name] = file_opts[f.name]
    if args.no_baseline:
        merged["baseline"] = False
    elif "baseline" in file_opts:
        merged["baseline"] = bool(file_opts["baseline"])
    merged.setdefault("output_dir", "out")
    try:
        return PipelineConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _model_path(config: PipelineConfig) -> str:
    return os.path.join(config.output_dir, "model.json")


def _load_for_stage(config: PipelineConfig, stage: str) -> ModelFile:
    path = _model_path(config)
    if not os.path.exists(path):
        raise DataError(f"{stage} needs {path}; run 'citetraj fit' first")
    return load_model(path)


def _cmd_simulate(args, config: PipelineConfig) -> int:
    spec = synthgen.default_spec(n_items=args.n_items, seed=config.seed)
    if args.n_years != spec.n_years:
        raise ConfigError("the default generator is defined on a 30-year grid")
    corpus, truth = synthgen.simulate_corpus(spec)
    os.makedirs(config.output_dir, exist_ok=True)
    corpus_path = os.path.join(config.output_dir, f"corpus.{args.out_format}")
    write_corpus(corpus, corpus_path, format=args.out_format)
    truth_path = os.path.join(config.output_dir, "truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        fh.write(truth.to_json() + "\n")
    print(f"wrote {corpus_path} ({len(corpus)} items) and {truth_path}")
    return EXIT_OK


def _cmd_ingest(args, config: PipelineConfig) -> int:
    if not config.input:
        raise ConfigError("ingest needs --input")
    fmt = config.format or ("jsonl" if config.input.endswith(".jsonl") else "csv")
    corpus = parse_corpus(config.input, fmt)
    result = filter_by_total(corpus, config.min_total)
    os.makedirs(config.output_dir, exist_ok=True)
    out_path = os.path.join(config.output_dir, "corpus.jsonl")
    write_corpus(result.corpus, out_path, format="jsonl")
    print(
        f"ingested {len(corpus)} items (T={corpus.grid.n_years}); "
        f"kept {result.kept}, dropped {result.dropped} below total "
        f"{config.min_total}; wrote {out_path}"
    )
    return EXIT_OK


def _cmd_fit(args, config: PipelineConfig) -> int:
    model = run_pipeline(config)
    os.makedirs(config.output_dir, exist_ok=True)
    save_model(model, _model_path(config))
    sel = model.data.get("selection")
    rec = sel["recommended_k"] if sel else "n/a"
    print(
        f"fit {len(model.data['corpus']['ids'])} items; basis K="
        f"{model.data['basis']['k']}; selection recommends K={rec}; "
        f"wrote {_model_path(config)}"
    )
    if model.data.get("cluster_refusal"):
        print(model.data["cluster_refusal"], file=sys.stderr)
    return EXIT_OK


def _cmd_baseline(args, config: PipelineConfig) -> int:
    # The model is recomputed with the baseline stage enabled; per-item fits
    # are deterministic, so existing fields stay identical.
    model = _load_for_stage(config, "baseline")
    stored = PipelineConfig(**model.data["config"])
    if stored.baseline and model.data.get("wsb"):
        print("model already has the baseline stage; nothing to do")
        return EXIT_OK
    cfg = PipelineConfig(**{**model.data["config"], "baseline": True})
    new_model = run_pipeline(cfg, corpus=model.corpus())
    save_model(new_model, _model_path(config))
    comp = new_model.data["comparison"]
    import numpy as np

    print(
        "baseline added: median log10 MSE wsb=%.3f fpca=%.3f"
        % (
            float(np.median(comp["log10_mse_wsb"])),
            float(np.median(comp["log10_mse_fpca"])),
        )
    )
    return EXIT_OK


def _cmd_cluster(args, config: PipelineConfig) -> int:
    model = _load_for_stage(config, "cluster")
    if model.data.get("cluster_refusal"):
        raise ConfigError(model.data["cluster_refusal"])
    cfg = PipelineConfig(**{
        **model.data["config"],
        "method": config.method,
        "k_clusters": config.k_clusters,
        "seed": config.seed,
        "standardize": config.standardize,
    })
    new_model = run_pipeline(cfg, corpus=model.corpus())
    merged = dict(model.data)
    clusters = {k: dict(v) for k, v in (merged.get("clusters") or {}).items()}
    for method, per_k in new_model.data["clusters"].items():
        clusters.setdefault(method, {}).update(per_k)
    merged["clusters"] = clusters
    merged["item_labels"] = new_model.data["item_labels"]
    merged["config"] = new_model.data["config"]
    out = ModelFile(merged)
    save_model(out, _model_path(config))
    entry = out.cluster_entry(cfg.method, cfg.k_clusters)
    print(
        f"clustered with {cfg.method} K={cfg.k_clusters}: within_ss="
        f"{entry['within_ss']:.3f}, labels={entry['labels']}"
    )
    return EXIT_OK


def _cmd_label(args, config: PipelineConfig) -> int:
    model = _load_for_stage(config, "label")
    if not model.data.get("clusters"):
        raise DataError("label needs a clustered model; run 'citetraj cluster' first")
    entry = model.cluster_entry()
    labels = entry.get("labels")
    print("cluster labels:", labels)
    item_labels = model.data.get("item_labels") or []
    from collections import Counter

    print("item taxonomy:", dict(Counter(item_labels)))
    path = os.path.join(config.output_dir, "assignments.csv")
    ids = model.data["corpus"]["ids"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id,cluster,label\n")
        for i, a in zip(ids, entry["assignments"]):
            fh.write(f"{i},{a},{labels[a] if labels else ''}\n")
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_sensitivity(args, config: PipelineConfig) -> int:
    model = _load_for_stage(config, "sensitivity")
    thresholds = _int_list(args.thresholds)
    if not thresholds:
        raise ConfigError("need at least one threshold")
    k_values = _k_range(args.k_range)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    new_model = pipeline.sensitivity(model, thresholds, k_values, methods)
    save_model(new_model, _model_path(config))
    import json as _json

    bundle_path = os.path.join(config.output_dir, "sensitivity.json")
    with open(bundle_path, "w", encoding="utf-8") as fh:
        _json.dump(
            {
                "robustness": new_model.data["robustness"],
                "thresholds": new_model.data["thresholds"],
            },
            fh, sort_keys=True, indent=1,
        )
        fh.write("\n")
    print(f"sensitivity sweeps written to {bundle_path} and model.json")
    return EXIT_OK


def _cmd_plot(args, config: PipelineConfig) -> int:
    model = _load_for_stage(config, "plot")
    which = None if args.figures == "all" else [
        f.strip() for f in args.figures.split(",") if f.strip()
    ]
    out_dir = os.path.join(config.output_dir, "plots")
    written = plots.emit_plots(model, which, out_dir)
    print(f"wrote {len(written)} files to {out_dir}")
    return EXIT_OK


def _cmd_run(args, config: PipelineConfig) -> int:
    model = run_pipeline(config)
    os.makedirs(config.output_dir, exist_ok=True)
    save_model(model, _model_path(config))
    out_dir = os.path.join(config.output_dir, "plots")
    written = plots.emit_plots(model, None, out_dir)
    summary = model.data["fit_summary"]
    print(
        f"pipeline done: {summary['n_items']} items, convergence "
        f"{summary['convergence_rate']:.3f}; model at {_model_path(config)}; "
        f"{len(written)} plot files in {out_dir}"
    )
    if model.data.get("cluster_refusal"):
        print(model.data["cluster_refusal"], file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "ingest": _cmd_ingest,
    "fit": _cmd_fit,
    "baseline": _cmd_baseline,
    "cluster": _cmd_cluster,
    "label": _cmd_label,
    "sensitivity": _cmd_sensitivity,
    "plot": _cmd_plot,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _merge_config(args)
        return _COMMANDS[args.command](args, config)
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(cause, NumericalError):
            return EXIT_NUMERIC
        return EXIT_DATA
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CitetrajError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
