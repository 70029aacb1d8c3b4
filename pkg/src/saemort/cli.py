"""Command-line interface.

Every subcommand accepts ``--config FILE.json``; keys are the long option
names with underscores, and flags given on the command line win over the
file. Outputs default to ``$SAEMORT_OUTPUT_ROOT/<command>`` (or
``./saemort_output/<command>``). Success prints a JSON summary on stdout and
exits 0; a fatal error prints ``{"error": ..., "message": ...}`` on stderr
and exits 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

OUTPUT_ROOT_ENV = "SAEMORT_OUTPUT_ROOT"
EXIT_OK, EXIT_FATAL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def output_path(value, command: str) -> Path:
    if value:
        return Path(value)
    root = os.environ.get(OUTPUT_ROOT_ENV) or "saemort_output"
    return Path(root) / command


def _csv_list(cast=str):
    def parse(text):
        return [cast(v) for v in str(text).split(",") if v != ""]
    return parse


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _optional_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


# ---------------------------------------------------------------- commands

def cmd_synth_hmd(a) -> dict:
    from .synthhmd import write_synthetic_hmd

    out = output_path(a.out, "synth-hmd")
    files = write_synthetic_hmd(out, seed=a.seed)
    return dict(output=str(out), files=len(files))


def cmd_ingest(a) -> dict:
    from .hmd import HMDDirectory, write_tables_csv

    hmd = HMDDirectory(_required(a.hmd_dir, "hmd_dir"))
    out = output_path(a.out, "ingest")
    out.mkdir(parents=True, exist_ok=True)
    codes = a.codes or hmd.codes
    written = []
    for code in codes:
        for measure in ("deaths", "exposure"):
            tables = hmd.tables(code, measure)
            path = out / f"{code}_{measure}.csv"
            with open(path, "w", newline="") as fh:
                write_tables_csv(tables.values(), fh)
            written.append(str(path))
    return dict(output=str(out), files=written)


def cmd_knowledge(a) -> dict:
    from .hmd import HMDDirectory
    from .knowledge import assemble_dk, save_bundle

    hmd = HMDDirectory(_required(a.hmd_dir, "hmd_dir"))
    out = output_path(a.out, "knowledge")
    bundles = []
    for method in a.methods or ["topals", "dspline", "svd"]:
        for kind in a.dks or ["dk1", "dk2", "dk3"]:
            dk = assemble_dk(method, kind, hmd)
            bundles.append(str(save_bundle(dk, out)))
    return dict(output=str(out), bundles=bundles)


def _world(a):
    from .harness import reference_world
    from .hmd import HMDDirectory

    return reference_world(HMDDirectory(_required(a.hmd_dir, "hmd_dir")))


def cmd_simulate(a) -> dict:
    from .brass import simulate_grouped, simulate_single_year, write_dataset_csv

    world = _world(a)
    out = output_path(a.out, "simulate")
    out.mkdir(parents=True, exist_ok=True)
    sim = simulate_grouped if a.path == "grouped" else simulate_single_year
    files = []
    for rep in range(a.replicates):
        ds = sim(world, a.exposure, a.seed, rep)
        path = out / f"dataset_{a.path}_{int(a.exposure)}_{rep:04d}.csv"
        with open(path, "w", newline="") as fh:
            write_dataset_csv(ds, fh)
        files.append(str(path))
    return dict(output=str(out), files=files)


def read_dataset_csv(path):
    """Inverse of ``write_dataset_csv``: (deaths (R,T,A), exposure (T,A), truth, years, labels)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"{path} holds no data rows")
    regions = sorted({int(r["region"]) for r in rows})
    years = sorted({int(r["year"]) for r in rows})
    labels = list(dict.fromkeys(r["age"] for r in rows))
    R, T, A = len(regions), len(years), len(labels)
    D = np.zeros((R, T, A))
    N = np.zeros((T, A))
    truth = np.zeros((R, T, A))
    li = {lab: k for k, lab in enumerate(labels)}
    for r in rows:
        i, t, k = regions.index(int(r["region"])), years.index(int(r["year"])), li[r["age"]]
        D[i, t, k] = float(r["deaths"])
        N[t, k] = float(r["exposure"])
        truth[i, t, k] = float(r["true_log_rate"])
    return D, N, truth, np.array(years), labels


def cmd_fit(a) -> dict:
    from .harness import MethodSpec, _fit_single
    from .knowledge import load_bundle
    from .topals import write_fits_csv

    spec = MethodSpec.parse(_required(a.method, "method"))
    kdir = Path(_required(a.knowledge_dir, "knowledge_dir")) / f"{spec.method}_{spec.dk}"
    dk = load_bundle(kdir)
    D, N, _, years, labels = read_dataset_csv(_required(a.dataset, "dataset"))
    out = output_path(a.out, "fit")
    out.mkdir(parents=True, exist_ok=True)
    if spec.method == "svd":
        from .svd.diagnostics import run_checks
        from .svd.model import SvdData
        from .svd.sampler import SamplerConfig, default_iterations, sample_posterior, write_summary

        if D.shape[2] != dk.artifact.V.shape[0]:
            from .lifetable import aggregate_counts

            D, Nf = aggregate_counts(D, np.broadcast_to(N[None], D.shape))
            N = Nf[0]
        it, wu = default_iterations(float(N[0].sum()))
        cfg = SamplerConfig(chains=a.chains, iterations=a.iterations or it, warmup=a.warmup or wu)
        summ = sample_posterior(SvdData(D, np.broadcast_to(N[None], D.shape), dk.artifact.V), seed=a.seed, cfg=cfg)
        write_summary(summ, out, years)
        rep = run_checks(summ)
        return dict(output=str(out), passed=rep.passed, checks=dict(rhat=rep.rhat_ok, bulk_ess=rep.bulk_ess_ok,
                                                                    tail_ess=rep.tail_ess_ok, sampler=rep.sampler_ok),
                    details=rep.details)
    if spec.input_kind == "grouped" and D.shape[2] != 21:
        from .lifetable import aggregate_counts

        D, N = aggregate_counts(D, np.broadcast_to(N[None], D.shape))
        N = N[0]
    from .harness import StudyConfig

    scfg = StudyConfig(methods=(spec,), n_sim=1)
    rows = []
    regions = a.regions or list(range(1, D.shape[0] + 1))
    fit_years = a.years or [int(y) for y in years]
    for region in regions:
        for y in fit_years:
            t = int(np.flatnonzero(years == y)[0])
            fit = _fit_single(spec, dk, D[region - 1, t], N[t], scfg)
            rows.append((region, y, fit))
    path = out / f"fits_{spec.label}_{spec.dk}.csv"
    with open(path, "w", newline="") as fh:
        write_fits_csv(rows, fh, with_estimator=spec.method == "dspline")
    return dict(output=str(path), fits=len(rows), converged=sum(int(f.converged) for _, _, f in rows))


STUDY_FIELDS = {
    "exposures": _csv_list(float), "n_sim": int, "methods": _csv_list(), "target_year": int, "regions": _csv_list(),
    "master_seed": int, "workers": int, "fit_timeout": _optional_float, "write_fits": _bool, "svd_chains": int,
    "svd_iterations": _optional_int, "svd_warmup": _optional_int, "svd_gate": float,
    "topals_knots": _csv_list(int), "topals_kappa": float,
}


def cmd_study(a) -> dict:
    from .harness import StudyConfig, run_study
    from .hmd import HMDDirectory

    kw = {k: getattr(a, k) for k in STUDY_FIELDS if getattr(a, k) is not None}
    kw["output_dir"] = str(output_path(a.out, "study"))
    cfg = StudyConfig.desk_scale(**kw) if a.desk_scale else StudyConfig(**kw)
    hmd = HMDDirectory(a.hmd_dir) if a.hmd_dir else None
    res = run_study(cfg, knowledge_dir=a.knowledge_dir, hmd=hmd)
    failures = [dict(method=r.method, dk=r.dk, exposure=r.exposure, replicate=r.replicate, region=r.region,
                     reason=r.reason) for r in res.records if r.reason.startswith("failed")]
    return dict(output=cfg.output_dir, files=res.paths, records=len(res.records),
                excluded=res.manifest["exclusions"]["total"], failures=failures[:20], n_failures=len(failures))


def cmd_report(a) -> dict:
    from .harness import emit_plot_data, read_e0_summary_csv, read_metrics_csv

    sd = Path(_required(a.study_dir, "study_dir"))
    out = Path(a.out) if a.out else sd / "plots"
    rep = read_metrics_csv(sd / "metrics.csv")
    e0 = read_e0_summary_csv(sd / "e0_summary.csv")
    return dict(files=emit_plot_data(rep, e0, out))


def _required(value, name):
    if value in (None, "", []):
        raise UsageError(f"--{name.replace('_', '-')} is required")
    return value


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saemort", description="Small-area mortality estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file with option values")
        sp.add_argument("--out", help=f"output location (default ${OUTPUT_ROOT_ENV}/{name})")
        sp.set_defaults(func=fn)
        return sp

    sp = add("synth-hmd", cmd_synth_hmd, "write synthetic HMD-format input files")
    sp.add_argument("--seed", type=int)

    sp = add("ingest", cmd_ingest, "parse HMD files into cached CSV tables")
    sp.add_argument("--hmd-dir")
    sp.add_argument("--codes", type=_csv_list())

    sp = add("knowledge", cmd_knowledge, "build demographic-knowledge bundles")
    sp.add_argument("--hmd-dir")
    sp.add_argument("--methods", type=_csv_list())
    sp.add_argument("--dks", type=_csv_list())

    sp = add("simulate", cmd_simulate, "simulate datasets from the reference population")
    sp.add_argument("--hmd-dir")
    sp.add_argument("--exposure", type=float)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--path", choices=["single_year", "grouped"])

    sp = add("fit", cmd_fit, "fit one method to one dataset")
    sp.add_argument("--dataset")
    sp.add_argument("--method", help="method:dk[:estimator][:input_kind], e.g. dspline:dk1:D2")
    sp.add_argument("--knowledge-dir")
    sp.add_argument("--regions", type=_csv_list(int))
    sp.add_argument("--years", type=_csv_list(int))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--iterations", type=_optional_int)
    sp.add_argument("--warmup", type=_optional_int)

    sp = add("study", cmd_study, "run the simulation study grid")
    sp.add_argument("--hmd-dir")
    sp.add_argument("--knowledge-dir")
    sp.add_argument("--desk-scale", type=_bool, nargs="?", const=True)
    for name, cast in STUDY_FIELDS.items():
        sp.add_argument("--" + name.replace("_", "-"), type=cast)

    sp = add("report", cmd_report, "emit plot data from a study directory")
    sp.add_argument("--study-dir")
    return p


DEFAULTS = {
    "synth-hmd": dict(seed=20220711),
    "simulate": dict(exposure=1000.0, replicates=1, seed=20220711, path="single_year"),
    "fit": dict(seed=0, chains=4),
    "study": dict(desk_scale=False),
}


def _merge_config(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        for k in values:
            if not hasattr(args, k) or k in ("func", "command", "config"):
                raise UsageError(f"unknown option {k!r} in config for {args.command}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    casts = {act.dest: act.type for act in sub._actions if act.type is not None}
    for k, v in values.items():
        if getattr(args, k) is None:
            cast = casts.get(k)
            if cast is not None and not isinstance(v, (list, bool)) and v is not None:
                v = cast(v)
            elif cast is not None and isinstance(v, list):
                v = cast(",".join(str(x) for x in v))
            setattr(args, k, v)
    for k, v in DEFAULTS.get(args.command, {}).items():
        if getattr(args, k) is None:
            setattr(args, k, v)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _merge_config(parser, args)
        summary = args.func(args)
    except UsageError as exc:
        print(json.dumps(dict(error="UsageError", message=str(exc), command=args.command)), file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(json.dumps(dict(error=type(exc).__name__, message=str(exc), command=args.command)), file=sys.stderr)
        return EXIT_FATAL
    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
