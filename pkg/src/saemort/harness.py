"""Simulation-study runner: scenario grid, replicate jobs, aggregation and output files.

Seeds form a tree: the master seed and the exposure index give the data seed of
a scenario, and the simulators derive one stream per (replicate, region, year)
from it. Sampler seeds add the method index and the replicate. Every job is a
pure function of its seeds, so results do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import json
import signal
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .brass import EXPOSURE_SIZES, YEARS, BrassParams, TrueWorld, build_true_world, region_index, simulate_grouped, simulate_single_year
from .dspline import DsplineBasis, fit_dspline
from .hmd import HMDDirectory
from .knowledge import DSPLINE_KINDS, DK_KINDS, DemographicKnowledge, KnowledgeSources, assemble_dk, load_bundle, smoothed_series
from .lifetable import CANONICAL_GROUPING, partial_e0, raw_partial_e0
from .metrics import MEASURES, PerformanceReport, performance, summarize_e0
from .pspline import SmootherConfig
from .topals import TopalsBasis, fit_topals_grouped, fit_topals_single

INPUT_KINDS = ("single_year", "grouped")
RAW_LABEL = "raw"
E0_COLUMNS = ["method", "dk", "exposure", "region", "year", "minimum", "whisker_low", "q1", "median", "q3",
              "whisker_high", "maximum", "truth", "n"]
FIT_COLUMNS = ["method", "dk", "exposure", "replicate", "region", "year", "age_or_group", "point", "lower", "upper",
               "included"]
EXCLUSION_COLUMNS = ["method", "dk", "exposure", "region", "n_sim", "included", "excluded", "nonconverged", "failed",
                     "diagnostics", "scenario_gate"]


class UnresolvedArtifactError(LookupError):
    """A configured method/knowledge pair has no artifact."""


class FitTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One estimator in the grid.

    ``estimator`` names the D-spline calibration (D1, D2 or DLC) and is empty
    otherwise. The SVD-model always consumes grouped data.
    """

    method: str
    dk: str = "dk1"
    input_kind: str = "single_year"
    estimator: str = ""

    def __post_init__(self):
        if self.method not in ("topals", "dspline", "svd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dk not in DK_KINDS:
            raise ValueError(f"unknown knowledge kind {self.dk!r}")
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"unknown input kind {self.input_kind!r}")
        if self.method == "dspline" and self.estimator not in DSPLINE_KINDS:
            raise ValueError("D-spline methods need an estimator in D1/D2/DLC")
        if self.method == "svd" and self.input_kind != "grouped":
            object.__setattr__(self, "input_kind", "grouped")

    @property
    def label(self) -> str:
        base = {"topals": "TOPALS", "svd": "SVD"}.get(self.method, self.estimator)
        if self.method != "svd" and self.input_kind == "grouped":
            base += "-grouped"
        return base

    @classmethod
    def parse(cls, obj) -> "MethodSpec":
        """From a dict or a ``method:dk[:estimator][:input_kind]`` string."""
        if isinstance(obj, MethodSpec):
            return obj
        if isinstance(obj, dict):
            return cls(**obj)
        parts = str(obj).split(":")
        kw = dict(method=parts[0])
        rest = parts[1:]
        if rest:
            kw["dk"] = rest.pop(0)
        for p in rest:
            if p in INPUT_KINDS:
                kw["input_kind"] = p
            else:
                kw["estimator"] = p
        return cls(**kw)


def default_methods(dks=DK_KINDS, include_svd: bool = True) -> tuple:
    out = []
    for dk in dks:
        out.append(MethodSpec("topals", dk))
        out.extend(MethodSpec("dspline", dk, estimator=e) for e in DSPLINE_KINDS)
        if include_svd:
            out.append(MethodSpec("svd", dk, "grouped"))
    return tuple(out)


@dataclass(frozen=True)
class StudyConfig:
    exposures: tuple = EXPOSURE_SIZES
    n_sim: int = 1000
    methods: tuple = field(default_factory=default_methods)
    target_year: int = 2000
    regions: tuple = ("low", "medium", "high")
    master_seed: int = 20220711
    output_dir: str = "study_output"
    workers: int = 1
    fit_timeout: float | None = None
    write_fits: bool = True
    svd_chains: int = 4
    svd_iterations: int | None = None
    svd_warmup: int | None = None
    svd_gate: float = 0.9
    topals_knots: tuple = TopalsBasis().knots
    topals_kappa: float = 1.0

    def __post_init__(self):
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if not self.exposures or any(not float(e) > 0 for e in self.exposures):
            raise ValueError("exposure sizes must be positive")
        object.__setattr__(self, "exposures", tuple(float(e) for e in self.exposures))
        object.__setattr__(self, "methods", tuple(MethodSpec.parse(m) for m in self.methods))
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "topals_knots", tuple(self.topals_knots))
        for r in self.regions:
            region_index(r)
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate method specifications")

    @classmethod
    def desk_scale(cls, **overrides) -> "StudyConfig":
        """200 replicates at exposures 1 000, 50 000 and 1 000 000."""
        base = dict(n_sim=200, exposures=(1_000, 50_000, 1_000_000))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["methods"] = [asdict(m) for m in self.methods]
        d["exposures"] = list(self.exposures)
        d["regions"] = list(self.regions)
        d["topals_knots"] = list(self.topals_knots)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study options: {sorted(unknown)}")
        return cls(**d)


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed for a path in the seed tree."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint32)[0])


# -------------------------------------------------------------- inputs

def reference_world(hmd: HMDDirectory, sources: KnowledgeSources = KnowledgeSources(), sex: str = "male",
                    params: BrassParams | None = None, cfg: SmootherConfig = SmootherConfig()) -> TrueWorld:
    """Smoothed reference series (1995-2005) pushed through the Brass transform."""
    code = sources.reference
    lr, ex = smoothed_series(hmd.deaths(code, sex), hmd.exposure(code, sex), YEARS, cfg)
    return build_true_world(lr, ex, params, YEARS, provenance=dict(reference=code, sex=sex))


def required_knowledge(cfg: StudyConfig) -> list[tuple[str, str]]:
    return sorted({(m.method, m.dk) for m in cfg.methods})


def resolve_knowledge(cfg: StudyConfig, knowledge: dict | None = None, knowledge_dir=None,
                      hmd: HMDDirectory | None = None, sources: KnowledgeSources = KnowledgeSources()) -> dict:
    """Map every needed (method, dk) to a DemographicKnowledge.

    Looks in ``knowledge`` first, then in bundle directories named
    ``{method}_{dk}`` under ``knowledge_dir``, then builds from ``hmd``.
    """
    out = {}
    for key in required_knowledge(cfg):
        if knowledge and key in knowledge:
            out[key] = knowledge[key]
            continue
        if knowledge_dir is not None:
            path = Path(knowledge_dir) / f"{key[0]}_{key[1]}"
            if (path / "manifest.json").exists():
                out[key] = load_bundle(path)
                continue
        if hmd is not None:
            out[key] = assemble_dk(key[0], key[1], hmd, sources)
            continue
        raise UnresolvedArtifactError(f"no knowledge artifact for {key[0]}/{key[1]}")
    for m in cfg.methods:
        art = out[(m.method, m.dk)].artifact
        if m.method == "dspline" and isinstance(art, dict) and m.estimator not in art:
            raise UnresolvedArtifactError(f"{m.dk} bundle lacks the {m.estimator} calibration")
    return out


# -------------------------------------------------------------- replicate jobs

@dataclass
class Record:
    method: str
    dk: str
    exposure: float
    replicate: int
    region: str
    included: bool
    reason: str = ""
    estimate: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    e0: float = float("nan")


@contextmanager
def _time_limit(seconds):
    if not seconds:
        yield
        return

    def handler(signum, frame):
        raise FitTimeout(f"fit exceeded {seconds} s")

    old = signal.signal(signal.SIGALRM, handler)
    signal.setitimer(signal.ITIMER_REAL, float(seconds))
    try:
        yield
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, old)


def _calibration(dk: DemographicKnowledge, estimator: str):
    art = dk.artifact
    return art[estimator] if isinstance(art, dict) else art


def _fit_single(spec: MethodSpec, dk: DemographicKnowledge, d, n, cfg: StudyConfig):
    if spec.method == "topals":
        basis = TopalsBasis(cfg.topals_knots, cfg.topals_kappa)
        if spec.input_kind == "grouped":
            return fit_topals_grouped(d, n, dk.artifact, basis)
        return fit_topals_single(d, n, dk.artifact, basis)
    return fit_dspline(d, n, _calibration(dk, spec.estimator), DsplineBasis(), spec.input_kind)


def _svd_records(spec, mi, dk, dsg, world, N, rep, cfg, ctx_regions, t):
    from .svd.diagnostics import run_checks
    from .svd.model import SvdData
    from .svd.sampler import SamplerConfig, default_iterations, sample_posterior

    it, wu = default_iterations(N)
    scfg = SamplerConfig(chains=cfg.svd_chains, iterations=cfg.svd_iterations or it, warmup=cfg.svd_warmup or wu)
    seed = derive_seed(cfg.master_seed, 1, cfg.exposures.index(N), mi, rep)
    data = SvdData(dsg.deaths, np.broadcast_to(dsg.exposure[None], dsg.deaths.shape), dk.artifact.V)
    with _time_limit(cfg.fit_timeout):
        summ = sample_posterior(data, seed=seed, cfg=scfg)
    report = run_checks(summ)
    reason = "" if report.passed else "diagnostics"
    out = []
    for name, ri in ctx_regions:
        out.append(Record(spec.label, spec.dk, N, rep, name, report.passed, reason,
                          summ.median[ri, t].copy(), summ.lower[ri, t].copy(), summ.upper[ri, t].copy(),
                          float(summ.e0_median[ri, t])))
    return out


def replicate_job(ctx: dict, exposure_index: int, rep: int) -> list[Record]:
    """Simulate one replicate at one exposure and fit every configured method."""
    cfg: StudyConfig = ctx["cfg"]
    world: TrueWorld = ctx["world"]
    knowledge = ctx["knowledge"]
    N = cfg.exposures[exposure_index]
    seed = derive_seed(cfg.master_seed, 0, exposure_index)
    t = world.year_index(cfg.target_year)
    regions = [(r, region_index(r)) for r in cfg.regions]
    ds = simulate_single_year(world, N, seed, rep)
    need_grouped = any(m.method == "svd" for m in cfg.methods)
    dsg = simulate_grouped(world, N, seed, rep) if need_grouped else None
    agg = ds.aggregated(CANONICAL_GROUPING) if any(m.input_kind == "grouped" and m.method != "svd" for m in cfg.methods) else None

    records = []
    for name, ri in regions:
        d, n = ds.region_year(ri, cfg.target_year)
        records.append(Record(RAW_LABEL, "", N, rep, name, True, e0=raw_partial_e0(d / n)))
    for mi, spec in enumerate(cfg.methods):
        dk = knowledge[(spec.method, spec.dk)]
        if spec.method == "svd":
            try:
                records.extend(_svd_records(spec, mi, dk, dsg, world, N, rep, cfg, regions, t))
            except Exception as exc:  # per-fit failures are recorded
                records.extend(Record(spec.label, spec.dk, N, rep, name, False, f"failed: {type(exc).__name__}: {exc}")
                               for name, _ in regions)
            continue
        for name, ri in regions:
            if spec.input_kind == "grouped":
                d, n = agg[0][ri, t], agg[1][t]
            else:
                d, n = ds.region_year(ri, cfg.target_year)
            try:
                with _time_limit(cfg.fit_timeout):
                    fit = _fit_single(spec, dk, d, n, cfg)
            except Exception as exc:
                records.append(Record(spec.label, spec.dk, N, rep, name, False, f"failed: {type(exc).__name__}: {exc}"))
                continue
            ok = bool(fit.converged and np.all(np.isfinite(fit.lower)) and np.all(np.isfinite(fit.upper)))
            e0 = partial_e0(np.exp(fit.log_rates)) if np.all(np.isfinite(fit.log_rates)) else float("nan")
            records.append(Record(spec.label, spec.dk, N, rep, name, ok, "" if ok else "nonconverged",
                                  fit.log_rates, fit.lower, fit.upper, e0))
    return records


_CTX: dict = {}


def _init_worker(ctx):
    _CTX.clear()
    _CTX.update(ctx)


def _pool_job(args):
    return replicate_job(_CTX, *args)


# -------------------------------------------------------------- aggregation

@dataclass
class StudyResult:
    report: PerformanceReport
    e0_summaries: list
    exclusions: list
    records: list
    manifest: dict
    paths: dict = field(default_factory=dict)


def _truths(world: TrueWorld, label: str, ri: int, t: int):
    if label == "SVD":
        return world.grouped_log_rates()[ri, t], list(world.grouping.labels)
    return world.log_rates[ri, t], [str(x) for x in range(world.log_rates.shape[-1])]


def aggregate(records: list[Record], cfg: StudyConfig, world: TrueWorld):
    """Performance rows, e0 summaries and exclusion counts in a fixed order."""
    t = world.year_index(cfg.target_year)
    report = PerformanceReport()
    e0_rows, excl = [], []
    order = [(RAW_LABEL, "")] + [(m.label, m.dk) for m in cfg.methods]
    by_key: dict = {}
    for r in records:
        by_key.setdefault((r.method, r.dk, r.exposure, r.region), []).append(r)
    gated = set()
    for label, dk in order:
        if label != "SVD":
            continue
        for N in cfg.exposures:
            recs = [r for reg in cfg.regions for r in by_key.get((label, dk, N, reg), [])]
            passed = np.mean([r.included for r in recs]) if recs else 0.0
            if passed < cfg.svd_gate:
                gated.add((dk, N))
    for label, dk in order:
        for N in cfg.exposures:
            for reg in cfg.regions:
                recs = sorted(by_key.get((label, dk, N, reg), []), key=lambda r: r.replicate)
                if not recs:
                    continue
                ri = region_index(reg)
                e0_truth = partial_e0(np.exp(world.log_rates[ri, t]))
                gate = label == "SVD" and (dk, N) in gated
                inc = [r for r in recs if r.included] if not gate else []
                reasons = [r.reason.split(":")[0] for r in recs if not r.included]
                excl.append(dict(method=label, dk=dk, exposure=N, region=reg, n_sim=len(recs), included=len(inc),
                                 excluded=len(recs) - len(inc), nonconverged=reasons.count("nonconverged"),
                                 failed=reasons.count("failed"), diagnostics=reasons.count("diagnostics"),
                                 scenario_gate=int(gate)))
                if inc:
                    s = summarize_e0([r.e0 for r in inc], e0_truth)
                    e0_rows.append(dict(method=label, dk=dk, exposure=N, region=reg, year=cfg.target_year, **asdict(s)))
                if label == RAW_LABEL or not inc:
                    continue
                truth, labels = _truths(world, label, ri, t)
                perf = performance(np.vstack([r.estimate for r in inc]), np.vstack([r.lower for r in inc]),
                                   np.vstack([r.upper for r in inc]), truth)
                report.add(label, dk, N, reg, cfg.target_year, labels, perf)
    return report, e0_rows, excl, gated


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_rows(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_fits(path: Path, records: list[Record], cfg: StudyConfig, world: TrueWorld) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for r in records:
            if r.method == RAW_LABEL or r.estimate is None:
                continue
            _, labels = _truths(world, r.method, region_index(r.region), world.year_index(cfg.target_year))
            for lab, p, lo, hi in zip(labels, r.estimate, r.lower, r.upper):
                w.writerow([r.method, r.dk, repr(r.exposure), r.replicate, r.region, cfg.target_year, lab,
                            repr(float(p)), repr(float(lo)), repr(float(hi)), int(r.included)])


def write_e0_replicates(path: Path, records: list[Record], cfg: StudyConfig) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "dk", "exposure", "replicate", "region", "year", "e0", "included", "reason"])
        for r in records:
            w.writerow([r.method, r.dk, repr(r.exposure), r.replicate, r.region, cfg.target_year, repr(float(r.e0)),
                        int(r.included), r.reason])


def run_study(cfg: StudyConfig, world: TrueWorld | None = None, knowledge: dict | None = None, knowledge_dir=None,
              hmd: HMDDirectory | None = None, write: bool = True) -> StudyResult:
    """Run the grid, aggregate, and write CSVs plus a manifest to ``cfg.output_dir``."""
    if world is None:
        if hmd is None:
            raise UnresolvedArtifactError("need a TrueWorld or an HMD directory for the reference population")
        world = reference_world(hmd)
    world.year_index(cfg.target_year)
    kn = resolve_knowledge(cfg, knowledge, knowledge_dir, hmd)
    ctx = dict(cfg=cfg, world=world, knowledge=kn)
    jobs = [(ei, rep) for ei in range(len(cfg.exposures)) for rep in range(cfg.n_sim)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(ctx,)) as ex:
            chunks = list(ex.map(_pool_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        chunks = [replicate_job(ctx, *j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    report, e0_rows, excl, gated = aggregate(records, cfg, world)
    from .svd import KERNEL_BACKEND

    manifest = dict(
        version=__version__, numpy=np.__version__, scipy=scipy.__version__, kernel_backend=KERNEL_BACKEND,
        config=cfg.to_dict(),
        seeds=dict(master=cfg.master_seed, data={repr(N): derive_seed(cfg.master_seed, 0, i) for i, N in enumerate(cfg.exposures)}),
        world=dict(years=[int(y) for y in world.years], provenance=world.provenance),
        knowledge={f"{m}_{k}": kn[(m, k)].provenance for m, k in kn},
        svd_gated=[dict(dk=dk, exposure=N) for dk, N in sorted(gated)],
        exclusions=dict(total=sum(e["excluded"] for e in excl), records=len(records)),
        metric_definitions=report.metadata,
    )
    result = StudyResult(report, e0_rows, excl, records, manifest)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = dict(metrics=out / "metrics.csv", e0_summary=out / "e0_summary.csv",
                     e0_replicates=out / "e0_replicates.csv", exclusions=out / "exclusions.csv",
                     manifest=out / "manifest.json")
        with open(paths["metrics"], "w", newline="") as fh:
            report.write_csv(fh)
        _write_rows(paths["e0_summary"], E0_COLUMNS, e0_rows)
        write_e0_replicates(paths["e0_replicates"], records, cfg)
        _write_rows(paths["exclusions"], EXCLUSION_COLUMNS, excl)
        if cfg.write_fits:
            paths["fits"] = out / "fits.csv"
            write_fits(paths["fits"], records, cfg, world)
        paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
        result.paths = {k: str(v) for k, v in paths.items()}
    return result


# -------------------------------------------------------------- plot data

PLOT_PERFORMANCE_COLUMNS = ["panel", "series", "dk", "exposure", "region", "year", "age_or_group", "value", "n_effective"]
PLOT_E0_COLUMNS = ["panel", "series"] + E0_COLUMNS[1:]


def read_metrics_csv(path) -> PerformanceReport:
    rep = PerformanceReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep.rows.append((row["method"], row["dk"], float(row["exposure"]), row["region"], int(row["year"]),
                             row["age_or_group"], row["measure"], float(row["value"]), int(row["n_effective"])))
    return rep


def read_e0_summary_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def panel_series(report: PerformanceReport) -> list[tuple[str, str]]:
    """Distinct (measure, method) pairs, one series per performance panel."""
    seen = []
    for r in report.rows:
        key = (r[6], r[0])
        if key not in seen:
            seen.append(key)
    return seen


def emit_plot_data(report: PerformanceReport, e0_summaries, out_dir) -> dict:
    """Tidy files for the performance-by-age panels and the e0 boxplot panels.

    The performance file has one panel per measure and one series per
    method; the e0 file has one panel per exposure and one box per method.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    perf = out / "plot_performance_by_age.csv"
    with open(perf, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_PERFORMANCE_COLUMNS)
        for m in MEASURES:
            for r in report.rows:
                if r[6] == m:
                    w.writerow([m, r[0], r[1], _fmt(r[2]), r[3], r[4], r[5], repr(float(r[7])), r[8]])
    box = out / "plot_e0_boxplots.csv"
    with open(box, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_E0_COLUMNS)
        for s in e0_summaries:
            w.writerow([f"exposure={_fmt(s['exposure'])}", s["method"]] + [_fmt(s[c]) for c in E0_COLUMNS[1:]])
    return {"performance_by_age": str(perf), "e0_boxplots": str(box)}
