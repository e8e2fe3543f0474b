"""Workflows behind the command line: simulate, analyze, report and the certificate checks."""

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .analysis import (
    ShellStats,
    box_energies,
    correlation_scales,
    dimension_branch,
    estimate_correlation_dim,
    estimate_fourier_dim,
    fl_moment_trend,
    fl_norm,
    predicted_dimension,
    shell_stats,
)
from .config import RunConfig, fourier_tolerance
from .errors import GMCError, InsufficientShells, SchemaMismatch
from .gmc import MeasureState, advance, spectrum
from .grid import GridSpec
from .kernel import LOG2, get_kernels, kernel_certificate, kernel_log_sum_check
from .pou import (
    build_pou,
    decoupling_check,
    default_tracked_frequencies,
    derivative_ratio_spread,
    l2_scaling_report,
    localized_coeffs,
    localized_l2_norms,
)
from .sampler import lognormal_weight, p4_ratios, read_field_dump, sample_level, write_field_dump

WORKERS_ENV = "GMC_WORKERS"


def dump_json(obj, path):
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


# worker-process state, set once by the pool initializer
_STATE = {}


def _init_worker(kernels, cfg_dict):
    _STATE["kernels"] = kernels
    _STATE["cfg"] = RunConfig.from_dict(cfg_dict)


def replica_summary(replica, kernels=None, cfg=None):
    """Everything the analysis needs from one replica, without keeping densities."""
    kernels = kernels if kernels is not None else _STATE["kernels"]
    cfg = cfg if cfg is not None else _STATE["cfg"]
    grid = GridSpec(cfg.d, cfg.M)
    ks = correlation_scales(grid.M)
    state = MeasureState.uniform(grid)
    masses = [state.total_mass]
    fl = []
    spec = spectrum(state)
    for j in range(1, cfg.levels + 1):
        psi = sample_level(kernels[j - 1], cfg.seed, replica)
        state = advance(state, lognormal_weight(psi, cfg.gamma, kernels[j - 1]))
        masses.append(state.total_mass)
        spec = spectrum(state)
        fl.append(fl_norm(spec, cfg.tau / 2, cfg.q))
    return {
        "replica": int(replica),
        "mass": masses,
        "shells": shell_stats(spec).as_dict(),
        "box_k": ks.tolist(),
        "box_energy": box_energies(state.density, ks).tolist(),
        "fl_norm": fl,
    }


def _write_optional(cfg, kernels, out):
    """Spectrum CSV and raw field dumps for replica 0."""
    grid = GridSpec(cfg.d, cfg.M)
    state = MeasureState.uniform(grid)
    fields_dir = out / "fields"
    if cfg.dump_fields:
        fields_dir.mkdir(exist_ok=True)
    for j in range(1, cfg.levels + 1):
        psi = sample_level(kernels[j - 1], cfg.seed, 0)
        if cfg.dump_fields:
            write_field_dump(fields_dir / f"psi_r0_j{j}.gmcf", psi, grid)
        state = advance(state, lognormal_weight(psi, cfg.gamma, kernels[j - 1]))
    if cfg.spectrum_csv:
        spectrum(state).to_csv(out / "spectrum_r0.csv")


def simulate(cfg, out=None):
    """Run the ensemble and write ``config.json`` and ``summaries.json``."""
    cfg = cfg.resolved()
    out = Path(out or cfg.out or "gmc-run")
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(cfg.d, cfg.M)
    kernels = get_kernels(cfg.levels, grid)
    workers = worker_count()
    if workers > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(kernels, cfg.to_dict())) as pool:
            summaries = list(pool.map(replica_summary, range(cfg.replicas)))
    else:
        summaries = [replica_summary(r, kernels, cfg) for r in range(cfg.replicas)]
    header = {"schema_version": SCHEMA_VERSION, "code_version": __version__}
    dump_json({**header, "config": cfg.to_dict()}, out / "config.json")
    dump_json({**header, "replicas": summaries}, out / "summaries.json")
    if cfg.spectrum_csv or cfg.dump_fields:
        _write_optional(cfg, kernels, out)
    return out


def _check_schema(obj, path):
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"{path}: schema version {version!r}, expected {SCHEMA_VERSION}")


def _safe_estimate(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs).as_dict()
    except InsufficientShells as exc:
        return {"error": str(exc)}


def analyze(run_dir):
    """Estimates for a simulated run; a pure function of the directory contents."""
    run_dir = Path(run_dir)
    cfg_obj = load_json(run_dir / "config.json")
    _check_schema(cfg_obj, run_dir / "config.json")
    summ = load_json(run_dir / "summaries.json")
    _check_schema(summ, run_dir / "summaries.json")
    cfg = RunConfig.from_dict(cfg_obj["config"])
    reps = summ["replicas"]
    N = len(reps)

    shells = [ShellStats.from_dict(r["shells"]) for r in reps]
    lo, hi = cfg.shells if cfg.shells is not None else (2, int(shells[0].k[-1]))
    est_main = _safe_estimate(estimate_fourier_dim, shells, cfg.d, mode=cfg.mode, shells=(lo, hi))
    other = "mean" if cfg.mode == "sup" else "sup"
    est_other = _safe_estimate(estimate_fourier_dim, shells, cfg.d, mode=other, shells=(lo, hi))
    box_k = reps[0]["box_k"]
    energies = [r["box_energy"] for r in reps]
    est_corr = _safe_estimate(estimate_correlation_dim, energies, box_k, cfg.d)

    masses = np.array([r["mass"] for r in reps])
    final = masses[:, -1]
    sem = float(final.std(ddof=1) / math.sqrt(N)) if N > 1 else float("nan")
    mass = {
        "mean_per_level": masses.mean(axis=0).tolist(),
        "final_mean": float(final.mean()),
        "final_stderr": sem,
        "z_score": float((final.mean() - 1.0) / sem) if N > 1 and sem > 0 else None,
    }

    fl = fl_moment_trend(np.array([r["fl_norm"] for r in reps]).T, cfg.p) if cfg.levels >= 1 else None

    D = predicted_dimension(cfg.gamma, cfg.d)
    tol = fourier_tolerance(cfg.d)
    verdicts = {}
    dim_f = est_main.get("dimension")
    dim_2 = est_corr.get("dimension")
    if tol is not None and not cfg.trend_only:
        verdicts["fourier_within_tolerance"] = dim_f is not None and abs(dim_f - D) <= tol
        verdicts["correlation_within_tolerance"] = dim_2 is not None and abs(dim_2 - D) <= tol
    if dim_f is not None and dim_2 is not None:
        verdicts["fourier_vs_correlation_gap"] = abs(dim_f - dim_2)
    if mass["z_score"] is not None:
        verdicts["mass_within_4_stderr"] = abs(mass["z_score"]) <= 4.0
    if fl is not None:
        verdicts["fl_moments_bounded"] = fl["bounded"]

    dumps = []
    for path in sorted((run_dir / "fields").glob("*.gmcf")) if (run_dir / "fields").is_dir() else []:
        field, (d, M) = read_field_dump(path)
        dumps.append({"file": path.name, "j": field.j, "d": d, "M": M, "grid_variance": float(field.values.var())})
    dumps.sort(key=lambda r: r["j"])

    shell_table = {
        "k": shells[0].k.tolist(),
        "count": shells[0].count.tolist(),
        "ensemble_sup": np.mean([s.sup for s in shells], axis=0).tolist(),
        "ensemble_mean": np.mean([s.mean for s in shells], axis=0).tolist(),
    }
    result = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "replicas": N,
        "trend_only": cfg.trend_only,
        "predicted": {"dimension": D, "branch": dimension_branch(cfg.gamma, cfg.d)},
        "tolerance": tol,
        "fourier": est_main,
        "fourier_crosscheck": est_other,
        "correlation": est_corr,
        "shell_table": shell_table,
        "mass": mass,
        "fl_trend": fl,
        "verdicts": verdicts,
        "field_dumps": dumps,
    }
    dump_json(result, run_dir / "estimates.json")
    _write_regression_csv(result, run_dir / "regression.csv")
    return result


def _write_regression_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "k", "log2_value"])
        for key in ("fourier", "fourier_crosscheck", "correlation"):
            est = result[key]
            for pt in est.get("points", []):
                w.writerow([est["method"], pt["k"], repr(pt["log2_value"])])


def report(run_dirs):
    """Predicted against estimated dimension for each run, and a monotonicity check per ``d``."""
    rows = []
    for rd in run_dirs:
        path = Path(rd) / "estimates.json"
        est = load_json(path) if path.exists() else analyze(rd)
        _check_schema(est, path)
        cfg = est["config"]
        rows.append(
            {
                "run": str(rd),
                "d": cfg["d"],
                "gamma": cfg["gamma"],
                "predicted": est["predicted"]["dimension"],
                "branch": est["predicted"]["branch"],
                "fourier": est["fourier"].get("dimension"),
                "fourier_stderr": est["fourier"].get("stderr"),
                "correlation": est["correlation"].get("dimension"),
                "trend_only": est["trend_only"],
            }
        )
    rows.sort(key=lambda r: (r["d"], r["gamma"]))
    monotone = {}
    for d in sorted({r["d"] for r in rows}):
        sub = [r for r in rows if r["d"] == d]
        for key in ("fourier", "correlation"):
            vals = [r[key] for r in sub]
            ok = all(a is not None and b is not None and b <= a for a, b in zip(vals, vals[1:]))
            monotone[f"d={d}:{key}"] = ok
    return {"rows": rows, "monotone_decreasing": monotone}


def format_report(rep):
    lines = [f"{'d':>2} {'gamma':>6} {'D':>7} {'dim_F':>7} {'+-':>6} {'dim_2':>7}  branch"]
    for r in rep["rows"]:
        f = "   n/a" if r["fourier"] is None else f"{r['fourier']:7.3f}"
        s = "" if r["fourier_stderr"] is None else f"{r['fourier_stderr']:6.3f}"
        c = "   n/a" if r["correlation"] is None else f"{r['correlation']:7.3f}"
        tag = " (trend-only)" if r["trend_only"] else ""
        lines.append(f"{r['d']:>2} {r['gamma']:6.3f} {r['predicted']:7.4f} {f} {s:>6} {c}  {r['branch']}{tag}")
    for key, ok in rep["monotone_decreasing"].items():
        lines.append(f"monotone decreasing {key}: {'yes' if ok else 'no'}")
    return "\n".join(lines)


def kernel_check(cfg, out=None, resolved_from=6):
    """Certificates of every level, the octave log-law and derivative-moment diagnostics."""
    cfg = cfg.resolved()
    grid = GridSpec(cfg.d, cfg.M)
    kernels = get_kernels(cfg.levels, grid)
    certs = [kernel_certificate(k) for k in kernels]
    variances = [c["variance"] for c in certs]
    trend = all(
        abs(variances[b] - LOG2) <= abs(variances[a] - LOG2) + 1e-3
        for a in range(len(variances))
        for b in range(a + 2, len(variances))
    )
    log_sum = kernel_log_sum_check(kernels, grid, resolved_from=resolved_from) if len(kernels) >= 4 else None
    checks = {f"kernel_level_{c['j']}": c["passed"] for c in certs}
    checks["variance_trend"] = trend
    if log_sum is not None and log_sum["passed"] is not None:
        checks["log_law_resolved_octaves"] = log_sum["passed"]
    report_ = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "certificates": certs,
        "log_sum": log_sum,
        "derivative_moments": p4_ratios(kernels),
        "checks": checks,
        "passed": all(checks.values()),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(report_, out / "kernel_report.json")
        for k in kernels:
            k.to_csv(out / f"kernel_j{k.j}.csv", max_distance=3.0 * 2.0**-k.j)
    return report_


def pou_check(cfg, out=None, seeds=3, freq_count=8):
    """Partition certificates, the decoupling identity, and the localized l2 scaling trend."""
    cfg = cfg.resolved()
    grid = GridSpec(cfg.d, cfg.M)
    scales = [k for k in range(1, cfg.levels + 1) if 2.0**-k >= 8.0 / grid.M]
    fams = {k: build_pou(k, grid) for k in scales}
    # spectral derivatives of a window narrower than 32 cells are too coarse to compare
    resolved = [fams[k] for k in scales if (grid.M >> k) >= 32]
    spread = derivative_ratio_spread(resolved) if len(resolved) >= 2 else None
    kernels = get_kernels(cfg.levels, grid)
    tracked = default_tracked_frequencies(grid)
    low = tracked[:freq_count]

    check_levels = sorted({scales[0], scales[len(scales) // 2], scales[-1]})
    decoupling = []
    for s in range(seeds):
        state = MeasureState.uniform(grid)
        for j in range(1, max(check_levels) + 1):
            w = lognormal_weight(sample_level(kernels[j - 1], cfg.seed + s, 0), cfg.gamma, kernels[j - 1])
            new = advance(state, w)
            if j in check_levels:
                c = localized_coeffs(state, w, fams[j], cfg.tau, low)
                rep = decoupling_check(c, state, new)
                rep["seed"] = cfg.seed + s
                decoupling.append(rep)
            state = new

    # ensemble mean of per-cube localized l2 norms, on a fixed sample of cubes
    sums = np.zeros(len(scales))
    for r in range(cfg.replicas):
        state = MeasureState.uniform(grid)
        for i, k in enumerate(scales):
            w = lognormal_weight(sample_level(kernels[k - 1], cfg.seed, r), cfg.gamma, kernels[k - 1])
            ncubes = fams[k].center_index.shape[0]
            cubes = np.linspace(0, ncubes - 1, min(ncubes, 8)).astype(int)
            sums[i] += localized_l2_norms(state, w, fams[k], cfg.tau, cubes).mean()
            state = advance(state, w)
    scaling = l2_scaling_report(scales, sums / cfg.replicas, cfg.d, cfg.tau, cfg.gamma) if len(scales) >= 3 else None

    checks = {f"partition_scale_{k}": f.certificate["passed"] for k, f in fams.items()}
    checks["decoupling_identity"] = all(r["passed"] for r in decoupling)
    if spread is not None:
        checks["derivative_scaling_within_10pct"] = all(v <= 0.10 for v in spread.values())
    if scaling is not None:
        checks["localized_l2_scaling"] = scaling["passed"]
    report_ = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "certificates": [f.certificate for f in fams.values()],
        "derivative_ratio_spread": spread,
        "decoupling": [{k: v for k, v in r.items() if k != "rows"} for r in decoupling],
        "tracked_frequencies": low.tolist(),
        "l2_scaling": scaling,
        "checks": checks,
        "passed": all(checks.values()),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(report_, out / "pou_report.json")
    return report_


__all__ = [
    "GMCError",
    "analyze",
    "kernel_check",
    "pou_check",
    "report",
    "simulate",
]
