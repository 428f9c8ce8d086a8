#!/usr/bin/env python3
"""
hdyield CLI - Command Line Interface for rare-event yield estimation

Runs the surrogate estimator and the plain Monte Carlo baseline against
synthetic testbenches, runs feature selection on its own, and joins run
directories into a comparison report.
"""

import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Optional, Tuple

import click
import numpy as np
import pandas as pd
import psutil
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn
from tabulate import tabulate

from . import __version__
from .checkpoint import (
    RunManifest,
    load_bench_spec,
    load_manifest,
    save_bench_spec,
    save_manifest,
    save_model,
    sha256_text,
)
from .config import BenchSpec, ExperimentConfig, SeedConfig, default_cache_dir, default_threads, dump_config, parse_config
from .estimator import YieldEstimator, mc_baseline_run, mc_required_samples
from .exceptions import ConfigurationError, HdyieldError, TraceExistsError
from .sampling import lhs_points, to_standard_normal
from .shrinkage import select_features
from .testbench import Testbench, build_bench, mc_oracle
from .trace import RunTrace, YieldEstimate, read_trace, selection_frame, write_frame, write_trace

console = Console()
logger = logging.getLogger(__name__)

SLOW_DIMENSION = 128
TRACE_FILE = "trace.csv"
MANIFEST_FILE = "manifest.json"
BENCH_FILE = "bench.yaml"


def setup_logging(level: int = logging.INFO) -> None:
    """Route library logging through rich; called once per process."""
    logging.basicConfig(
        level=level,
        format="%(name)s - %(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


def print_success(message: str):
    """Print success message with formatting."""
    console.print(f"[green]✅ {message}[/green]")


def print_error(message: str):
    """Print error message with formatting."""
    console.print(f"[red]❌ Error: {message}[/red]")


def print_info(message: str):
    """Print info message with formatting."""
    console.print(f"[blue]ℹ️  {message}[/blue]")


def print_warning(message: str):
    """Print warning message with formatting."""
    console.print(f"[yellow]⚠️  Warning: {message}[/yellow]")


def _slow_enabled(flag: bool) -> bool:
    return flag or os.getenv("HDYIELD_SLOW", "").strip().lower() in ("1", "true", "yes")


def _resolve_threads(option: Optional[int], configured: int) -> int:
    """--threads, then HDYIELD_THREADS, then the config file."""
    if option is not None:
        return max(1, option)
    if os.getenv("HDYIELD_THREADS", "").strip():
        return default_threads()
    return configured


def _load_config(path: str, seed: Optional[int]) -> ExperimentConfig:
    cfg = parse_config(path)
    if seed is not None:
        cfg.run.seeds = SeedConfig.from_base(seed)
    return cfg


def _prepare_out(out: str, force: bool, guarded: str = TRACE_FILE) -> Path:
    out_dir = Path(out)
    if (out_dir / guarded).exists() and not force:
        raise TraceExistsError(str(out_dir / guarded))
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _check_dimension(spec: BenchSpec, slow: bool) -> None:
    if spec.dimension > SLOW_DIMENSION and not _slow_enabled(slow):
        raise ConfigurationError(
            f"dimension {spec.dimension} exceeds {SLOW_DIMENSION}; pass --slow or set HDYIELD_SLOW=1",
            key_path="bench.dimension",
        )


def cached_bench(spec: BenchSpec, cache_dir: Optional[Path] = None) -> Tuple[Testbench, bool]:
    """Build a bench, reusing a calibrated spec from the cache when one exists."""
    cache_dir = cache_dir or default_cache_dir()
    path = cache_dir / f"bench-{spec.cache_key()}.yaml"
    if spec.threshold is None and path.exists():
        return build_bench(load_bench_spec(path)), True
    bench = build_bench(spec)
    if spec.threshold is None:
        save_bench_spec(bench.to_spec(), path)
    return bench, False


def _manifest(
    command: str, cfg: ExperimentConfig, bench: Testbench, threads: int, trace: RunTrace, files
) -> RunManifest:
    return RunManifest(
        version=__version__,
        command=command,
        seeds=cfg.run.seeds.model_dump(),
        config_sha256=sha256_text(dump_config(cfg)),
        bench_sha256=sha256_text(bench.to_spec().model_dump_json()),
        bench_cache_key=cfg.bench.cache_key(),
        threads=threads,
        converged=trace.converged,
        n_simulations=trace.n_simulations,
        files=sorted(files),
    )


def _fail(e: Exception) -> None:
    print_error(str(e))
    sys.exit(1)


@click.group()
@click.version_option(version=__version__, prog_name="hdyield")
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors")
@click.pass_context
def main(ctx, verbose, quiet):
    """
    hdyield CLI - Rare-event yield estimation with shrinkage deep-kernel surrogates.

    Estimate tiny failure probabilities on synthetic testbenches, compare
    against plain Monte Carlo, and tabulate the speedup.
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    setup_logging(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment config file (YAML)")
@click.option("--out", "-o", required=True, type=click.Path(), help="Run directory")
@click.option("--seed", "-s", type=int, help="Base seed; derives every named seed")
@click.option("--force", "-f", is_flag=True, help="Overwrite an existing run directory")
@click.option("--threads", "-t", type=int, help="Worker threads for seed optimization and Gram construction")
@click.option("--slow", is_flag=True, help="Allow full-dimension benches")
@click.pass_context
def run(ctx, config_path, out, seed, force, threads, slow):
    """Run the surrogate estimator and write a reproducible run directory."""
    try:
        cfg = _load_config(config_path, seed)
        _check_dimension(cfg.bench, slow)
        out_dir = _prepare_out(out, force)
        threads = _resolve_threads(threads, cfg.run.threads)
        print_info(f"Bench: {cfg.bench.name} (D={cfg.bench.dimension}, kind={cfg.bench.kind.value})")
        logger.info(
            f"threads={threads} physical_cores={psutil.cpu_count(logical=False) or 1} "
            f"available_memory={psutil.virtual_memory().available / 2**30:.1f} GiB"
        )

        bench, from_cache = cached_bench(cfg.bench)
        if from_cache:
            print_info("Calibrated bench served from cache")
        if bench.oracle_pf is not None:
            print_info(f"Oracle Pf: {bench.oracle_pf:.4e} (se {bench.oracle_se or 0.0:.2e})")

        total = cfg.run.n_initial + cfg.run.max_simulations
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            console=console,
            transient=True,
        ) as progress:
            task = progress.add_task("Simulating...", total=total)

            def on_estimate(estimate: YieldEstimate) -> None:
                progress.update(
                    task, completed=estimate.n_simulations,
                    description=f"Pf={estimate.pf_mean:.3e} rho={estimate.rho:.3f}",
                )

            estimator = YieldEstimator(cfg.run, bench, threads, on_estimate)
            trace = estimator.run()

        files = ["config.yaml", TRACE_FILE, "batches.csv", "selection.csv", BENCH_FILE, "checkpoint.json"]
        (out_dir / "config.yaml").write_text(dump_config(cfg))
        write_trace(trace, out_dir / TRACE_FILE, force=True)
        write_frame(trace.batches_frame(), out_dir / "batches.csv", force=True)
        write_frame(
            selection_frame(estimator.alpha, estimator.feature_map.columns or ()),
            out_dir / "selection.csv", force=True,
        )
        save_bench_spec(bench.to_spec(), out_dir / BENCH_FILE)
        save_model(estimator.model, out_dir / "checkpoint.json")
        save_manifest(_manifest("run", cfg, bench, threads, trace, files), out_dir / MANIFEST_FILE)

        final = trace.final
        status = "converged" if trace.converged else "not converged (budget exhausted)"
        print_success(
            f"Pf = {final.pf_mean:.4e} (rho={final.rho:.3f}) after {final.n_simulations} simulations, {status}"
        )
        print_info(f"Run directory: {out_dir}")
    except (HdyieldError, ValidationError) as e:
        _fail(e)


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment config file (YAML)")
@click.option("--out", "-o", required=True, type=click.Path(), help="Run directory")
@click.option("--seed", "-s", type=int, help="Base seed; derives every named seed")
@click.option("--force", "-f", is_flag=True, help="Overwrite an existing run directory")
@click.option("--batch", "-b", "batch_size", type=int, default=100_000, show_default=True, help="Samples per batch")
@click.option("--max-n", type=int, default=10_000_000, show_default=True, help="Sample budget")
@click.option("--oracle-n", type=int, help="Also draw an independent oracle estimate of this size")
@click.option("--slow", is_flag=True, help="Allow full-dimension benches")
@click.pass_context
def mc(ctx, config_path, out, seed, force, batch_size, max_n, oracle_n, slow):
    """Run the plain Monte Carlo baseline (cached by bench and seed)."""
    try:
        cfg = _load_config(config_path, seed)
        _check_dimension(cfg.bench, slow)
        out_dir = _prepare_out(out, force)
        bench, _ = cached_bench(cfg.bench)
        mc_seed = cfg.run.seeds.mc

        cache_dir = default_cache_dir()
        key = sha256_text(f"{cfg.bench.cache_key()}|{cfg.run.rho0}|{batch_size}|{max_n}|{mc_seed}")[:16]
        cached = cache_dir / f"mc-{key}.csv"
        cached_flag = cache_dir / f"mc-{key}.converged"
        if cached.exists() and cached_flag.exists():
            print_info("Monte Carlo trace served from cache")
            trace = read_trace(cached, method="mc", converged=cached_flag.read_text().strip() == "1")
        else:
            print_info(f"Monte Carlo on {bench.name}: batch {batch_size:,}, budget {max_n:,}")
            with console.status("Sampling..."):
                trace = mc_baseline_run(bench, cfg.run.rho0, batch_size, max_n, mc_seed)
            write_trace(trace, cached, force=True)
            cached_flag.write_text("1" if trace.converged else "0")
        shutil.copyfile(cached, out_dir / TRACE_FILE)

        save_bench_spec(bench.to_spec(), out_dir / BENCH_FILE)
        (out_dir / "config.yaml").write_text(dump_config(cfg))
        files = [TRACE_FILE, BENCH_FILE, "config.yaml"]
        if oracle_n:
            pf, se = mc_oracle(bench, oracle_n, mc_seed + 1)
            pd.DataFrame([{"n": oracle_n, "pf": pf, "se": se}]).to_csv(
                out_dir / "oracle.csv", index=False, float_format="%.6e"
            )
            files.append("oracle.csv")
            print_info(f"Independent oracle: Pf = {pf:.4e} +/- {se:.2e}")
        save_manifest(_manifest("mc", cfg, bench, 1, trace, files), out_dir / MANIFEST_FILE)

        final = trace.final
        if trace.converged:
            print_success(f"Pf = {final.pf_mean:.4e} (rho={final.rho:.3f}) after {final.n_simulations:,} samples")
        else:
            needed = mc_required_samples(final.pf_mean, cfg.run.rho0)
            print_warning(f"Not converged after {final.n_simulations:,} samples (about {needed:.3g} needed)")
    except (HdyieldError, ValidationError) as e:
        _fail(e)


@main.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment config file (YAML)")
@click.option("--out", "-o", required=True, type=click.Path(), help="Output directory")
@click.option("--seed", "-s", type=int, help="Base seed; derives every named seed")
@click.option("--force", "-f", is_flag=True, help="Overwrite existing output")
@click.option("--samples", "-n", type=int, default=1000, show_default=True, help="LHS samples to select from")
@click.option("--top", type=int, default=10, show_default=True, help="Rows in the printed summary")
@click.option("--slow", is_flag=True, help="Allow full-dimension benches")
@click.pass_context
def select(ctx, config_path, out, seed, force, samples, top, slow):
    """Run the configured feature selector on an LHS sample and write its weights."""
    try:
        cfg = _load_config(config_path, seed)
        _check_dimension(cfg.bench, slow)
        out_dir = _prepare_out(out, force, guarded="selection.csv")
        bench, _ = cached_bench(cfg.bench)
        X = to_standard_normal(lhs_points(samples, bench.dimension, cfg.run.seeds.design)).points
        Y = bench.eval(X)
        print_info(f"Selector {cfg.run.selector.value} on {samples} samples, m={cfg.run.m_features}")
        fmap, alpha = select_features(
            cfg.run.selector, X, Y, cfg.run.m_features, seed=cfg.run.seeds.selection,
            max_rows=cfg.run.hsic_max_rows, threads=_resolve_threads(None, cfg.run.threads),
        )
        frame = selection_frame(alpha, fmap.columns or ())
        write_frame(frame, out_dir / "selection.csv", force=True)

        active = set(bench.active_dims)
        ranked = frame.sort_values("alpha", ascending=False, kind="stable").head(top)
        rows = [
            {"dim": int(r.dim_index), "alpha": f"{r.alpha:.4e}", "selected": bool(r.selected_flag),
             "active": int(r.dim_index) in active}
            for r in ranked.itertuples()
        ]
        console.print(tabulate(rows, headers="keys", tablefmt="grid"))
        if fmap.columns is not None:
            hits = len(active & set(fmap.columns))
            print_success(f"{hits} of {len(active)} active dimensions selected")
    except (HdyieldError, ValidationError) as e:
        _fail(e)


def _load_run(run_dir: Path) -> Tuple[RunTrace, Optional[float], str]:
    manifest = load_manifest(run_dir / MANIFEST_FILE)
    trace = read_trace(run_dir / TRACE_FILE, method=manifest.command, converged=manifest.converged)
    oracle = load_bench_spec(run_dir / BENCH_FILE).oracle_pf
    return trace, oracle, manifest.command


def report_frame(runs, mc_trace: RunTrace, oracle_pf: Optional[float]) -> pd.DataFrame:
    """Final Pf, relative error, simulation count and speedup for each run."""
    n_mc = mc_trace.n_simulations
    rows = []
    for label, trace in list(runs) + [("mc", mc_trace)]:
        final = trace.final
        rel = abs(final.pf_mean - oracle_pf) / oracle_pf if oracle_pf else np.nan
        rows.append({
            "method": label,
            "converged": trace.converged,
            "pf": final.pf_mean,
            "rho": final.rho,
            "rel_error": rel,
            "n_simulations": final.n_simulations,
            "speedup": n_mc / final.n_simulations,
        })
    return pd.DataFrame(rows)


@main.command()
@click.option("--run", "-r", "run_dirs", multiple=True, required=True, type=click.Path(exists=True), help="Surrogate run directory (repeatable)")
@click.option("--mc", "-m", "mc_dir", required=True, type=click.Path(exists=True), help="Monte Carlo run directory")
@click.option("--out", "-o", type=click.Path(), help="Write report.csv here")
@click.option("--force", "-f", is_flag=True, help="Overwrite an existing report")
@click.pass_context
def report(ctx, run_dirs, mc_dir, out, force):
    """Join surrogate and Monte Carlo runs into a comparison table."""
    try:
        mc_trace, oracle_pf, _ = _load_run(Path(mc_dir))
        runs = []
        for run_dir in run_dirs:
            trace, run_oracle, _ = _load_run(Path(run_dir))
            oracle_pf = oracle_pf if oracle_pf is not None else run_oracle
            runs.append((Path(run_dir).name, trace))
        frame = report_frame(runs, mc_trace, oracle_pf)
        if oracle_pf is not None:
            print_info(f"Oracle Pf: {oracle_pf:.4e}")
        table = frame.assign(
            pf=frame.pf.map(lambda v: f"{v:.4e}"),
            rho=frame.rho.map(lambda v: f"{v:.3f}"),
            rel_error=frame.rel_error.map(lambda v: f"{v:.1%}"),
            speedup=frame.speedup.map(lambda v: f"{v:.2f}x"),
        )
        console.print(tabulate(table.to_dict(orient="records"), headers="keys", tablefmt="grid"))
        if out:
            path = write_frame(frame, Path(out) / "report.csv", force=force)
            print_success(f"Report written to {path}")
    except (HdyieldError, ValidationError) as e:
        _fail(e)


if __name__ == "__main__":
    main()
