"""SAS Kit CLI - Main entry point."""

import json
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import typer

from . import __version__
from .align import KINDS, align_pipeline, load_source_bank, save_source_dump, target_graph
from .benches import (
    ALIGN_SWEEP,
    ALL_BENCHES,
    FIXED_KERNEL_SCALES,
    AblationBench,
    BaseBench,
    BenchReport,
    BenchRow,
    BenchStatus,
    parse_variant,
    strategy_orders,
)
from .config import ModelConfig, SasConfig, config_snapshot, load_config, write_snapshot
from .console import (
    configure_logging,
    console,
    create_progress,
    print_check_result,
    print_error,
    print_header,
    print_success,
    print_summary,
    print_table,
)
from .errors import SasKitError
from .graph import graph_basis, graph_debug_dict
from .metrics import NPR_VARIANTS, NprSpec, chamfer_distance, npr as npr_value
from .pointcloud import TokenSet, load_cloud, normalize_unit_sphere, tokenize_with
from .reports import write_json, write_order_csv, write_report
from .serialization import STRATEGIES
from .ssm import init_stack
from .training import (
    FUSION_MODES,
    GRADCHECK_TOL,
    build_toy_samples,
    gradcheck_hdm,
    gradcheck_suite,
    init_model,
    save_model,
    train_toy,
)

app = typer.Typer(
    name="sas-kit",
    help="Structure-aware point-cloud serialization, spectral alignment and drift benchmarks.",
    add_completion=False,
    invoke_without_command=True,
)

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="YAML, JSON or TOML config (config.json snapshots work too)")
OUT_OPTION = typer.Option(Path("sas-output"), "--out", "-o", help="Directory for reports")
SEED_OPTION = typer.Option(None, "--seed", help="Override the config seed")
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="Show debug logging")
FORMAT_OPTION = typer.Option(None, "--format", help="xyz_ascii or ply_ascii; guessed from the suffix by default")

KERNEL_SWEEP = ["interleave_hdm", *(f"fixed_kernel({s})" for s in FIXED_KERNEL_SCALES)]


@app.callback(invoke_without_command=True)
def callback(
    ctx: typer.Context,
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        help="Show version and exit",
    ),
) -> None:
    """
    SAS Kit - serialize point clouds by intrinsic structure and measure how well orders survive drift.
    """
    if version:
        console.print(f"sas-kit v{__version__}")
        raise typer.Exit()

    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())


@contextmanager
def _handle_errors() -> Iterator[None]:
    try:
        yield
    except SasKitError as e:
        print_error(str(e))
        raise typer.Exit(1)


def _load(config: Optional[Path], seed: Optional[int], verbose: bool) -> SasConfig:
    configure_logging(verbose)
    cfg = load_config(config)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _tokens(path: Path, fmt: Optional[str], cfg: SasConfig, source_tag: Optional[str] = None) -> TokenSet:
    cloud = normalize_unit_sphere(load_cloud(path, fmt, source_tag))
    return tokenize_with(cloud, cfg.tokenizer)


def _fmt(value: float) -> str:
    return f"{value:.4f}"


def _print_means(report: BenchReport) -> None:
    means = report.means()
    metrics = sorted({m for per in means.values() for m in per})
    rows = [[strategy, *(_fmt(per[m]) if m in per else "-" for m in metrics)] for strategy, per in means.items()]
    print_table(f"{report.name} means", ["strategy", *metrics], rows)


def _finish(report: BenchReport, out: Path) -> None:
    paths = write_report(report, out)
    print_success(f"report written to {paths['report']}")


def run_bench(bench: BaseBench, cfg: SasConfig, out: Path, verbose: bool = False) -> BenchStatus:
    """Run one bench with a progress bar, print its outcome and write its reports."""
    with create_progress() as progress:
        task = progress.add_task(f"Running {bench.name}...", total=bench.cell_count(cfg))
        result = bench.run(cfg, on_cell=lambda: progress.advance(task))

    print_check_result(
        passed=result.passed,
        message=f"{bench.name}: {result.message}",
        warning=result.is_warning,
        details=result.details if (verbose or not result.passed) else None,
    )
    if result.report is not None:
        _print_means(result.report)
        paths = write_report(result.report, out, result)
        console.print(f"    [dim]report: {paths['report']}[/dim]")
    return result.status


def _bench_command(bench: BaseBench, cfg: SasConfig, out: Path, verbose: bool) -> None:
    print_header(f"sas-kit {bench.name}", bench.description)
    status = run_bench(bench, cfg, out, verbose)
    print_summary(
        int(status == BenchStatus.PASS),
        int(status == BenchStatus.WARN),
        int(status == BenchStatus.FAIL),
    )
    if status == BenchStatus.FAIL:
        raise typer.Exit(1)


@app.command()
def serialize(
    path: Path = typer.Argument(..., help="Point cloud file (.xyz or ASCII .ply)"),
    strategy: str = typer.Option("sas", "--strategy", "-s", help=f"sas or one of: {', '.join(STRATEGIES)}"),
    fmt: Optional[str] = FORMAT_OPTION,
    csv: bool = typer.Option(False, "--csv", help="Write a rank, token_index, x, y, z CSV per order"),
    dump_graph: bool = typer.Option(False, "--dump-graph", help="Write CDS/GCS affinity, Laplacian and eigen data"),
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    Serialize one point cloud and print the order as JSON.

    The ``sas`` strategy emits the CDS and GCS orders of the SAS sequence.
    """
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        tokens = _tokens(path, fmt, cfg)
        start = time.perf_counter()
        orders = strategy_orders(tokens, strategy, cfg)
        elapsed = (time.perf_counter() - start) * 1000.0

        if strategy == "sas":
            payload = {"strategy": "sas", "orders": [o.to_dict() for o in orders], "elapsed_ms": elapsed}
        else:
            payload = {**orders[0].to_dict(), "elapsed_ms": elapsed}
        write_json(out / "order.json", payload)
        write_snapshot(cfg, out / "config.json")
        if csv:
            for order in orders:
                write_order_csv(order, tokens, out / f"order_{order.strategy}.csv")
        if dump_graph:
            for kind in KINDS:
                graph = target_graph(tokens, kind, cfg.graph)
                lap, basis = graph_basis(graph, cfg.graph.sga_laplacian, cfg.graph.eig_solver)
                write_json(out / f"graph_{kind}.json", graph_debug_dict(graph, lap, basis))

    typer.echo(json.dumps(payload))


@app.command()
def npr(
    path: Path = typer.Argument(..., help="Point cloud file"),
    strategy: Optional[list[str]] = typer.Option(None, "--strategy", "-s", help="Strategy to score (repeatable)"),
    variant: str = typer.Option("topo", "--variant", help=f"One of: {', '.join(NPR_VARIANTS)}"),
    fmt: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    Neighbourhood preservation rate of one or more serializations of a cloud.

    Uses npr.k and npr.h from the config (npr.r for the BFS reference).
    """
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        strategies = strategy or list(cfg.bench.drift_strategies)
        radius = cfg.npr.r if variant == "bfs_reference" else cfg.npr.k
        spec = NprSpec(variant, radius, cfg.npr.h)
        tokens = _tokens(path, fmt, cfg)
        report = BenchReport("npr", config=config_snapshot(cfg))
        for name in strategies:
            value = npr_value(spec, strategy_orders(tokens, name, cfg), tokens, cfg.graph.knn_k)
            report.rows.append(BenchRow(path.stem, name, "none", f"{variant}_npr", value))
        report.rows = report.sorted_rows()
        print_table(f"{variant} NPR", ["strategy", "value"], [[r.strategy, _fmt(r.value)] for r in report.rows])
        _finish(report, out)


@app.command()
def cd(
    first: Path = typer.Argument(..., help="First point cloud file"),
    second: Path = typer.Argument(..., help="Second point cloud file"),
    fmt: Optional[str] = FORMAT_OPTION,
    out: Path = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Chamfer distance between two point cloud files (as stored, no normalization)."""
    with _handle_errors():
        cfg = _load(None, None, verbose)
        value = chamfer_distance(load_cloud(first, fmt).points, load_cloud(second, fmt).points)
        report = BenchReport("cd", config=config_snapshot(cfg))
        report.rows.append(BenchRow(f"{first.stem}:{second.stem}", "chamfer", "none", "chamfer_distance", value))
        _finish(report, out)
    typer.echo(f"{value:.10g}")


@app.command("drift-bench")
def drift_bench(
    rotations: Optional[int] = typer.Option(None, "--rotations", "-r", help="Random rotations per shape"),
    strategy: Optional[list[str]] = typer.Option(None, "--strategy", "-s", help="Strategy to compare (repeatable)"),
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Topo-NPR and Geo-NPR of each strategy under random rigid rotations."""
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        bench_cfg = cfg.bench
        if rotations is not None:
            bench_cfg = replace(bench_cfg, rotations_per_shape=rotations)
        if strategy:
            bench_cfg = replace(bench_cfg, drift_strategies=list(strategy))
        cfg = replace(cfg, bench=bench_cfg)
        _bench_command(_bench("drift-bench"), cfg, out, verbose)


@app.command("invariance-bench")
def invariance_bench(
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Check that CDS and GCS orders are unchanged by random rigid transforms."""
    with _handle_errors():
        _bench_command(_bench("invariance-bench"), _load(config, seed, verbose), out, verbose)


@app.command("bfs-vs-spectral")
def bfs_vs_spectral(
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """NPR of the spectral CDS against the BFS oracle, with runtimes."""
    with _handle_errors():
        _bench_command(_bench("bfs-vs-spectral"), _load(config, seed, verbose), out, verbose)


@app.command()
def complexity(
    size: Optional[list[int]] = typer.Option(None, "--size", "-g", help="Token count G to time (repeatable)"),
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Growth of serialization + alignment wall time with the token count."""
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        if size:
            cfg = replace(cfg, bench=replace(cfg.bench, complexity_sizes=sorted(size)))
        _bench_command(_bench("complexity"), cfg, out, verbose)


@app.command()
def ablate(
    variant: Optional[list[str]] = typer.Option(None, "--variant", help="Ablation variant (repeatable)"),
    sweep: Optional[str] = typer.Option(None, "--set", help="Predefined set: kernel-sweep or align-sweep"),
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    Serialization, fusion and alignment ablations on the toy reconstruction task.

    Variants: interleave_hdm, no_cds, no_gcs, zorder, hilbert, fps_order,
    random, concat_hdm, sga_on, sga_off, simple_shift, fixed_alpha(a),
    fixed_kernel(s).
    """
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        sets = {"kernel-sweep": KERNEL_SWEEP, "align-sweep": list(ALIGN_SWEEP)}
        if sweep is not None and sweep not in sets:
            raise SasKitError(f"unknown --set {sweep!r}; choose kernel-sweep or align-sweep")
        variants = list(variant or []) + (sets[sweep] if sweep else [])
        for name in variants:
            parse_variant(name, cfg)
        _bench_command(AblationBench(variants or None), cfg, out, verbose)


@app.command()
def train(
    epochs: Optional[int] = typer.Option(None, "--epochs", help="Override train.epochs"),
    lr: Optional[float] = typer.Option(None, "--lr", help="Override train.lr"),
    fusion: str = typer.Option("interleave", "--fusion", help=f"One of: {', '.join(FUSION_MODES)}"),
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    Train the toy masked-reconstruction model on the synthetic corpus.

    Writes model.json (versioned parameter document) and the loss trace.
    """
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        if fusion not in FUSION_MODES:
            raise SasKitError(f"unknown fusion mode {fusion!r}")
        train_cfg = replace(cfg.train, **{k: v for k, v in (("epochs", epochs), ("lr", lr)) if v is not None})
        cfg = replace(cfg, train=train_cfg)
        toy = cfg.toy
        with console.status("Building toy corpus..."):
            samples = build_toy_samples(cfg)
        model = init_model(replace(cfg.model, embed_dim=toy.embed_dim, init_seed=cfg.seed), toy.group_size, toy.embed_dim)
        with console.status(f"Training for {train_cfg.epochs} epochs..."):
            result = train_toy(model, samples, train_cfg.epochs, train_cfg.lr, train_cfg.mask_ratio, cfg.seed,
                               train_cfg.cosine_decay, fusion)
        report = BenchReport("train", config=config_snapshot(cfg))
        for epoch, loss in enumerate(result.trace):
            report.rows.append(BenchRow(f"epoch={epoch:04d}", fusion, "none", "train_loss", loss))
        report.summary = {"checksum": result.model.checksum(), "samples": len(samples)}
        save_model(result.model, out / "model.json")
        if result.trace:
            print_check_result(
                passed=True,
                message=f"loss {result.trace[0]:.5f} -> {result.trace[-1]:.5f}",
                warning=result.trace[-1] >= result.trace[0],
            )
        _finish(report, out)


@app.command("export-source")
def export_source(
    path: Path = typer.Argument(..., help="Source point cloud file"),
    domain: Optional[str] = typer.Option(None, "--domain", help="Domain tag (defaults to the file stem)"),
    fmt: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Write a source feature dump for ``align --sources``."""
    with _handle_errors():
        cfg = _load(config, None, verbose)
        tokens = _tokens(path, fmt, cfg, domain)
        dest = save_source_dump(tokens, out / f"{path.stem}.json", cfg.graph)
        print_success(f"source dump written to {dest}")


@app.command()
def align(
    target: Path = typer.Argument(..., help="Target point cloud file"),
    sources: Path = typer.Option(..., "--sources", help="Directory of source dumps from export-source"),
    mode: Optional[str] = typer.Option(None, "--mode", help="adaptive_cosine, fixed_alpha, simple_shift or off"),
    fmt: Optional[str] = FORMAT_OPTION,
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Align a target cloud's token features to source prototypes."""
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        if mode is not None:
            cfg = replace(cfg, alignment=replace(cfg.alignment, mode=mode))
        tokens = _tokens(target, fmt, cfg)
        cds, gcs = strategy_orders(tokens, "sas", cfg)
        bank = load_source_bank(sources)
        result = align_pipeline(tokens, {"cds": cds, "gcs": gcs}, bank, cfg.alignment, cfg.graph)

        write_json(out / "aligned_features.json", {"features": result.features, "metrics": result.metrics})
        report = BenchReport("align", config=config_snapshot(cfg))
        for metric, value in sorted(result.metrics.items()):
            report.rows.append(BenchRow(target.stem, cfg.alignment.mode, "none", metric, value))
        print_table(f"alignment ({cfg.alignment.mode}, {len(bank)} sources)", ["metric", "value"],
                    [[r.metric_name, _fmt(r.value)] for r in report.rows])
        _finish(report, out)


@app.command()
def gradcheck(
    instances: int = typer.Option(50, "--instances", "-n", help="Random block instances"),
    max_len: int = typer.Option(16, "--max-len", help="Longest random sequence"),
    max_dim: int = typer.Option(8, "--max-dim", help="Largest random state size"),
    hdm: bool = typer.Option(True, "--hdm/--no-hdm", help="Also check a small HDM stack"),
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Compare hand-written gradients with central finite differences."""
    with _handle_errors():
        cfg = _load(None, seed, verbose)
        print_header("sas-kit gradcheck", f"{instances} random blocks, tolerance {GRADCHECK_TOL:g}")
        with console.status("Checking block gradients..."):
            errors = {f"block.{k}": v for k, v in gradcheck_suite(instances, cfg.seed, max_len, max_dim).items()}
        if hdm:
            rng = np.random.default_rng([cfg.seed, 7])
            stack = init_stack(ModelConfig(embed_dim=4, enc_layers=1, dec_layers=1, init_seed=cfg.seed))
            prompt, query = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
            with console.status("Checking HDM gradients..."):
                errors.update({f"hdm.{k}": v for k, v in gradcheck_hdm(stack, prompt, query, cfg.seed).items()})

        report = BenchReport("gradcheck", config=config_snapshot(cfg))
        for group, err in errors.items():
            report.rows.append(BenchRow("suite", group.split(".")[0], "none", f"max_rel_err:{group}", err))
        report.rows = report.sorted_rows()
        print_table("max relative error", ["group", "error"], [[g, f"{e:.2e}"] for g, e in sorted(errors.items())])
        failed = sorted(g for g, e in errors.items() if e > GRADCHECK_TOL)
        print_check_result(
            passed=not failed,
            message="all gradients match finite differences" if not failed else f"{len(failed)} group(s) above tolerance",
            details=", ".join(failed) or None,
        )
        _finish(report, out)
    if failed:
        raise typer.Exit(1)


@app.command("bench-all")
def bench_all(
    config: Optional[Path] = CONFIG_OPTION,
    out: Path = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """Run every registered bench; each writes into its own subdirectory of --out."""
    with _handle_errors():
        cfg = _load(config, seed, verbose)
        print_header("sas-kit bench-all", f"{len(ALL_BENCHES)} benches")
        statuses = [run_bench(bench_class(), cfg, out / bench_class.name, verbose) for bench_class in ALL_BENCHES]
    passed = sum(1 for s in statuses if s == BenchStatus.PASS)
    warnings = sum(1 for s in statuses if s == BenchStatus.WARN)
    failed = sum(1 for s in statuses if s == BenchStatus.FAIL)
    print_summary(passed, warnings, failed)
    if failed > 0:
        raise typer.Exit(1)


@app.command("list-benches")
def list_benches() -> None:
    """List all available benches."""
    console.print("\n[bold]Available benches:[/bold]\n")

    for bench_class in ALL_BENCHES:
        console.print(f"  [cyan]{bench_class.name}[/cyan]")
        console.print(f"    {bench_class.description}")
        console.print()


def _bench(name: str) -> BaseBench:
    bench_class = next(b for b in ALL_BENCHES if b.name == name)
    return bench_class()


def main() -> None:
    """Main entry point."""
    app()


if __name__ == "__main__":
    main()
