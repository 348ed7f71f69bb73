import os
from contextlib import contextmanager
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
import typer
from pydantic import BaseModel, Field, model_validator
from rich.console import Console
from rich.table import Table

from lrspatial.bootstrap import bootstrap, summary_frame, with_intervals
from lrspatial.constants import DEFAULT_RANK_CAP, OUT_ENV, THREADS_ENV
from lrspatial.effects import EffectsEstimate, effects_fullrank, estimate_effects
from lrspatial.eigenbasis import count_above_threshold, top_l_eigenpairs
from lrspatial.errors import InvalidDesign, LowRankError, ScenarioError
from lrspatial.logging_utils import configure_logging, forward_eliot_to_logger, log_level_for
from lrspatial.model import DesignData, ModelKind
from lrspatial.moments import precompute
from lrspatial.oracle import fit_fullrank, moran_z
from lrspatial.reml import (
    FitOptions,
    check_fixed_coefficients,
    dependence_bounds,
    fit_moments,
    fit_ols,
    residuals,
)
from lrspatial.scenarios import Scenario, bundled_scenario_path, load_scenarios
from lrspatial.simharness import generate_dgp, run_benchmark, run_monte_carlo, validate_scenario
from lrspatial.utils.cache_utils import ArrayCache
from lrspatial.utils.exception_utils import StageError
from lrspatial.utils.io_utils import read_numeric_csv, write_csv_atomic, write_json_atomic
from lrspatial.weights import (
    build_delaunay_adjacency,
    load_coords,
    load_edge_list,
    save_edge_list,
    scale_by_max_eigenvalue,
)

cli = typer.Typer(help="Low-rank spatial econometric models.")
console = Console(stderr=True)


class RunConfig(BaseModel):
    """Resolved inputs of one ``fit`` invocation."""

    data: Path
    response: str
    model: ModelKind = ModelKind.LSLM
    weights: Optional[Path] = None
    coords: Optional[Path] = None
    rank: Optional[int] = Field(None, ge=1)
    threshold: Optional[float] = None
    bootstrap: int = Field(0, ge=0)
    seed: int = 0
    out: Path = Path("lrspatial-out")
    abs_eigen: bool = False
    one_based: bool = False
    alt_intercept: bool = False
    standardize: bool = False
    cache_dir: Optional[Path] = None

    @model_validator(mode="after")
    def check_sources(self) -> "RunConfig":
        if (self.weights is None) == (self.coords is None):
            raise ValueError("give exactly one of --weights or --coords.")
        if self.rank is not None and self.threshold is not None:
            raise ValueError("give at most one of --rank or --threshold.")
        return self

    def resolve_rank(self, w, n: int) -> int:
        if self.rank is not None:
            return self.rank
        if self.threshold is not None:
            return count_above_threshold(w, self.threshold, absolute=self.abs_eigen)
        return min(DEFAULT_RANK_CAP, n // 2)


@contextmanager
def stage(name: str):
    """Tag any library or IO failure with the pipeline stage."""
    try:
        yield
    except (LowRankError, OSError, ValueError) as e:
        raise StageError(name, e) from e


def _setup(verbose: int, threads: Optional[int]) -> None:
    configure_logging(log_level=log_level_for(verbose), console=verbose > 0)
    forward_eliot_to_logger()
    if threads is not None:
        os.environ[THREADS_ENV] = str(threads)


def _fail(error: StageError) -> None:
    console.print(f"[red]error[/red] {error}")
    raise typer.Exit(code=1)


def _read_design(config: RunConfig) -> DesignData:
    frame = read_numeric_csv(config.data)
    if config.response not in frame.columns:
        raise InvalidDesign(
            f"{config.data}: no response column '{config.response}' "
            f"(columns: {', '.join(map(str, frame.columns))})."
        )
    covariates = frame.drop(columns=[config.response])
    data = DesignData.from_arrays(
        frame[config.response].to_numpy(),
        covariates.to_numpy(),
        names=[str(c) for c in covariates.columns],
    )
    return data.standardized() if config.standardize else data


def _read_weights(config: RunConfig, n: int):
    if config.coords is not None:
        coords = load_coords(config.coords)
        if coords.shape[0] != n:
            raise InvalidDesign(f"{config.coords} has {coords.shape[0]} points but data has {n} rows.")
        w0 = build_delaunay_adjacency(coords)
    else:
        if not config.weights.is_file():
            raise FileNotFoundError(f"weights file not found: {config.weights}")
        w0 = load_edge_list(config.weights, n=n, one_based=config.one_based)
    return w0, scale_by_max_eigenvalue(w0)


def _effects_table(effects: EffectsEstimate) -> Table:
    table = Table(title="Average effects")
    for column in ("covariate", "DE", "IE"):
        table.add_column(column)
    for name, de, ie in zip(effects.names, effects.de, effects.ie):
        table.add_row(name, f"{de:.6g}", f"{ie:.6g}")
    return table


def run_fit(config: RunConfig, verbose: int = 0) -> dict:
    """Fit one model and write its report, effects and bootstrap summary."""
    cache = ArrayCache(config.cache_dir) if config.cache_dir else ArrayCache.from_env()
    with stage("data"):
        data = _read_design(config)
    with stage("weights"):
        w0, w = _read_weights(config, data.n)
    kind = config.model
    report: dict
    bootstrap_frame = None

    if kind == ModelKind.LM:
        with stage("estimation"):
            fitted = fit_ols(data)
            report = fitted.report()
            effects = estimate_effects(fitted)
            report["moran_z"] = moran_z(residuals(fitted, data), w0)
    elif not kind.is_lowrank:
        with stage("estimation"):
            full = fit_fullrank(kind, data, w)
            report = full.report()
            pairs = [effects_fullrank(full, w, k) for k in range(1, data.K)]
            effects = EffectsEstimate(
                names=list(data.names[1:]),
                de=np.array([de for de, _ in pairs]),
                ie=np.array([ie for _, ie in pairs]),
            )
            report["moran_z"] = moran_z(full.innovations, w0)
    else:
        with stage("data"):
            check_fixed_coefficients(kind, data)
        with stage("eigen"):
            L = config.resolve_rank(w, data.n)
            basis = top_l_eigenpairs(
                w, L, which="LM" if config.abs_eigen else "LA", cache=cache
            )
        with stage("moments"):
            moments = precompute(data, basis, w, kind, config.alt_intercept, cache)
        with stage("estimation"):
            lower, _ = dependence_bounds(w)
            fitted = fit_moments(moments, lower, FitOptions(alt_intercept=config.alt_intercept))
            report = fitted.report()
            effects = estimate_effects(fitted, moments)
            report["moran_z"] = moran_z(residuals(fitted, data, basis, w), w0)
        if verbose and fitted.history is not None:
            console.print(fitted.history.tree)
        if config.bootstrap > 0:
            with stage("bootstrap"):
                result = bootstrap(
                    fitted, data, basis, w, config.bootstrap, config.seed, moments=moments
                )
                effects = with_intervals(effects, result)
                bootstrap_frame = summary_frame(result, fitted, effects)

    report["effects"] = effects.to_frame().to_dict(orient="records")
    report["seed"] = config.seed
    with stage("output"):
        write_json_atomic(config.out / "fit_report.json", report)
        write_csv_atomic(config.out / "effects.csv", effects.to_frame())
        if bootstrap_frame is not None:
            write_csv_atomic(config.out / "bootstrap_summary.csv", bootstrap_frame)
    console.print(_effects_table(effects))
    return report


@cli.command()
def fit(
    data: Path = typer.Option(..., help="CSV with the response and covariate columns."),
    response: str = typer.Option(..., help="Name of the response column."),
    model: ModelKind = typer.Option(ModelKind.LSLM, help="Model kind."),
    weights: Optional[Path] = typer.Option(None, help="Edge list 'i j weight'."),
    coords: Optional[Path] = typer.Option(None, help="CSV with x,y columns; Delaunay weights."),
    rank: Optional[int] = typer.Option(None, help="Number of eigenpairs L."),
    threshold: Optional[float] = typer.Option(None, help="Keep eigenvalues above this."),
    bootstrap_m: int = typer.Option(0, "--bootstrap", help="Bootstrap replicates."),
    seed: int = typer.Option(0, help="Bootstrap seed."),
    out: Path = typer.Option(Path("lrspatial-out"), envvar=OUT_ENV, help="Output directory."),
    threads: Optional[int] = typer.Option(None, envvar=THREADS_ENV, help="Worker cap."),
    abs_eigen: bool = typer.Option(False, help="Rank eigenpairs by |lambda|."),
    one_based: bool = typer.Option(False, help="Edge-list indices start at 1."),
    alt_intercept: bool = typer.Option(False, help="Transform the intercept too."),
    standardize: bool = typer.Option(False, help="Standardize covariates."),
    cache_dir: Optional[Path] = typer.Option(None, help="Eigenpair and moment cache."),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True),
):
    """Fit a model and write fit_report.json, effects.csv and, with
    --bootstrap, bootstrap_summary.csv."""
    _setup(verbose, threads)
    try:
        with stage("config"):
            config = RunConfig(
                data=data, response=response, model=model, weights=weights, coords=coords,
                rank=rank, threshold=threshold, bootstrap=bootstrap_m, seed=seed, out=out,
                abs_eigen=abs_eigen, one_based=one_based, alt_intercept=alt_intercept,
                standardize=standardize, cache_dir=cache_dir,
            )
        run_fit(config, verbose)
    except StageError as e:
        _fail(e)


def _resolve_scenarios(source: str) -> List[Scenario]:
    path = Path(source)
    if not path.exists():
        path = bundled_scenario_path(source)
    parsed = load_scenarios(path)
    for scenario in parsed:
        validate_scenario(scenario)
    return parsed


@cli.command()
def simulate(
    scenarios: str = typer.Argument(..., help="Scenario TOML path or bundled name."),
    out: Path = typer.Option(Path("lrspatial-out"), envvar=OUT_ENV),
    threads: Optional[int] = typer.Option(None, envvar=THREADS_ENV),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True),
):
    """Run Monte Carlo scenarios; writes simulation_report.csv and timings.csv."""
    _setup(verbose, threads)
    try:
        with stage("scenarios"):
            parsed = _resolve_scenarios(scenarios)
        reports = []
        for scenario in parsed:
            with stage(f"simulate {scenario.id}"):
                reports.append(run_monte_carlo(scenario, workers=threads))
        with stage("output"):
            write_csv_atomic(
                out / "simulation_report.csv",
                pd.concat([r.to_frame() for r in reports], ignore_index=True),
            )
            write_csv_atomic(
                out / "timings.csv",
                pd.concat([r.timing_frame() for r in reports], ignore_index=True),
            )
    except StageError as e:
        _fail(e)

    failed = [r.scenario.id for r in reports if r.fully_failed]
    if failed:
        _fail(StageError("simulate", ScenarioError(f"every estimator failed in: {', '.join(failed)}")))
    console.print(f"Wrote {len(reports)} scenario report(s) to {out}.")


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.replace(",", " ").split()]


@cli.command()
def bench(
    sizes: str = typer.Option("5000,10000,20000,40000", help="Comma-separated n values."),
    ranks: str = typer.Option("50,100,200", help="Comma-separated L values."),
    kinds: str = typer.Option("LSLM,LSEM", help="Comma-separated low-rank kinds."),
    bootstrap_m: int = typer.Option(200, "--bootstrap"),
    seed: int = typer.Option(0),
    out: Path = typer.Option(Path("lrspatial-out"), envvar=OUT_ENV),
    threads: Optional[int] = typer.Option(None, envvar=THREADS_ENV),
    verbose: int = typer.Option(0, "--verbose", "-v", count=True),
):
    """Time eigen, precompute, estimation and bootstrap phases; writes
    benchmark.csv."""
    _setup(verbose, threads)
    try:
        with stage("config"):
            kind_list = [ModelKind(k.strip().upper()) for k in kinds.split(",") if k.strip()]
            frame = run_benchmark(
                _int_list(sizes),
                _int_list(ranks),
                [k.value for k in kind_list],
                bootstrap_m=bootstrap_m,
                seed=seed,
            )
        with stage("output"):
            write_csv_atomic(out / "benchmark.csv", frame)
    except StageError as e:
        _fail(e)
    console.print(f"Wrote {len(frame)} timing rows to {out / 'benchmark.csv'}.")


@cli.command()
def generate(
    n: int = typer.Option(200, help="Number of units."),
    dgp: str = typer.Option("SEM-noise", help="SLM-noise or SEM-noise."),
    dependence: float = typer.Option(0.6),
    tau2: float = typer.Option(0.0),
    seed: int = typer.Option(0),
    out: Path = typer.Option(Path("lrspatial-out"), envvar=OUT_ENV),
    one_based: bool = typer.Option(False, help="Write 1-based edge indices."),
):
    """Write one simulated dataset: data.csv, coords.csv and weights.txt."""
    try:
        with stage("generate"):
            scenario = Scenario(
                id="generate", dgp=dgp, n=n, dependence=dependence, tau2=tau2,
                replications=1, estimators=["LM"], seed=seed,
            )
            draw = generate_dgp(scenario, 0)
        with stage("output"):
            frame = pd.DataFrame(
                {
                    "id": np.arange(n),
                    "y": draw.data.y,
                    "x1": draw.data.X[:, 1],
                    "x2": draw.data.X[:, 2],
                }
            )
            write_csv_atomic(out / "data.csv", frame)
            write_csv_atomic(out / "coords.csv", pd.DataFrame(draw.coords, columns=["x", "y"]))
            save_edge_list(draw.w0, out / "weights.txt", one_based=one_based)
    except StageError as e:
        _fail(e)
    typer.echo(f"seed={seed} n={n} dgp={dgp} dependence={dependence} tau2={tau2}")


if __name__ == "__main__":
    cli()
