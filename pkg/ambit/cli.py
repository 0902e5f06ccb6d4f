"""
Command-line interface for AMBIT.

Commands:
- ingest: Aggregate trip records into hourly OD flows
- synth: Generate a synthetic city
- fit: Fit models and save their parameters
- eval: Score models on a split
- preset: Run a named experiment
- presets: List the named experiments
- explain: Attribution tables for a boosted model
"""

import json
from pathlib import Path
from typing import Any, Optional

import typer

from . import __version__
from .config import logger
from .errors import AmbitError
from .experiments import (
    PRESETS,
    PresetResult,
    evaluate_models,
    fit_models,
    load_config,
    run_explain,
    run_preset,
)
from .ingest import ingest_trips, load_trips, load_zones, write_flows, write_zones
from .schemas import ExperimentConfig, IngestFilters, SyntheticCityConfig
from .synthetic import generate_from_config, generate_synthetic_trips


app = typer.Typer(
    name="ambit",
    help="Gray-box origin-destination flow models: physical baselines with boosted residuals",
    add_completion=False,
)


# ============================================================================
# Shared options
# ============================================================================

def _options(
    config_path: Optional[Path],
    seeds: Optional[list[int]],
    parallel: bool,
) -> ExperimentConfig:
    config = load_config(config_path) if config_path else ExperimentConfig()
    overrides: dict[str, Any] = {}
    if seeds:
        overrides["seeds"] = list(seeds)
    if parallel:
        overrides["parallel"] = True
    return config.with_overrides(overrides)


def _split_codes(models: str) -> list[str]:
    return [m.strip() for m in models.split(",") if m.strip()]


def _finish(result: PresetResult) -> None:
    typer.echo(f"\n[OK] Wrote {len(result.files)} file(s) to: {result.output_dir}")
    for name in result.files:
        typer.echo(f"  - {name}")
    if not result.ok:
        typer.echo(f"\n{result.failures} model run(s) failed; see the error column in the reports.", err=True)
        raise typer.Exit(code=1)


CONFIG_OPTION = typer.Option(
    None, "--config", "-c", help="TOML experiment config", exists=True, dir_okay=False, resolve_path=True
)
SEED_OPTION = typer.Option(None, "--seed", "-s", help="Seed (repeat for a seed sweep); overrides the config")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory")
PARALLEL_OPTION = typer.Option(False, "--parallel", help="Fit independent models concurrently")


# ============================================================================
# Data commands
# ============================================================================

@app.command()
def ingest(
    trips: Path = typer.Option(
        ..., "--trips", "-t", help="Trip records (CSV or Parquet)", exists=True, dir_okay=False, resolve_path=True
    ),
    zones: Path = typer.Option(
        ..., "--zones", "-z", help="Zone table CSV", exists=True, dir_okay=False, resolve_path=True
    ),
    out: Path = typer.Option(Path("data"), "--out", "-o", help="Output directory"),
) -> None:
    """
    Aggregate trip records into hourly OD flows.

    Writes flows.csv, zones.csv and rejects.json (rejected trips by reason).
    """
    typer.echo(f"Ingesting trips from: {trips}")
    try:
        zone_table = load_zones(zones)
        result = ingest_trips(load_trips(trips), zone_table, IngestFilters())
        out.mkdir(parents=True, exist_ok=True)
        write_flows(result.flows, out / "flows.csv")
        write_zones(zone_table, out / "zones.csv")
        (out / "rejects.json").write_text(
            json.dumps({"accepted": result.accepted, "rejects": result.rejects}, indent=2, sort_keys=True),
            encoding="utf-8",
        )
        typer.echo(f"\n[OK] {result.accepted} trips -> {len(result.flows)} flow rows in: {out}")
        for reason, count in sorted(result.rejects.items()):
            typer.echo(f"  rejected {reason}: {count}")
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during ingestion: {e}", err=True)
        logger.exception("Ingestion failed")
        raise typer.Exit(code=1)


@app.command()
def synth(
    config_path: Optional[Path] = CONFIG_OPTION,
    seed: Optional[list[int]] = SEED_OPTION,
    out: Path = typer.Option(Path("data/synthetic"), "--out", "-o", help="Output directory"),
    zones: Optional[int] = typer.Option(None, "--zones", help="Number of zones"),
    hours: Optional[int] = typer.Option(None, "--hours", help="Number of hours"),
    trips: bool = typer.Option(False, "--trips", help="Also write individual trip records"),
) -> None:
    """
    Generate a synthetic city from the config's synthetic data source.

    Writes zones.csv, flows.csv and manifest.json with the generating parameters.
    """
    try:
        city_config = load_config(config_path).data.synthetic if config_path else SyntheticCityConfig()
        updates: dict[str, Any] = {}
        if seed:
            updates["seed"] = seed[0]
        if zones is not None:
            updates["n_zones"] = zones
        if hours is not None:
            updates["n_hours"] = hours
        city_config = SyntheticCityConfig.model_validate({**city_config.model_dump(), **updates})

        city = generate_from_config(city_config)
        out.mkdir(parents=True, exist_ok=True)
        write_zones(city.zones, out / "zones.csv")
        write_flows(city.flows, out / "flows.csv")
        (out / "manifest.json").write_text(
            json.dumps(city.manifest, indent=2, sort_keys=True, default=str), encoding="utf-8"
        )
        if trips:
            records = generate_synthetic_trips(city.zones, city.flows, seed=city_config.seed)
            records.to_csv(out / "trips.csv", index=False, date_format="%Y-%m-%dT%H:%M:%S")
        typer.echo(f"\n[OK] {city.zones.n} zones, {len(city.flows)} flow rows, total {city.flows.total} in: {out}")
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during generation: {e}", err=True)
        logger.exception("Synthetic generation failed")
        raise typer.Exit(code=1)


# ============================================================================
# Model commands
# ============================================================================

@app.command()
def fit(
    models: str = typer.Option("ambit", "--models", "-m", help="Comma-separated model codes"),
    config_path: Optional[Path] = CONFIG_OPTION,
    seed: Optional[list[int]] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    parallel: bool = PARALLEL_OPTION,
) -> None:
    """Fit models, report validation metrics and save fitted parameters as JSON."""
    try:
        config = _options(config_path, seed, parallel)
        result = fit_models(_split_codes(models), config, out)
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during fitting: {e}", err=True)
        logger.exception("Fit failed")
        raise typer.Exit(code=1)
    _finish(result)


@app.command("eval")
def evaluate(
    models: str = typer.Option("ppml,xgb_direct,ambit", "--models", "-m", help="Comma-separated model codes"),
    split: str = typer.Option("test", "--split", help="Split to score (val or test)"),
    config_path: Optional[Path] = CONFIG_OPTION,
    seed: Optional[list[int]] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    parallel: bool = PARALLEL_OPTION,
) -> None:
    """Score models on a split, per seed, and write metrics and predictions."""
    if split not in ("val", "test"):
        typer.echo(f"Error: split must be 'val' or 'test', got '{split}'", err=True)
        raise typer.Exit(code=1)
    try:
        config = _options(config_path, seed, parallel)
        result = evaluate_models(_split_codes(models), config, out, split=split)
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during evaluation: {e}", err=True)
        logger.exception("Evaluation failed")
        raise typer.Exit(code=1)
    _finish(result)


@app.command()
def preset(
    name: str = typer.Argument(..., help="Preset name (see `ambit presets`)"),
    config_path: Optional[Path] = CONFIG_OPTION,
    seed: Optional[list[int]] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    parallel: bool = PARALLEL_OPTION,
) -> None:
    """Run a named experiment and write its tables, config and manifest."""
    typer.echo(f"Running preset: {name}")
    try:
        config = _options(config_path, seed, parallel)
        result = run_preset(name, config, out_dir=out)
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during preset {name}: {e}", err=True)
        logger.exception(f"Preset {name} failed")
        raise typer.Exit(code=1)
    _finish(result)


@app.command()
def presets() -> None:
    """List the named experiments."""
    width = max(len(p.name) for p in PRESETS)
    for p in PRESETS:
        typer.echo(f"{p.name:<{width}}  {p.description}")


@app.command()
def explain(
    model: str = typer.Option("ambit", "--model", "-m", help="Boosted or residual model code"),
    config_path: Optional[Path] = CONFIG_OPTION,
    seed: Optional[list[int]] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
) -> None:
    """Exact tree attributions: per-row values, summary, waterfalls and rank stability."""
    try:
        config = _options(config_path, seed, False)
        result = run_explain(model, config, out)
    except AmbitError as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        typer.echo(f"Error during attribution: {e}", err=True)
        logger.exception("Explain failed")
        raise typer.Exit(code=1)
    _finish(result)


@app.command()
def version() -> None:
    """Show version information."""
    typer.echo(f"ambit {__version__}")


def main() -> None:
    """Main entry point."""
    app()


if __name__ == "__main__":
    main()
