"""Command-line interface.

Every stage command reads the same TOML run configuration and operates on
the run directory it names; ``run`` executes the whole pipeline. Exit codes:
0 success, 2 validation error (bad input or config), 3 stage failure.
"""

from __future__ import annotations

import functools
import sys

import click

from . import graph as graphmod
from . import nullmodel, pipeline, projection
from .errors import (
    ConvergenceError,
    FitError,
    GraphError,
    NullnetError,
    PipelineError,
    ValidationError,
)
from .synth import SynthConfig, write_fixture

EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, GraphError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except (PipelineError, FitError, ConvergenceError, NullnetError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_STAGE)
    return wrapper


def _config_option(fn):
    return click.option("--config", "config_path", required=True,
                        type=click.Path(exists=True, dir_okay=False),
                        help="TOML run configuration.")(fn)


def _run_stages(config_path: str, stages: list[str]):
    cfg = pipeline.load_config(config_path)
    manifest = pipeline.run_full_pipeline(cfg, only=stages)
    for entry in manifest.stages:
        click.echo(f"[{entry['name']}] done in {entry['seconds']}s "
                   f"({len(entry['outputs'])} file(s))")


@click.group()
@click.version_option(package_name="nullnet")
def main():
    """Reconstruct effective interaction networks and misinformation reports."""


@main.command()
@_config_option
@_guarded
def ingest(config_path):
    """Ingest the JSONL tweet export into the run store."""
    _run_stages(config_path, ["ingest"])


@main.command()
@_config_option
@click.option("--which", type=click.Choice(["verified", "user-post", "both"]),
              default="both", show_default=True)
@_guarded
def build(config_path, which):
    """Build the bipartite graphs from the ingested store."""
    stages = {"verified": ["verified_graph"],
              "user-post": ["directed_graph"],
              "both": ["verified_graph", "directed_graph"]}[which]
    _run_stages(config_path, stages)


@main.command()
@_config_option
@click.option("--null-model", "null_model",
              type=click.Choice(["exact", "chung-lu", "auto"]), default=None,
              help="Override the configured null-model mode.")
@click.option("--sparse-threshold", type=float, default=None,
              help="Override the connectance threshold for 'auto'.")
@click.option("--which", type=click.Choice(["bicm", "bidcm", "both"]),
              default="both", show_default=True)
@_guarded
def fit(config_path, null_model, sparse_threshold, which):
    """Fit the null models on the built graphs."""
    cfg = pipeline.load_config(config_path)
    if null_model:
        cfg.null_model = null_model
    if sparse_threshold is not None:
        cfg.sparse_threshold = sparse_threshold
    stages = {"bicm": ["bicm"], "bidcm": ["bidcm"],
              "both": ["bicm", "bidcm"]}[which]
    manifest = pipeline.run_full_pipeline(cfg, only=stages)
    for entry in manifest.stages:
        click.echo(f"[{entry['name']}] done in {entry['seconds']}s")


@main.command()
@click.option("--input", "input_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Edge-list CSV (bipartite or directed three-column).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--directed", is_flag=True, default=False,
              help="Treat the input as a user/post directed edge list.")
@click.option("--null-model", "null_model",
              type=click.Choice(["exact", "chung-lu", "auto"]),
              default="auto", show_default=True)
@click.option("--sparse-threshold", type=float, default=0.01, show_default=True)
@click.option("--fdr-family", type=click.Choice(["nonzero", "all-pairs"]),
              default="nonzero", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def project(input_path, alpha, directed, null_model, sparse_threshold,
            fdr_family, out_path):
    """Validate the projection of a standalone edge-list file."""
    if directed:
        g = graphmod.read_directed_csv(input_path)
        params = nullmodel.fit_bidcm(
            g, retweet_mode="auto" if null_model == "auto" else null_model,
            sparse_threshold=sparse_threshold)
    else:
        g = graphmod.read_bipartite_csv(input_path)
        if null_model == "exact":
            params = nullmodel.fit_bicm(g)
        elif null_model == "chung-lu":
            params = nullmodel.fit_chung_lu(g, sparse_threshold=sparse_threshold)
        else:
            params = nullmodel.fit_auto(g, sparse_threshold=sparse_threshold)
    proj = projection.validate_projection(g, params, alpha=alpha,
                                          fdr_family=fdr_family)
    projection.write_projection_csv(proj, out_path)
    click.echo(f"validated {proj.rejected_count}/{proj.tested_count} pairs "
               f"-> {out_path}")


@main.command()
@_config_option
@click.option("--restarts", type=int, default=None,
              help="Override the Louvain restart count.")
@_guarded
def communities(config_path, restarts):
    """Detect communities of the validated verified-user network."""
    cfg = pipeline.load_config(config_path)
    if restarts is not None:
        cfg.restarts = restarts
    manifest = pipeline.run_full_pipeline(cfg, only=["communities"])
    for entry in manifest.stages:
        click.echo(f"[{entry['name']}] done in {entry['seconds']}s")


@main.command()
@_config_option
@click.option("--seeds", "seeds_path", type=click.Path(exists=True),
              default=None, help="Seed labels CSV (node_id,community).")
@_guarded
def propagate(config_path, seeds_path):
    """Propagate community labels over the directed validated network."""
    cfg = pipeline.load_config(config_path)
    if seeds_path:
        cfg.seeds_path = seeds_path
    manifest = pipeline.run_full_pipeline(cfg, only=["propagation"])
    for entry in manifest.stages:
        click.echo(f"[{entry['name']}] done in {entry['seconds']}s")


@main.command()
@_config_option
@_guarded
def hubs(config_path):
    """Rank accounts of the directed validated network by hub score."""
    _run_stages(config_path, ["hits"])


@main.command()
@_config_option
@_guarded
def report(config_path):
    """Emit the reputability and time-series reports."""
    _run_stages(config_path, ["reports"])


@main.command()
@_config_option
@click.option("--from-stage", "from_stage", default=None,
              type=click.Choice(list(pipeline.STAGES)),
              help="Resume from this stage, reusing earlier artifacts.")
@_guarded
def run(config_path, from_stage):
    """Run the full pipeline end to end."""
    cfg = pipeline.load_config(config_path)
    manifest = pipeline.run_full_pipeline(cfg, from_stage=from_stage)
    for entry in manifest.stages:
        click.echo(f"[{entry['name']}] done in {entry['seconds']}s "
                   f"({len(entry['outputs'])} file(s))")
    click.echo(f"manifest: {pipeline._RunPaths(cfg.output_dir).manifest}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--communities", "n_communities", type=int, default=4,
              show_default=True)
@click.option("--verified", type=int, default=15, show_default=True,
              help="Verified users per community.")
@click.option("--unverified", type=int, default=485, show_default=True,
              help="Unverified users per community.")
@_guarded
def synth(out_dir, seed, n_communities, verified, unverified):
    """Generate a planted-community fixture plus a ready-to-run config."""
    cfg = SynthConfig(n_communities=n_communities,
                      verified_per_community=verified,
                      unverified_per_community=unverified,
                      nr_propensity=tuple(
                          [0.35] + [0.04] * max(0, n_communities - 1)),
                      seed=seed)
    paths = write_fixture(out_dir, cfg)
    data = paths.pop("data")
    click.echo(f"generated {len(data.records)} records for "
               f"{len(data.ground_truth)} users")
    for label, p in paths.items():
        click.echo(f"{label}: {p}")


if __name__ == "__main__":
    main()
