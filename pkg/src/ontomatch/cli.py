"""Command-line interface.

Each subcommand runs one pipeline stage against the working directory given
by ``--out``; ``run`` executes the whole pipeline. Options override values
from ``--config`` (a JSON file with PipelineConfig keys); credentials come
from environment variables (ONTOMATCH_BASE_URL, ONTOMATCH_API_KEY, ...).
"""

from __future__ import annotations

import functools
import logging
import sys

import click

from .errors import OntomatchError
from .evaluate import MetricsReport, global_metrics
from .model import MappingSet
from .pipeline import Pipeline, PipelineConfig

logger = logging.getLogger(__name__)

_OVERRIDE_KEYS = (
    ("source", "source"),
    ("target", "target"),
    ("source_name", "source_name"),
    ("target_name", "target_name"),
    ("k", "k"),
    ("lambda_prob", "lambda_prob"),
    ("lambda_cs", "lambda_cs"),
    ("few_shot", "few_shot"),
    ("index", "index"),
    ("cache_dir", "cache_dir"),
    ("out", "out_dir"),
    ("reference", "reference"),
    ("bidirectional", "bidirectional"),
)


def common_options(fn):
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                  default=None, help="JSON config file.")
    @click.option("--source", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Source ontology file (.owl/.rdf/.xml or .jsonl).")
    @click.option("--target", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Target ontology file.")
    @click.option("--source-name", default=None, help="Display name of the source ontology.")
    @click.option("--target-name", default=None, help="Display name of the target ontology.")
    @click.option("--k", type=int, default=None, help="Candidates per source concept (default 10).")
    @click.option("--lambda-prob", type=float, default=None,
                  help="YES-probability threshold (default 0.99).")
    @click.option("--lambda-cs", type=float, default=None,
                  help="Cosine similarity threshold (default 0.97).")
    @click.option("--few-shot", type=int, default=None,
                  help="Number of few-shot examples for the judge (default 0).")
    @click.option("--no-definitions", is_flag=True, default=False,
                  help="Skip definition enrichment everywhere (ablation).")
    @click.option("--index", type=click.Choice(["exact", "hnsw"]), default=None,
                  help="Retrieval index kind (default hnsw).")
    @click.option("--provider", type=click.Choice(["mock", "http"]), default=None,
                  help="Provider backend (default from config; mock otherwise).")
    @click.option("--cache-dir", type=click.Path(file_okay=False), default=None,
                  help="Response cache directory (default ./cache).")
    @click.option("--out", type=click.Path(file_okay=False), default=None,
                  help="Working/output directory (default ./out).")
    @click.option("--reference", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="Reference mapping TSV for evaluation.")
    @click.option("--force", is_flag=True, default=False,
                  help="Re-run stages even when inputs are unchanged.")
    @click.option("--limit", type=int, default=None,
                  help="Bound the number of items processed by define/judge.")
    @click.option("--bidirectional", is_flag=True, default=False,
                  help="Union candidates from both retrieval directions.")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def build_config(config_path, no_definitions, provider, bidirectional, **overrides) -> PipelineConfig:
    data = PipelineConfig.from_file(config_path).to_dict() if config_path else PipelineConfig().to_dict()
    for option, key in _OVERRIDE_KEYS:
        value = overrides.get(option)
        if option == "bidirectional":
            value = bidirectional or None
        if value is not None:
            data[key] = value
    if no_definitions:
        data["use_definitions"] = False
    if provider is not None:
        if data.get("provider", {}).get("kind") == provider:
            pass
        else:
            data["provider"] = {"kind": provider}
    return PipelineConfig.from_dict(data)


def _run_stages(stages, config_path, force, limit, **kwargs):
    try:
        config = build_config(config_path, **kwargs)
        pipeline = Pipeline(config)
        results = pipeline.run(stages=stages, force=force, limit=limit)
    except OntomatchError as e:
        raise click.ClickException(str(e)) from e
    for stage, status in results.items():
        click.echo(f"{stage}: {status}")


def _stage_command(stage: str, help_text: str):
    @main.command(name=stage, help=help_text)
    @common_options
    def command(config_path, force, limit, **kwargs):
        _run_stages([stage], config_path, force, limit, **kwargs)

    return command


@click.group()
@click.option("-v", "--verbose", is_flag=True, default=False, help="Debug logging.")
def main(verbose):
    """LLM-assisted ontology matching pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


@main.command(name="run")
@common_options
def run_command(config_path, force, limit, **kwargs):
    """Run all stages (eval only when a reference is configured)."""
    _run_stages(None, config_path, force, limit, **kwargs)


_stage_command("ingest", "Parse both ontologies into concept JSONL artifacts.")
_stage_command("define", "Generate concept definitions with the chat model.")
_stage_command("embed", "Embed concept texts into vectors.")
_stage_command("match", "Retrieve top-k candidate targets per source concept.")
_stage_command("judge", "Classify candidate pairs as equivalent or not.")
_stage_command("fuse", "Filter judgements by thresholds and union exact matches.")


@main.command(name="eval")
@common_options
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Evaluate this mapping TSV directly instead of the pipeline output.")
def eval_command(config_path, force, limit, predictions, **kwargs):
    """Score mappings against a reference alignment."""
    if predictions is not None:
        reference = kwargs.get("reference")
        if reference is None:
            raise click.UsageError("--predictions requires --reference")
        with open(predictions, "r", encoding="utf-8") as fp:
            predicted = MappingSet.read_tsv(fp)
        with open(reference, "r", encoding="utf-8") as fp:
            ref = MappingSet.read_tsv(fp)
        precision, recall, f1 = global_metrics(predicted.pairs(), ref.pairs())
        report = MetricsReport(
            precision=precision,
            recall=recall,
            f1=f1,
            predicted_count=len(predicted),
            reference_count=len(ref),
        )
        click.echo(report.to_text(), nl=False)
        return
    _run_stages(["eval"], config_path, force, limit, **kwargs)


if __name__ == "__main__":
    main()
