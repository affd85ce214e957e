"""Operator command line: one subcommand per pipeline stage.

Every subcommand prints a single machine-parseable JSON summary line on
success and exits 0; failures print an error line to stderr and exit with
the category code (2 config, 3 input, 4 remote service, 5 parse/validation).
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .classify import experiment_cells
from .config import RunConfig, load_config
from .errors import ClaimLensError, ConfigError
from .model import ContextConfig, LearningMode, Split
from . import pipeline

log = logging.getLogger(__name__)

CONTEXT_CHOICES = {
    "text": ContextConfig.TEXT,
    "kg": ContextConfig.KG,
    "text+kg": ContextConfig.TEXT_AND_KG,
}
MODE_CHOICES = {"zsl": LearningMode.ZERO_SHOT, "ft": LearningMode.FINE_TUNED}
SPLIT_CHOICES = {s.value: s for s in Split}


def emit(stage: str, summary: dict) -> None:
    click.echo(json.dumps({"stage": stage, "status": "ok", **summary}, sort_keys=True))


def get_config(ctx: click.Context) -> RunConfig:
    return ctx.obj


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(path_type=Path),
    default=None,
    help="YAML configuration file (default: ./claimlens.yaml when present).",
)
@click.option(
    "--workspace",
    "-w",
    type=click.Path(path_type=Path),
    default=None,
    help="Workspace directory override.",
)
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging.")
@click.pass_context
def cli(ctx: click.Context, config_path: Path | None, workspace: Path | None, verbose: bool):
    """News claim-viewpoint analysis pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if config_path is None and Path("claimlens.yaml").exists():
        config_path = Path("claimlens.yaml")
    ctx.obj = load_config(config_path, workspace)


@cli.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.pass_context
def ingest(ctx: click.Context, inputs: tuple[Path, ...]):
    """Validate and normalize raw article JSONL files into the corpus."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit("ingest", pipeline.stage_ingest(config, inputs))


def _gateway_options(fn):
    fn = click.option(
        "--replay",
        type=click.Path(path_type=Path),
        default=None,
        help="Replay transcript instead of calling the live endpoint.",
    )(fn)
    fn = click.option(
        "--record",
        type=click.Path(path_type=Path),
        default=None,
        help="Record every model call to this transcript file.",
    )(fn)
    return fn


def _build_gateway(config: RunConfig, replay: Path | None, record: Path | None):
    from dataclasses import replace

    if replay or record:
        config = replace(
            config,
            replay_transcript=replay or config.replay_transcript,
            record_transcript=record or config.record_transcript,
        )
    return config.build_gateway()


@cli.command()
@click.option("--keyword", "-k", multiple=True, help="Topic keyword filter for articles.")
@click.option(
    "--select-ids",
    type=click.Path(path_type=Path),
    default=None,
    help="File with one claim_id per line; keep only those claims.",
)
@_gateway_options
@click.pass_context
def extract(ctx, keyword, select_ids, replay, record):
    """Extract actor-attributed claims from the corpus (one LLM call per
    article)."""
    config = get_config(ctx)
    selected = None
    if select_ids:
        selected = [
            line.strip()
            for line in Path(select_ids).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    with pipeline.workspace_lock(config.workspace):
        gateway = _build_gateway(config, replay, record)
        emit(
            "extract",
            pipeline.stage_extract(
                config,
                gateway,
                keywords=list(keyword) if keyword else None,
                select_ids=selected,
            ),
        )


@cli.group()
def viewpoints():
    """Viewpoint identification: propose, consolidate, and human review."""


@viewpoints.command("propose")
@_gateway_options
@click.pass_context
def viewpoints_propose(ctx, replay, record):
    """Propose candidate viewpoints per utterance batch."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        gateway = _build_gateway(config, replay, record)
        emit("viewpoints.propose", pipeline.stage_viewpoints_propose(config, gateway))


@viewpoints.command("consolidate")
@_gateway_options
@click.pass_context
def viewpoints_consolidate(ctx, replay, record):
    """Merge all candidates into one coherent machine-candidate set."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        gateway = _build_gateway(config, replay, record)
        emit("viewpoints.consolidate", pipeline.stage_viewpoints_consolidate(config, gateway))


@viewpoints.command("export-review")
@click.pass_context
def viewpoints_export_review(ctx):
    """Write the hand-editable review file for the machine-candidate set."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit("viewpoints.export-review", pipeline.stage_viewpoints_export_review(config))


@viewpoints.command("import-review")
@click.pass_context
def viewpoints_import_review(ctx):
    """Import the edited review file as the human-reviewed viewpoint set."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit("viewpoints.import-review", pipeline.stage_viewpoints_import_review(config))


@viewpoints.command("reference")
@click.pass_context
def viewpoints_reference(ctx):
    """Install the shipped UK-immigration viewpoint set as the reviewed
    set."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit("viewpoints.reference", pipeline.stage_viewpoints_reference(config))


@cli.command()
@click.option("--offline", is_flag=True, help="Serve profiles from cache + overrides only.")
@click.option("--strict", is_flag=True, help="Fail on ambiguous entity candidates.")
@click.pass_context
def enrich(ctx, offline, strict):
    """Map actors to Wikidata, fetch profiles, render KG descriptions."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit("enrich", pipeline.stage_enrich(config, offline=offline, strict=strict))


@cli.command("build-dataset")
@click.option(
    "--annotations",
    type=click.Path(path_type=Path),
    default=None,
    help="Raw annotation CSV (default: <workspace>/dataset/annotations.csv).",
)
@click.option(
    "--published-split",
    type=click.Path(path_type=Path),
    default=None,
    help="Authoritative instance_id->split mapping (JSON or CSV); bypasses the splitter.",
)
@click.option("--csv/--no-csv", "write_csv", default=True, help="Also export the benchmark CSV.")
@click.pass_context
def build_dataset(ctx, annotations, published_split, write_csv):
    """Filter disagreements, majority-vote labels, split, and assemble the
    benchmark."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit(
            "build-dataset",
            pipeline.stage_build_dataset(
                config,
                annotations_path=annotations,
                published_split_path=published_split,
                write_csv=write_csv,
            ),
        )


@cli.command("export-finetune")
@click.option(
    "--context",
    "context_key",
    type=click.Choice(sorted(CONTEXT_CHOICES)),
    required=True,
    help="Context configuration baked into the training prompts.",
)
@click.option("--model", "model_key", default=None, help="Model key from the config table.")
@click.option(
    "--split",
    "split_keys",
    type=click.Choice(["train", "validation"]),
    multiple=True,
    default=("train", "validation"),
    show_default=True,
)
@click.pass_context
def export_finetune(ctx, context_key, model_key, split_keys):
    """Export chat-format fine-tune files from the labeled splits."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit(
            "export-finetune",
            pipeline.stage_export_finetune(
                config,
                CONTEXT_CHOICES[context_key],
                model_key=model_key,
                splits=tuple(SPLIT_CHOICES[s] for s in split_keys),
            ),
        )


@cli.command()
@click.option("--model", "model_keys", multiple=True, help="Model key(s) from the config table.")
@click.option(
    "--context",
    "context_keys",
    type=click.Choice(sorted(CONTEXT_CHOICES)),
    multiple=True,
    help="Context configuration(s); default text+kg.",
)
@click.option(
    "--mode",
    "mode_keys",
    type=click.Choice(sorted(MODE_CHOICES)),
    multiple=True,
    help="Learning mode(s); default zsl.",
)
@click.option("--all", "run_all", is_flag=True, help="Run the full model x context x mode matrix.")
@click.option(
    "--split",
    type=click.Choice(sorted(SPLIT_CHOICES)),
    default="test",
    show_default=True,
    help="Instance split to classify.",
)
@click.option("--limit", type=int, default=None, help="Classify at most N instances.")
@_gateway_options
@click.pass_context
def classify(ctx, model_keys, context_keys, mode_keys, run_all, split, limit, replay, record):
    """Classify instances for one or more experiment cells."""
    config = get_config(ctx)
    if not config.models:
        raise ConfigError("no models configured; add a models table to the config")
    models = (
        list(config.models)
        if run_all or not model_keys
        else [config.model_by_key(k) for k in model_keys]
    )
    if run_all:
        cells = experiment_cells(models)
    else:
        configs = [CONTEXT_CHOICES[k] for k in context_keys] or [ContextConfig.TEXT_AND_KG]
        modes = [MODE_CHOICES[k] for k in mode_keys] or [LearningMode.ZERO_SHOT]
        cells = experiment_cells(models, configs, modes)
    with pipeline.workspace_lock(config.workspace):
        gateway = _build_gateway(config, replay, record)
        emit(
            "classify",
            pipeline.stage_classify(
                config, gateway, cells, split=SPLIT_CHOICES[split], limit=limit
            ),
        )


@cli.command()
@click.option("--run", "run_cell", default=None, help="Cell id under the runs directory.")
@click.option(
    "--predictions",
    type=click.Path(path_type=Path),
    default=None,
    help="Explicit prediction JSONL path (alternative to --run).",
)
@click.option(
    "--split",
    type=click.Choice(sorted(SPLIT_CHOICES)),
    default="test",
    show_default=True,
)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.pass_context
def evaluate(ctx, run_cell, predictions, split, figures):
    """Score a prediction file against gold labels (both averaging modes)."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit(
            "evaluate",
            pipeline.stage_evaluate(
                config,
                run_cell=run_cell,
                predictions_path=predictions,
                split=SPLIT_CHOICES[split],
                figures=figures,
            ),
        )


@cli.command()
@click.option(
    "--dimension",
    type=click.Choice(["party", "source", "month", "actor"]),
    required=True,
)
@click.option(
    "--from",
    "source",
    type=click.Choice(["gold", "predictions"]),
    default="gold",
    show_default=True,
    help="Count gold-positive instances or positively predicted ones.",
)
@click.option("--run", "run_cell", default=None, help="Cell id (required with --from predictions).")
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.pass_context
def analytics(ctx, dimension, source, run_cell, figures):
    """Viewpoint distribution by party, outlet, month, or actor."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        emit(
            "analytics",
            pipeline.stage_analytics(
                config, dimension, source=source, run_cell=run_cell, figures=figures
            ),
        )


@cli.command("replay-verify")
@click.option(
    "--transcript",
    type=click.Path(path_type=Path),
    required=True,
    help="Recorded transcript covering every model call in the chain.",
)
@click.option(
    "--annotations",
    type=click.Path(path_type=Path),
    required=True,
    help="Raw annotation CSV for the dataset-build stage.",
)
@click.option(
    "--context",
    "context_key",
    type=click.Choice(sorted(CONTEXT_CHOICES)),
    default="text+kg",
    show_default=True,
)
@click.option(
    "--mode",
    "mode_key",
    type=click.Choice(sorted(MODE_CHOICES)),
    default="zsl",
    show_default=True,
)
@click.pass_context
def replay_verify(ctx, transcript, annotations, context_key, mode_key):
    """Run the full pipeline twice against a transcript and verify the
    outputs are byte-identical."""
    config = get_config(ctx)
    with pipeline.workspace_lock(config.workspace):
        summary = pipeline.stage_replay_verify(
            config,
            transcript,
            annotations,
            context=CONTEXT_CHOICES[context_key],
            mode=MODE_CHOICES[mode_key],
        )
    emit("replay-verify", summary)
    if not summary["identical"]:
        raise ClaimLensError(f"replay outputs differ: {summary['differing']}")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(130)
    except ClaimLensError as exc:
        print(
            json.dumps(
                {"status": "error", "category": exc.exit_code, "error": str(exc)},
                sort_keys=True,
            ),
            file=sys.stderr,
        )
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
