import functools
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import click
import numpy as np

from mvdamage.config import (
    STREAM_ABLATE,
    STREAM_MODEL_C,
    STREAM_MODEL_L,
    ConfigError,
    RunConfig,
    archive_run_config,
    default_run_config,
    derive_seed,
    load_run_config,
)
from mvdamage.data import (
    SPLITS,
    Dataset,
    ManifestError,
    dataset_digest,
    generate_synthetic_dataset,
    split_dataset,
)
from mvdamage.metrics import (
    INTERPOLATIONS,
    MetricError,
    build_report,
    evaluate_model_c,
    evaluate_model_l,
    write_report,
)
from mvdamage.models import (
    VIEW_ROLES,
    ArchitectureError,
    CheckpointError,
    ModelC,
    ModelL,
    load_checkpoint,
    save_checkpoint,
)
from mvdamage.tensor import ShapeError
from mvdamage.training import TrainingError, train_model_c, train_model_l

MODEL_L_CHECKPOINT = "model_l.ckpt"
MODEL_C_CHECKPOINT = "model_c.ckpt"
TRAIN_L_LOG = "train_l.log.jsonl"
TRAIN_C_LOG = "train_c.log.jsonl"
ABLATION_NAME = "ablation.json"

logger = logging.getLogger(__name__)


def handle_errors(f):
    """Turn expected failures into a one-line diagnostic and exit status 1"""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (
            ConfigError,
            ManifestError,
            CheckpointError,
            ArchitectureError,
            ShapeError,
            MetricError,
            TrainingError,
            ValueError,
            OSError,
        ) as e:
            logger.debug("Command failed", exc_info=True)
            raise click.ClickException(f"{e.__class__.__name__}: {e}")

    return wrapper


def parse_fractions(value: Optional[str], count: int, name: str) -> Optional[Tuple[float, ...]]:
    if value is None:
        return None
    try:
        fractions = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected {count} comma separated numbers", param_hint=name)
    if len(fractions) != count:
        raise click.BadParameter(f"expected {count} values, got {len(fractions)}", param_hint=name)
    return fractions


def _load_model(path: str, kind: type, what: str):
    model = load_checkpoint(path)
    if not isinstance(model, kind):
        raise CheckpointError(path, f"holds {model.kind}, expected a {what} checkpoint")
    return model


def _dataset(config: RunConfig, data: Optional[str]) -> Dataset:
    path = data or config.dataset.path
    if not path:
        raise ConfigError("No dataset given (--data or dataset.path)")
    return Dataset.open(path)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Run config (JSON); flags override its values",
)
@click.pass_context
def main(ctx, verbose, config_path):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)
    try:
        ctx.obj = load_run_config(config_path) if config_path else default_run_config()
    except ConfigError as e:
        raise click.ClickException(str(e))


@main.command()
@click.option("--buildings", "n_buildings", type=int, default=None, help="Number of buildings")
@click.option("--class-mix", default=None, help="Five comma separated label fractions, DS-0 first")
@click.option("--directional-fraction", type=click.FloatRange(0.0, 1.0), default=None)
@click.option("--split", "split_fractions", default=None, help="train,val,test fractions")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Dataset directory")
@click.pass_obj
@handle_errors
def generate(config: RunConfig, n_buildings, class_mix, directional_fraction, split_fractions, seed, out):
    """Render a synthetic multi-view dataset and split it by building"""
    dataset = config.dataset._replace(
        **{
            k: v
            for k, v in dict(
                n_buildings=n_buildings,
                class_mix=parse_fractions(class_mix, 5, "--class-mix"),
                directional_fraction=directional_fraction,
                split_fractions=parse_fractions(split_fractions, len(SPLITS), "--split"),
            ).items()
            if v is not None
        }
    )
    config = config._replace(dataset=dataset, seed=config.seed if seed is None else seed)
    config.validate()
    out = Path(out) if out else config.output_dir() / "dataset"
    config = config._replace(dataset=dataset._replace(path=str(out)))

    manifest = generate_synthetic_dataset(
        dataset.n_buildings,
        dataset.class_mix,
        dataset.directional_fraction,
        config.seed,
        out,
        image_size=dataset.image_size,
    )
    manifest = split_dataset(manifest, dataset.split_fractions, seed=config.seed)
    manifest.write()
    archive_run_config(config, out)

    counts = manifest.split_counts()
    click.echo(f"Generated {len(manifest)} buildings ({5 * len(manifest)} images) in {out}")
    click.echo("Split: " + "/".join(str(counts[s]) for s in SPLITS) + " (" + "/".join(SPLITS) + ")")
    click.echo(f"Digest: {dataset_digest(out)}")


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--stage", type=click.Choice(["loc", "cls", "all"]), default="all", show_default=True)
@click.option("--seed", type=int, default=None)
@click.option(
    "--shared-backbone/--separate-backbones",
    default=None,
    help="One Model-C backbone for all views instead of one per view",
)
@click.option("--max-epochs", type=click.IntRange(min=1), default=None, help="Cap every schedule")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Checkpoint directory")
@click.pass_obj
@handle_errors
def train(config: RunConfig, data, stage, seed, shared_backbone, max_epochs, out):
    """Train Model-L and/or Model-C on the dataset's train split"""
    if seed is not None:
        config = config._replace(seed=seed)
    if shared_backbone is not None:
        config = config._replace(model_c=config.model_c._replace(shared_backbone=shared_backbone))
    if max_epochs is not None:
        config = config.with_max_epochs(max_epochs)
    dataset = _dataset(config, data)
    config = config._replace(dataset=config.dataset._replace(path=str(dataset.manifest.root)))
    out = Path(out) if out else config.output_dir() / "models"
    archive_run_config(config, out)

    if stage in ("loc", "all"):
        model_l = ModelL(config.model_l, seed=derive_seed(config.seed, STREAM_MODEL_L))
        model_l, log = train_model_l(
            model_l,
            dataset.segmentation_items("train"),
            dataset.segmentation_items("val"),
            config.training("train_l"),
        )
        save_checkpoint(model_l, out / MODEL_L_CHECKPOINT)
        log.write(out / TRAIN_L_LOG)
        click.echo(f"Model-L: {len(log)} epochs ({log.stop_reason}) → {out / MODEL_L_CHECKPOINT}")

    if stage in ("cls", "all"):
        model_c = ModelC(config.model_c, seed=derive_seed(config.seed, STREAM_MODEL_C))
        model_c, log = train_model_c(
            model_c,
            dataset.classification_items("train"),
            dataset.classification_items("val"),
            config.training("train_c_phase1"),
            config.training("train_c_phase2"),
        )
        save_checkpoint(model_c, out / MODEL_C_CHECKPOINT)
        log.write(out / TRAIN_C_LOG)
        click.echo(f"Model-C: {len(log)} epochs ({log.stop_reason}) → {out / MODEL_C_CHECKPOINT}")


@main.command(name="eval")
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--model-l", "model_l_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--model-c", "model_c_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--oracle-masks", is_flag=True, help="Feed Model-C ground-truth masks instead of Model-L output")
@click.option("--threshold", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=0.5)
@click.option(
    "--interpolation",
    type=click.Choice(INTERPOLATIONS),
    default="all-point",
    show_default=True,
    help="AP interpolation of the precision envelope",
)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory")
@click.pass_obj
@handle_errors
def evaluate(config: RunConfig, data, model_l_path, model_c_path, split, oracle_masks, threshold, interpolation, out):
    """Evaluate checkpoints on a split and write metrics.json and pr_curve.csv"""
    if model_c_path is None and (oracle_masks or model_l_path is None):
        raise click.UsageError("--model-c is required unless evaluating Model-L alone")
    if model_l_path is None and not oracle_masks:
        raise click.UsageError("--model-l is required unless --oracle-masks is given")

    dataset = _dataset(config, data)
    model_l = None if oracle_masks else _load_model(model_l_path, ModelL, "Model-L")
    model_c = None if model_c_path is None else _load_model(model_c_path, ModelC, "Model-C")

    localization = None
    if model_l is not None:
        localization = evaluate_model_l(
            model_l, dataset.segmentation_items(split), threshold=threshold, interpolation=interpolation
        )
    classification = None
    if model_c is not None:
        classification = evaluate_model_c(
            model_l, model_c, dataset.classification_items(split), oracle_masks, threshold
        )

    report = build_report(localization, classification, dataset_digest(dataset.manifest.root), split)
    out = Path(out) if out else config.output_dir() / "eval"
    write_report(report, out, localization)
    archive_run_config(config._replace(dataset=config.dataset._replace(path=str(dataset.manifest.root))), out)

    for key in ("mean_iou", "mean_precision", "mean_recall", "mean_f1", "map", "accuracy_fine", "accuracy_coarse"):
        if key in report:
            click.echo(f"{key}: {report[key]:.4f}")


def ablation_summary(runs: Sequence[dict]) -> List[dict]:
    summary = []
    for roles in dict.fromkeys(tuple(r["roles"]) for r in runs):
        fine = [r["accuracy_fine"] for r in runs if tuple(r["roles"]) == roles]
        coarse = [r["accuracy_coarse"] for r in runs if tuple(r["roles"]) == roles]
        summary.append(
            {
                "roles": list(roles),
                "runs": len(fine),
                "mean_accuracy_fine": float(np.mean(fine)),
                "std_accuracy_fine": float(np.std(fine)),
                "mean_accuracy_coarse": float(np.mean(coarse)),
            }
        )
    return summary


@main.command()
@click.option("--data", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--seeds", "n_seeds", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--max-epochs", type=click.IntRange(min=1), default=None, help="Cap every schedule")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.pass_obj
@handle_errors
def ablate(config: RunConfig, data, n_seeds, max_epochs, out):
    """Multi-view against single-view Model-C on oracle masks, over several seeds"""
    if max_epochs is not None:
        config = config.with_max_epochs(max_epochs)
    dataset = _dataset(config, data)
    train_items = dataset.classification_items("train")
    val_items = dataset.classification_items("val")
    test_items = dataset.classification_items("test")

    variants = [VIEW_ROLES] + [(role,) for role in VIEW_ROLES]
    runs = []
    for index in range(n_seeds):
        run = config._replace(seed=derive_seed(config.seed, STREAM_ABLATE, index))
        for roles in variants:
            model = ModelC(config.model_c._replace(roles=roles), seed=derive_seed(run.seed, STREAM_MODEL_C))
            train_model_c(
                model,
                train_items,
                val_items,
                run.training("train_c_phase1"),
                run.training("train_c_phase2"),
            )
            report = evaluate_model_c(None, model, test_items, use_oracle_masks=True)
            runs.append(
                {
                    "seed": run.seed,
                    "roles": [r.value for r in roles],
                    "accuracy_fine": report.accuracy_fine,
                    "accuracy_coarse": report.accuracy_coarse,
                }
            )
            logger.info("Ablation seed %d roles %s: accuracy %.4f", run.seed, runs[-1]["roles"], report.accuracy_fine)

    summary = ablation_summary(runs)
    out = Path(out) if out else config.output_dir() / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    document = {"dataset_digest": dataset_digest(dataset.manifest.root), "runs": runs, "summary": summary}
    (out / ABLATION_NAME).write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf8")
    archive_run_config(config, out)

    for row in summary:
        click.echo(
            f"{'+'.join(row['roles']):<45} fine {row['mean_accuracy_fine']:.4f} "
            f"± {row['std_accuracy_fine']:.4f}  coarse {row['mean_accuracy_coarse']:.4f}"
        )


if __name__ == "__main__":
    main()
