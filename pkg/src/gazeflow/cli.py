"""Command-line entry points: ingest, train, eval, predict, personalize,
optimize, render, serve.

Exit codes for ``train``: 2 config parse failure, 3 training abort. Every
command is deterministic under a fixed seed and config.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .core import (
    DisplayConfig,
    StimulusImage,
    load_dataset,
    parse_record,
    read_scanpaths,
    record_to_scanpath,
    write_scanpaths,
)
from .layout import load_layout, optimize as optimize_layout
from .metrics import evaluate
from .model import INDIVIDUAL, ModelConfig, PolicyModel
from .render import layout_svg, scanpath_svg, write_svg
from .training import (
    ABLATION_ARMS,
    EmpiricalEnvProvider,
    PersonalizationConfig,
    TrainConfig,
    TrainingAborted,
    ablation_config,
    personalize as run_personalize,
    predict_test_set,
    train as run_train,
)

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_ABORT = 3


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def _section(payload: dict, key: str, cls, default=None):
    body = payload.get(key)
    if body is None:
        if default is not None:
            return default
        raise ConfigError(key, f"config is missing the {key!r} section")
    try:
        return cls(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"bad {key!r} section: {exc}") from exc


def parse_train_config(path: Path) -> tuple[Path, Path, DisplayConfig, ModelConfig, TrainConfig]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", f"cannot parse config file {path}: {exc}") from exc
    if "dataset_root" not in payload:
        raise ConfigError("dataset_root", "config is missing the 'dataset_root' field")
    dataset_root = Path(payload["dataset_root"])
    if not dataset_root.is_dir():
        raise ConfigError("dataset_root", f"dataset_root {dataset_root} is not a directory")
    out_dir = Path(payload.get("out_dir", "runs/default"))
    display = _section(payload, "display", DisplayConfig, default=DisplayConfig.from_visual_angle(1024, 768))
    model_cfg = _section(payload, "model", ModelConfig, default=ModelConfig())
    train_cfg = _section(payload, "train", TrainConfig, default=TrainConfig())
    return dataset_root, out_dir, display, model_cfg, train_cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable info logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("dataset_root", type=click.Path(exists=True, file_okay=False, path_type=Path),
                envvar="GAZEFLOW_DATA_ROOT")
@click.option("--out", type=click.Path(path_type=Path), help="Re-serialize canonical records here.")
def ingest(dataset_root: Path, out: Path | None) -> None:
    """Load, validate, and report a dataset directory."""
    ds = load_dataset(dataset_root)
    click.echo(
        f"{len(ds.stimuli)} stimuli, {len(ds.scanpaths)} scanpaths, "
        f"{len(ds.split_images('train'))}/{len(ds.split_images('test'))} train/test images, "
        f"{len(ds.split_viewers('train'))}/{len(ds.split_viewers('test'))} train/test viewers"
    )
    if out is not None:
        write_scanpaths(out, ds.scanpaths)
        click.echo(f"wrote canonical records to {out}")


@main.command()
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--ablation", type=click.Choice(ABLATION_ARMS), default=None,
              help="Override reward flags with one ablation arm.")
def train(config_path: Path, ablation: str | None) -> None:
    """Train a policy from a JSON config file."""
    import torch

    try:
        dataset_root, out_dir, display, model_cfg, train_cfg = parse_train_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error in field '{exc.field}': {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if ablation is not None:
        train_cfg = ablation_config(ablation, train_cfg)

    dataset = load_dataset(dataset_root)
    torch.manual_seed(train_cfg.seed)
    model = PolicyModel(model_cfg)
    env = EmpiricalEnvProvider(dataset, display, model_cfg.input_w, model_cfg.input_h)
    try:
        result = run_train(model, dataset, env, train_cfg, out_dir)
    except TrainingAborted as exc:
        click.echo(f"training aborted: {exc}", err=True)
        sys.exit(EXIT_ABORT)
    except ValueError as exc:
        click.echo(f"config error in field 'train': {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    predictions = predict_test_set(model, dataset)
    report = evaluate(predictions, dataset)
    report.write(out_dir / "report.json", out_dir / "report.txt")
    click.echo(report.to_table())
    click.echo(f"best checkpoint: {result.best_checkpoint}")


@main.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--dataset", "dataset_root", required=True, type=click.Path(exists=True, path_type=Path),
              envvar="GAZEFLOW_DATA_ROOT")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("eval-out"))
def eval_cmd(checkpoint_path: Path, dataset_root: Path, out_dir: Path) -> None:
    """Evaluate a checkpoint on the dataset's held-out images."""
    model = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_root)
    predictions = predict_test_set(model, dataset)
    report = evaluate(predictions, dataset)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write(out_dir / "report.json", out_dir / "report.txt")
    click.echo(report.to_table())


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--viewer", default=None, help="Personalized viewer id (individual checkpoints only).")
@click.option("--mode", type=click.Choice(["greedy", "sample"]), default="greedy")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--render", "render_path", type=click.Path(path_type=Path), default=None,
              help="Also write an SVG overlay here.")
def predict(checkpoint_path: Path, image_path: Path, viewer: str | None, mode: str, seed: int,
            out_path: Path, render_path: Path | None) -> None:
    """Predict one scanpath and write it as a canonical record."""
    model = load_checkpoint(checkpoint_path, mode=INDIVIDUAL if viewer else None)
    if viewer is not None and viewer not in model.viewer_embeddings:
        raise click.ClickException(f"unknown viewer {viewer!r}; checkpoint has {sorted(model.viewer_embeddings)}")
    image = StimulusImage.load(image_path)
    result = model.rollout(image, viewer, mode=mode, seed=seed)
    write_scanpaths(out_path, [result.scanpath])
    if render_path is not None:
        write_svg(render_path, scanpath_svg(result.scanpath, image.width, image.height))
    click.echo(f"{len(result.scanpath)} fixations, log_prob {result.log_prob:.4f} -> {out_path}")


@main.command(name="personalize")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--dataset", "dataset_root", required=True, type=click.Path(exists=True, path_type=Path),
              envvar="GAZEFLOW_DATA_ROOT")
@click.option("--scanpaths", "record_path", required=True, type=click.Path(exists=True, path_type=Path),
              help="Record file with the new viewer's sample scanpaths.")
@click.option("--viewer", required=True, help="Id to register the new embedding under.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--n-path", type=int, default=50)
@click.option("--steps", type=int, default=150)
@click.option("--lr", type=float, default=3e-3)
@click.option("--no-freeze", is_flag=True, help="Also fine-tune the policy weights.")
@click.option("--seed", type=int, default=0)
def personalize_cmd(checkpoint_path: Path, dataset_root: Path, record_path: Path, viewer: str,
                    out_path: Path, n_path: int, steps: int, lr: float, no_freeze: bool, seed: int) -> None:
    """Fit a personalized viewer embedding from sample scanpaths."""
    model = load_checkpoint(checkpoint_path, mode=INDIVIDUAL)
    dataset = load_dataset(dataset_root)
    samples = list(read_scanpaths(record_path, dataset.stimuli))
    pcfg = PersonalizationConfig(n_path=n_path, steps=steps, learning_rate=lr,
                                 freeze_policy=not no_freeze, seed=seed)
    run_personalize(model, viewer, samples, dataset.stimuli, pcfg)
    header = read_header(checkpoint_path)
    save_checkpoint(model, out_path, train_config=header.get("train_config"))
    click.echo(f"registered viewer {viewer!r} ({len(samples)} samples) -> {out_path}")


@main.command(name="optimize")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--layout", "layout_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--scope", default="population", help="'population' or a personalized viewer id.")
@click.option("--policy", type=click.Choice(["greedy", "sample"]), default="greedy")
@click.option("--seed", type=int, default=0)
@click.option("--cap", type=int, default=10_000)
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path))
def optimize_cmd(checkpoint_path: Path, layout_path: Path, scope: str, policy: str, seed: int,
                 cap: int, out_dir: Path) -> None:
    """Search layouts for the designer's fixation order, maximizing dwell."""
    model = load_checkpoint(checkpoint_path, mode=None if scope == "population" else INDIVIDUAL)
    spec, req = load_layout(layout_path)
    if req is None:
        raise click.ClickException("layout file has no 'order' list")
    result = optimize_layout(spec, req, model, scope=scope, rollout_policy=policy, seed=seed, cap=cap)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "result.json").write_text(result.to_json(), encoding="utf-8")
    write_svg(out_dir / "result.svg",
              layout_svg(result.layout, result.scanpath, req,
                         objective=result.objective if result.satisfied else None))
    click.echo(
        f"satisfied={result.satisfied} objective={result.objective:.3f}s "
        f"candidates={result.candidates} -> {out_dir}"
    )


@main.command()
@click.option("--scanpath", "record_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--image", "image_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def render(record_path: Path, image_path: Path | None, out_path: Path) -> None:
    """Render the first scanpath of a record file as an SVG overlay."""
    if image_path is not None:
        image = StimulusImage.load(image_path)
        stimuli = {image.id: image}
        width, height = image.width, image.height
    else:
        stimuli, width, height = {}, 800, 600
    paths = []
    with open(record_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                sid = str(rec["stimulus"])
                img = stimuli.get(sid) or StimulusImage(sid, np.full((height, width, 3), 128, dtype=np.uint8))
                paths.append(record_to_scanpath(parse_record(line), img))
                break
    if not paths:
        raise click.ClickException(f"no scanpath records in {record_path}")
    write_svg(out_path, scanpath_svg(paths[0], width, height))
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--address", default="127.0.0.1:8765", envvar="GAZEFLOW_ADDRESS",
              help="host:port to bind; env GAZEFLOW_ADDRESS overrides the default.")
@click.option("--data-root", type=click.Path(path_type=Path), default=None, envvar="GAZEFLOW_DATA_ROOT")
def serve(checkpoint_path: Path, address: str, data_root: Path | None) -> None:
    """Run the HTTP prediction/optimization service."""
    import uvicorn

    from .service import create_app

    host, _, port = address.partition(":")
    app = create_app(checkpoint_path, data_root)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8765), log_level="info")


if __name__ == "__main__":
    main()
