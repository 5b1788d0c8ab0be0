"""Command-line entry point: ``labelalbedo synth|train|eval|infer|compare``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command that
writes an output directory also writes ``resolved_config.json`` there with
the effective settings (defaults < ``--config`` file < flags).
"""

import json
import logging
from collections import Counter
from pathlib import Path

import click
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError as PydanticValidationError

from . import __version__
from .colorspace import load_png, save_png
from .errors import CheckpointError, DatasetError, TrainingAborted, ValidationError

DATA_ENV = "LABELALBEDO_DATA"
RESOLVED_CONFIG_NAME = "resolved_config.json"
GRID_ROWS = 7

log = logging.getLogger("labelalbedo")


class RunConfig(BaseModel):
    """Flat settings file schema; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    labels: int = 30
    renders_per_label: int = 20
    seed: int = 0
    size: int = 64
    split_ratio: float = 0.8
    roughness_threshold: float = 0.5
    workers: int = 1

    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 2e-4
    lambda_adv: float = 1.0
    lambda_rec: float = 100.0
    checkpoint_interval: int = 5
    beta1: float = 0.5
    beta2: float = 0.999
    augment: bool = True
    base_channels: int = 32
    disc_base_channels: int = 32
    disc_layers: int = 3


SYNTH_KEYS = ("labels", "renders_per_label", "seed", "size", "split_ratio", "roughness_threshold", "workers")
TRAIN_KEYS = (
    "epochs", "batch_size", "learning_rate", "lambda_adv", "lambda_rec", "seed",
    "checkpoint_interval", "beta1", "beta2", "augment", "base_channels", "disc_base_channels", "disc_layers",
)


def resolve_config(config_path, overrides):
    data = {}
    if config_path is not None:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise click.BadParameter(f"cannot read config: {exc}", param_hint="--config")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise click.BadParameter("config must be a flat key-value mapping", param_hint="--config")
        data.update(loaded)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except PydanticValidationError as exc:
        raise click.BadParameter(str(exc), param_hint="--config")


def write_resolved(out_dir, cfg, keys, extra=None):
    payload = {k: getattr(cfg, k) for k in keys}
    payload.update(extra or {})
    path = Path(out_dir) / RESOLVED_CONFIG_NAME
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _runtime_errors(fn):
    """Map expected runtime failures to exit code 1 with a one-line message."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, DatasetError, CheckpointError, TrainingAborted, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Synthetic label albedo corpora and adversarial albedo extraction."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Flat YAML/JSON settings file."
)


@cli.command("synth")
@click.option("--labels", type=int, help="Number of labels [30].")
@click.option("--renders-per-label", type=int, help="Renders per label [20].")
@click.option("--seed", type=int, help="Master seed [0].")
@click.option("--size", type=int, help="Square image size in px [64].")
@click.option("--split-ratio", type=float, help="Train fraction of labels [0.8].")
@click.option("--roughness-threshold", type=float, help="Roughness sampling threshold [0.5].")
@click.option("--workers", type=int, help="Render processes [1].")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@config_option
@_runtime_errors
def synth(out_dir, config_path, **flags):
    """Generate a corpus and assign the label-level train/test split."""
    from .dataset import build_dataset

    cfg = resolve_config(config_path, flags)
    manifest = build_dataset(
        cfg.labels,
        cfg.renders_per_label,
        cfg.seed,
        out_dir,
        image_size=cfg.size,
        split_ratio=cfg.split_ratio,
        roughness_threshold=cfg.roughness_threshold,
        workers=cfg.workers,
    )
    write_resolved(out_dir, cfg, SYNTH_KEYS)
    label_split = {e.label_id: e.split for e in manifest.entries}
    counts = Counter(label_split.values())
    click.echo(
        f"{len(manifest.entries)} pairs, {counts['train']} train labels / {counts['test']} test labels"
    )


def _load_data(data):
    from .dataset import load_manifest

    if data is None:
        raise click.UsageError(f"--data is required (or set {DATA_ENV})")
    return load_manifest(data)


@cli.command("train")
@click.option("--data", envvar=DATA_ENV, type=click.Path(), help=f"Corpus directory [${DATA_ENV}].")
@click.option("--epochs", type=int)
@click.option("--seed", type=int)
@click.option("--lambda-rec", type=float, help="L1 reconstruction weight [100].")
@click.option("--lambda-adv", type=float, help="Adversarial weight [1].")
@click.option("--batch-size", type=int)
@click.option("--learning-rate", type=float)
@click.option("--checkpoint-interval", type=int)
@click.option("--base-channels", type=int)
@click.option("--augment/--no-augment", default=None, help="Channel-permutation and flip augmentation [on].")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--resume", is_flag=True, help="Continue from OUT/checkpoints/last.ckpt.")
@config_option
@_runtime_errors
def train_cmd(data, out_dir, resume, config_path, **flags):
    """Train the generator/discriminator pair on the corpus's train split."""
    from .gan import DiscriminatorConfig, GeneratorConfig, TrainConfig, train

    cfg = resolve_config(config_path, flags)
    manifest = _load_data(data)
    if manifest.image_size is None:
        raise ValidationError("training needs a generated corpus with a fixed image size")
    train_cfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        lambda_adv=cfg.lambda_adv,
        lambda_rec=cfg.lambda_rec,
        seed=cfg.seed,
        checkpoint_interval=cfg.checkpoint_interval,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        augment=cfg.augment,
    )
    gen_cfg = GeneratorConfig(image_size=manifest.image_size, base_channels=cfg.base_channels)
    disc_cfg = DiscriminatorConfig(base_channels=cfg.disc_base_channels, n_layers=cfg.disc_layers)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    write_resolved(out_dir, cfg, TRAIN_KEYS, {"data": str(Path(data).resolve())})
    bundle = train(manifest, train_cfg, out_dir, gen_cfg, disc_cfg, resume=resume)
    if bundle.history:
        last = bundle.history[-1]
        click.echo(
            f"epoch {last['epoch']}: d_loss={last['d_loss']:.4f} "
            f"g_adv={last['g_adv']:.4f} rec={last['rec']:.4f}"
        )
    else:
        click.echo("no epochs run")


@cli.command("eval")
@click.option("--data", envvar=DATA_ENV, type=click.Path(), help=f"Corpus directory [${DATA_ENV}].")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--grid", type=click.Path(dir_okay=False), help="Triptych PNG of the first 7 pairs.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Report directory [grid's directory or .].")
@_runtime_errors
def eval_cmd(data, ckpt, split, grid, out_dir):
    """Score model and identity baseline; optionally export a triptych grid."""
    from .dataset import load_pair
    from .gan import infer, load_checkpoint
    from .metrics import evaluate, export_grid

    manifest = _load_data(data)
    bundle = load_checkpoint(ckpt)
    if out_dir is None:
        out_dir = Path(grid).parent if grid else Path(".")
    model, identity = evaluate(bundle, manifest, split, out_dir)
    click.echo(
        f"{split}: {len(model.per_pair)} pairs  model L1={model.mean('l1'):.4f}  "
        f"identity L1={identity.mean('l1'):.4f}  model PSNR={model.mean('psnr_db'):.2f} dB  "
        f"model SSIM={model.mean('ssim'):.4f}"
    )
    if model.failures:
        click.echo(f"{len(model.failures)} pair(s) failed; see report", err=True)
    if grid:
        rows = []
        for e in manifest.entries_for(split)[:GRID_ROWS]:
            lit, albedo = load_pair(manifest, e)
            rows.append((lit, infer(bundle, lit), albedo))
        export_grid(rows, grid, ["Input", "Ours", "Ground truth"])


@cli.command("infer")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
@_runtime_errors
def infer_cmd(ckpt, input_path, output_path):
    """Albedo for one image; output is resampled back to the input size."""
    from .gan import infer, load_checkpoint, resize_image

    bundle = load_checkpoint(ckpt)
    try:
        image = load_png(input_path)
    except Exception as exc:  # noqa: BLE001 - Pillow raises several types on bad files
        raise DatasetError(f"cannot read {input_path}: {exc}") from exc
    pred = resize_image(infer(bundle, image), *image.shape[:2])
    save_png(output_path, pred)


@cli.command("compare")
@click.option("--inputs", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ours", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--theirs", type=click.Path(exists=True, file_okay=False), help="External method's predictions.")
@click.option("--gt", type=click.Path(exists=True, file_okay=False), help="Ground-truth albedo.")
@click.option("--grid", required=True, type=click.Path(dir_okay=False))
@_runtime_errors
def compare(inputs, ours, theirs, gt, grid):
    """Side-by-side grid over same-named images.

    Column order is Input, Theirs, Ours, Ground truth when --gt is given,
    else Input, Ours, Theirs. Every tile is resampled to its row's input size.
    """
    from .dataset import match_stems
    from .gan import resize_image
    from .metrics import export_grid

    if gt is not None:
        roles = [("Input", inputs), ("Theirs", theirs), ("Ours", ours), ("Ground truth", gt)]
    else:
        roles = [("Input", inputs), ("Ours", ours), ("Theirs", theirs)]
    roles = [(name, d) for name, d in roles if d is not None]
    stems, files = match_stems(dict(roles))
    rows = []
    for stem in stems:
        base = load_png(files["Input"][stem])
        h, w = base.shape[:2]
        if rows and (h, w) != rows[0][0].shape[:2]:
            h, w = rows[0][0].shape[:2]
        rows.append([resize_image(load_png(files[name][stem]), h, w) for name, _ in roles])
    export_grid(rows, grid, [name for name, _ in roles])
    click.echo(f"{len(rows)} rows x {len(roles)} columns -> {grid}")


def main(argv=None):
    cli.main(args=argv, prog_name="labelalbedo")


if __name__ == "__main__":
    main()
