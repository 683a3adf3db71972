"""Command-line entry points covering the whole lifecycle.

Exit codes: 0 success, 2 usage error (bad flags, missing required inputs),
1 runtime failure. ``INKALIGN_CHECKPOINT_DIR`` supplies a default directory
to search for the newest checkpoint when ``--checkpoint`` is omitted.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import colorspace
from .data import ingest as ingest_op
from .data import load_image, load_manifest, save_image, save_manifest, save_plane
from .errors import InkalignError
from .hints import load_hints
from .imagetypes import BlendWeight, ImagePlane
from .pipeline import (
    InferenceRequest,
    TrainConfig,
    colorize as colorize_op,
    evaluate as evaluate_op,
    gradcheck as gradcheck_op,
    load_inference_model,
    train as train_op,
)
from .priors import HintSplatRoughColor, IdentityShading, external_prior_adapter

CHECKPOINT_DIR_ENV = "INKALIGN_CHECKPOINT_DIR"


@dataclass
class CommandResult:
    summary: str
    artifacts: list[Path] = field(default_factory=list)


def _emit(result: CommandResult) -> None:
    click.echo(result.summary)
    for path in result.artifacts:
        click.echo(f"  wrote {path}")


def _runtime_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (InkalignError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _resolve_checkpoint(checkpoint: str | None) -> Path:
    if checkpoint:
        return Path(checkpoint)
    env_dir = os.environ.get(CHECKPOINT_DIR_ENV)
    if env_dir:
        candidates = sorted(Path(env_dir).glob("*.ckpt"))
        if candidates:
            return candidates[-1]
        raise click.UsageError(f"no checkpoints found in {CHECKPOINT_DIR_ENV}={env_dir}")
    raise click.UsageError(
        f"--checkpoint is required (or set {CHECKPOINT_DIR_ENV} to a checkpoint directory)"
    )


def _load_page(path: Path) -> ImagePlane:
    stack = load_image(path)
    return colorspace.to_grayscale(stack)


def _build_priors(shading_endpoint: str | None, rough_endpoint: str | None):
    shading = (
        external_prior_adapter(shading_endpoint, "shading")
        if shading_endpoint
        else IdentityShading()
    )
    rough = (
        external_prior_adapter(rough_endpoint, "rough_color")
        if rough_endpoint
        else HintSplatRoughColor()
    )
    return shading, rough


@click.group()
@click.version_option()
def main() -> None:
    """User-guided manga colorization toolkit."""


@main.command()
@click.argument("root", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--manifest-out", type=click.Path(path_type=Path), default=None,
              help="Manifest destination (default: <root>.manifest.json beside the root).")
@click.option("--eval-fraction", type=click.FloatRange(0.0, 0.9), default=0.0)
@click.option("--seed", type=int, default=0)
@_runtime_guard
def ingest(root: Path, manifest_out: Path | None, eval_fraction: float, seed: int) -> None:
    """Scan a folder of color pages into a dataset manifest."""
    manifest = ingest_op(root, eval_fraction=eval_fraction, seed=seed)
    out = manifest_out or root.parent / f"{root.name}.manifest.json"
    save_manifest(manifest, out)
    _emit(CommandResult(
        summary=(
            f"ingested {len(manifest.entries)} images "
            f"({len(manifest.train_ids)} train / {len(manifest.eval_ids)} eval)"
        ),
        artifacts=[out],
    ))


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--workdir", type=click.Path(path_type=Path), default=Path("checkpoints"))
@click.option("--resume", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None)
@click.option("--log", "log_path", type=click.Path(path_type=Path), default=None)
@_runtime_guard
def train(config_path: Path, manifest_path: Path, workdir: Path,
          resume: Path | None, log_path: Path | None) -> None:
    """Run the training loop from a YAML config."""
    config = TrainConfig.load(config_path)
    manifest = load_manifest(manifest_path)
    log_path = log_path or workdir / "train.jsonl"
    state = train_op(config, manifest, workdir=workdir, resume_from=resume,
                     log_path=log_path)
    ckpts = sorted(workdir.glob("*.ckpt"))
    _emit(CommandResult(
        summary=f"trained to step {state.step}",
        artifacts=ckpts[-1:] + [log_path],
    ))


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--hints", "hints_path",
              type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--reference", "reference_path",
              type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--lambda-ab", type=click.FloatRange(0.0, 1.0), default=0.8,
              show_default=True)
@click.option("--deterministic/--sample", default=True)
@click.option("--seed", type=int, default=0)
@click.option("--save-stages", type=click.Path(path_type=Path), default=None,
              help="Also write x_g, x_col, and the raw generator output here.")
@click.option("--shading-endpoint", default=None,
              help="HTTP endpoint of an external shading prior.")
@click.option("--rough-endpoint", default=None,
              help="HTTP endpoint of an external rough-color prior.")
@_runtime_guard
def colorize(image: Path, checkpoint: Path | None, out: Path, hints_path: Path | None,
             reference_path: Path | None, lambda_ab: float, deterministic: bool,
             seed: int, save_stages: Path | None,
             shading_endpoint: str | None, rough_endpoint: str | None) -> None:
    """Colorize one page through the full inference pipeline."""
    ckpt = _resolve_checkpoint(str(checkpoint) if checkpoint else None)
    model = load_inference_model(ckpt)
    request = InferenceRequest(
        page=_load_page(image),
        hints=load_hints(hints_path) if hints_path else None,
        reference=load_image(reference_path) if reference_path else None,
        lambda_ab=BlendWeight(lambda_ab),
        deterministic=deterministic,
        seed=seed,
    )
    shading, rough = _build_priors(shading_endpoint, rough_endpoint)
    result = colorize_op(request, shading, rough, model)
    save_image(result.y, out)
    artifacts = [out]
    if save_stages:
        save_stages.mkdir(parents=True, exist_ok=True)
        save_plane(result.x_g, save_stages / "x_g.png")
        save_image(result.x_col, save_stages / "x_col.png")
        save_image(result.y_hat, save_stages / "y_hat.png")
        artifacts += [save_stages / n for n in ("x_g.png", "x_col.png", "y_hat.png")]
    _emit(CommandResult(
        summary=f"colorized {image.name} at lambda_ab={lambda_ab}", artifacts=artifacts
    ))


@main.command()
@click.argument("y_hat_path", metavar="Y_HAT",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("x_col_path", metavar="X_COL",
                type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--lambda-ab", type=click.FloatRange(0.0, 1.0), required=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
@_runtime_guard
def blend(y_hat_path: Path, x_col_path: Path, lambda_ab: float, out: Path) -> None:
    """Blend two already-rendered images in CIELAB chroma."""
    y_hat = colorspace.rgb_to_lab(load_image(y_hat_path))
    x_col = colorspace.rgb_to_lab(load_image(x_col_path))
    blended = colorspace.blend_chroma(y_hat, x_col, BlendWeight(lambda_ab))
    save_image(colorspace.lab_to_rgb(blended), out)
    _emit(CommandResult(summary=f"blended at lambda_ab={lambda_ab}", artifacts=[out]))


@main.command(name="eval")
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--split", type=click.Choice(["eval", "train"]), default="eval")
@click.option("--resize-to", type=int, default=512)
@click.option("--crop-size", type=int, default=256)
@_runtime_guard
def eval_cmd(checkpoint: Path | None, manifest_path: Path, split: str,
             resize_to: int, crop_size: int) -> None:
    """Mean L1 and perceptual distance over a manifest split."""
    ckpt = _resolve_checkpoint(str(checkpoint) if checkpoint else None)
    model = load_inference_model(ckpt)
    manifest = load_manifest(manifest_path)
    from .pipeline import TrainConfig as _TC
    from .checkpoint import load_checkpoint as _lc

    deg = _TC.from_dict(_lc(ckpt)[0].config).degradation
    metrics = evaluate_op(model, manifest, deg, split=split,
                          resize_to=resize_to, crop_size=crop_size)
    _emit(CommandResult(
        summary=(
            f"{split} split ({metrics['count']} images): "
            f"mean L1 {metrics['mean_l1']:.5f}, "
            f"mean perceptual {metrics['mean_perceptual']:.5f}"
        )
    ))


@main.command()
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Train config whose generator geometry to check (default: tiny).")
@click.option("--tolerance", type=float, default=1e-3, show_default=True)
@_runtime_guard
def gradcheck(config_path: Path | None, tolerance: float) -> None:
    """Compare autograd gradient norms against central finite differences."""
    gen_cfg = TrainConfig.load(config_path).generator if config_path else None
    report = gradcheck_op(gen_cfg)
    click.echo(f"reconstruction grad norm: ad {report['rec_norm_ad']:.8g} "
               f"fd {report['rec_norm_fd']:.8g} (rel err {report['rec_rel_err']:.3g})")
    click.echo(f"adversarial grad norm:    ad {report['adv_norm_ad']:.8g} "
               f"fd {report['adv_norm_fd']:.8g} (rel err {report['adv_rel_err']:.3g})")
    click.echo(f"max relative error: {report['max_rel_err']:.3g}")
    if report["max_rel_err"] >= tolerance:
        raise click.ClickException(
            f"gradient check failed: {report['max_rel_err']:.3g} >= {tolerance:g}"
        )


@main.command()
@click.option("--checkpoint", type=click.Path(path_type=Path), default=None)
@click.option("--bind", default="127.0.0.1:8000", show_default=True,
              help="HOST:PORT to listen on.")
@click.option("--max-upload-mb", type=int, default=32, show_default=True)
@click.option("--session-ttl", type=float, default=3600.0, show_default=True,
              help="Idle seconds before a session expires.")
@_runtime_guard
def serve(checkpoint: Path | None, bind: str, max_upload_mb: int, session_ttl: float) -> None:
    """Run the HTTP inference service."""
    import uvicorn

    from .service import create_app

    ckpt = _resolve_checkpoint(str(checkpoint) if checkpoint else None)
    model = load_inference_model(ckpt)
    app = create_app(model, max_upload_bytes=max_upload_mb * 1024 * 1024,
                     session_ttl=session_ttl)
    try:
        host, port_s = bind.rsplit(":", 1)
        port = int(port_s)
    except ValueError as exc:
        raise click.UsageError(f"--bind expects HOST:PORT, got {bind!r}") from exc
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
