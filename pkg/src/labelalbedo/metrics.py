"""L1 / PSNR / SSIM, evaluation reports and comparison grids."""

import json
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image, ImageDraw, ImageFont

from .colorspace import to_uint8
from .errors import ValidationError

log = logging.getLogger(__name__)

PSNR_IDENTICAL_DB = 99.0
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

GRID_GUTTER = 4
GRID_MARGIN = 4
GRID_TITLE_HEIGHT = 16


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}", "b")
    return a, b


def l1_error(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr_from_mse(mse):
    if mse == 0:
        return PSNR_IDENTICAL_DB
    return -10.0 * math.log10(mse)


def psnr(a, b):
    """PSNR in dB for [0, 1] images; identical inputs give 99.0."""
    a, b = _pair(a, b)
    return psnr_from_mse(float(np.mean((a - b) ** 2)))


def _ssim_channel(x, y):
    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    vx = (wx**2).mean(axis=(-1, -2)) - mx**2
    vy = (wy**2).mean(axis=(-1, -2)) - my**2
    cov = (wx * wy).mean(axis=(-1, -2)) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)
    return (num / den).mean()


def ssim(a, b):
    """Mean SSIM over every 8x8 window (stride 1) and channel.

    Window statistics are uniform-weighted population moments.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValidationError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}", "a")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]))


@dataclass
class MetricReport:
    baseline: str
    split: str
    per_pair: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def aggregates(self):
        out = {}
        ordered = sorted(self.per_pair, key=lambda p: p["pair_id"])
        for key in ("l1", "psnr_db", "ssim"):
            vals = [p[key] for p in ordered]
            if not vals:
                continue
            out[key] = {
                "mean": float(np.mean(vals)),
                "median": float(statistics.median(vals)),
                "std": float(np.std(vals)),
            }
        return out

    def mean(self, key="l1"):
        return self.aggregates[key]["mean"]

    def to_dict(self):
        return {
            "baseline": self.baseline,
            "split": self.split,
            "count": len(self.per_pair),
            "aggregates": self.aggregates,
            "per_pair": sorted(self.per_pair, key=lambda p: p["pair_id"]),
            "failures": sorted(self.failures, key=lambda f: f["pair_id"]),
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")


def score(pair_id, prediction, target):
    return {
        "pair_id": pair_id,
        "l1": l1_error(prediction, target),
        "psnr_db": psnr(prediction, target),
        "ssim": ssim(prediction, target),
    }


def evaluate(bundle, manifest, split="test", out_dir=None):
    """Model and identity-baseline reports over one split.

    Predictions are compared at the albedo's native size (resampled back if
    the image differs from the model resolution). Per-pair failures are
    recorded and skipped.
    """
    from .dataset import load_pair
    from .errors import CheckpointError
    from .gan.training import infer, resize_image

    entries = manifest.entries_for(split)
    if not entries:
        raise ValidationError(f"split {split!r} is empty", "split")
    if manifest.image_size is not None and manifest.image_size != bundle.image_size:
        raise CheckpointError(
            f"checkpoint was trained at {bundle.image_size}px but the dataset is "
            f"{manifest.image_size}px"
        )
    model = MetricReport("model", split)
    identity = MetricReport("identity", split)
    for e in entries:
        try:
            lit, albedo = load_pair(manifest, e)
            pred = infer(bundle, lit)
            pred = resize_image(pred, *albedo.shape[:2])
        except Exception as exc:  # noqa: BLE001 - reported per pair, run continues
            log.warning("pair %s failed: %s", e.pair_id, exc)
            model.failures.append({"pair_id": e.pair_id, "error": str(exc)})
            continue
        model.per_pair.append(score(e.pair_id, pred, albedo))
        identity.per_pair.append(score(e.pair_id, lit, albedo))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model.write(out_dir / f"report_model_{split}.json")
        identity.write(out_dir / f"report_identity_{split}.json")
    return model, identity


def grid_size(n_rows, n_cols, tile_h, tile_w, titled=True):
    """(width, height) of an ``export_grid`` image.

    width  = 2*margin + n_cols*tile_w + (n_cols - 1)*gutter
    height = 2*margin + [title band] + n_rows*tile_h + (n_rows - 1)*gutter
    with margin = gutter = 4 px and a 16 px title band when titles are given.
    """
    width = 2 * GRID_MARGIN + n_cols * tile_w + (n_cols - 1) * GRID_GUTTER
    height = (
        2 * GRID_MARGIN
        + (GRID_TITLE_HEIGHT if titled else 0)
        + n_rows * tile_h
        + (n_rows - 1) * GRID_GUTTER
    )
    return width, height


def export_grid(rows, out_path, column_titles=None):
    """Tile rows of linear-RGB images into one PNG on a white background."""
    rows = [list(r) for r in rows]
    if not rows:
        raise ValidationError("export_grid needs at least one row", "rows")
    n_cols = len(rows[0])
    tile_shape = np.asarray(rows[0][0]).shape
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise ValidationError(f"row {i} has {len(row)} images, expected {n_cols}", "rows")
        for img in row:
            if np.asarray(img).shape != tile_shape:
                raise ValidationError(
                    f"row {i}: image of shape {np.asarray(img).shape} differs from {tile_shape}", "rows"
                )
    if column_titles is not None and len(column_titles) != n_cols:
        raise ValidationError("one title per column required", "column_titles")
    h, w = tile_shape[:2]
    titled = column_titles is not None
    width, height = grid_size(len(rows), n_cols, h, w, titled)
    canvas = Image.new("RGB", (width, height), (255, 255, 255))
    top = GRID_MARGIN + (GRID_TITLE_HEIGHT if titled else 0)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            x = GRID_MARGIN + c * (w + GRID_GUTTER)
            y = top + r * (h + GRID_GUTTER)
            canvas.paste(Image.fromarray(to_uint8(img), mode="RGB"), (x, y))
    if titled:
        draw = ImageDraw.Draw(canvas)
        font = ImageFont.load_default()
        for c, title in enumerate(column_titles):
            x0 = GRID_MARGIN + c * (w + GRID_GUTTER)
            left, _, right, _ = draw.textbbox((0, 0), title, font=font)
            x = x0 + max(0, (w - (right - left)) // 2)
            draw.text((x, GRID_MARGIN), title, fill=(0, 0, 0), font=font)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(out_path, format="PNG")
    return out_path
