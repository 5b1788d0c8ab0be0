"""Procedural flat-colour "brand label" images.

Labels are composited from a solid background and a handful of flat
primitives. Colours come from a per-label palette sampled uniformly in HSV
(the HSV triple is read as sRGB-encoded and decoded to linear). The outermost
one-pixel ring of every label is left as background so any drawn primitive
is guaranteed to add a second colour.
"""

import colorsys
from dataclasses import dataclass

import numpy as np

from . import seeding
from .colorspace import srgb_decode
from .errors import ValidationError

PRIMITIVES = ("rectangle", "ellipse", "bars", "frame")

SATURATION_RANGE = (0.1, 1.0)
VALUE_RANGE = (0.15, 1.0)


def _is_pow2(n):
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class LabelSpec:
    label_id: str
    seed: int
    width: int = 64
    height: int = 64
    palette_size: int = 4
    element_count: int = 12

    def validate(self):
        if not isinstance(self.label_id, str) or not self.label_id:
            raise ValidationError("label_id must be a non-empty string", "label_id")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= seeding.U64_MAX:
            raise ValidationError("seed must be a 64-bit unsigned integer", "seed")
        for name in ("width", "height"):
            v = getattr(self, name)
            if not isinstance(v, int) or not _is_pow2(v) or not 32 <= v <= 512:
                raise ValidationError(f"{name} must be a power of two in [32, 512], got {v!r}", name)
        if not isinstance(self.palette_size, int) or not 2 <= self.palette_size <= 8:
            raise ValidationError(
                f"palette_size must be in [2, 8], got {self.palette_size!r}", "palette_size"
            )
        if not isinstance(self.element_count, int) or not 4 <= self.element_count <= 40:
            raise ValidationError(
                f"element_count must be in [4, 40], got {self.element_count!r}", "element_count"
            )
        return self


def sample_hsv_color(rng):
    """One colour, uniform in HSV, returned as (hsv, linear_rgb)."""
    h = rng.uniform(0.0, 1.0)
    s = rng.uniform(*SATURATION_RANGE)
    v = rng.uniform(*VALUE_RANGE)
    rgb = srgb_decode(np.array(colorsys.hsv_to_rgb(h, s, v)))
    return (h, s, v), rgb


def _palette(rng, size):
    hsv, colors = [], []
    while len(colors) < size:
        c_hsv, c = sample_hsv_color(rng)
        # a duplicate would break the distinct-colour guarantee
        if any(np.array_equal(c, other) for other in colors):
            continue
        hsv.append(c_hsv)
        colors.append(c)
    return hsv, np.stack(colors)


def _draw_rectangle(canvas, color, rng, inner):
    x0, y0, x1, y1 = inner
    w, h = x1 - x0, y1 - y0
    rw = int(rng.integers(2, max(3, int(0.6 * w)) + 1))
    rh = int(rng.integers(2, max(3, int(0.6 * h)) + 1))
    rw, rh = min(rw, w), min(rh, h)
    px = int(rng.integers(x0, x1 - rw + 1))
    py = int(rng.integers(y0, y1 - rh + 1))
    canvas[py:py + rh, px:px + rw] = color


def _draw_ellipse(canvas, color, rng, inner):
    x0, y0, x1, y1 = inner
    w, h = x1 - x0, y1 - y0
    cx = int(rng.integers(x0, x1))
    cy = int(rng.integers(y0, y1))
    rx = rng.uniform(1.0, max(1.5, 0.3 * w))
    ry = rng.uniform(1.0, max(1.5, 0.3 * h))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    # centre pixel is always inside, so the primitive is never empty
    canvas[y0:y1, x0:x1][mask] = color


def _draw_bars(canvas, color, rng, inner):
    """A cluster of horizontal bars standing in for lines of text."""
    x0, y0, x1, y1 = inner
    w, h = x1 - x0, y1 - y0
    n_lines = int(rng.integers(1, 5))
    thick = int(rng.integers(1, max(2, h // 24) + 1))
    gap = int(rng.integers(1, max(2, h // 24) + 1))
    block_h = min(h, n_lines * thick + (n_lines - 1) * gap)
    top = int(rng.integers(y0, y1 - block_h + 1))
    left = int(rng.integers(x0, x0 + max(1, w // 2)))
    max_len = x1 - left
    for i in range(n_lines):
        y = top + i * (thick + gap)
        if y >= y1:
            break
        length = int(rng.integers(max(1, max_len // 4), max_len + 1))
        canvas[y:min(y + thick, y1), left:left + length] = color


def _draw_frame(canvas, color, rng, inner):
    x0, y0, x1, y1 = inner
    w, h = x1 - x0, y1 - y0
    inset = int(rng.integers(0, max(1, min(w, h) // 8) + 1))
    thick = int(rng.integers(1, max(2, min(w, h) // 16) + 1))
    a, b = x0 + inset, x1 - inset
    c, d = y0 + inset, y1 - inset
    if b - a < 2 or d - c < 2:
        a, b, c, d = x0, x1, y0, y1
    canvas[c:c + thick, a:b] = color
    canvas[d - thick:d, a:b] = color
    canvas[c:d, a:a + thick] = color
    canvas[c:d, b - thick:b] = color


_DRAW = {
    "rectangle": _draw_rectangle,
    "ellipse": _draw_ellipse,
    "bars": _draw_bars,
    "frame": _draw_frame,
}


def compose_label(spec, element_count=None):
    """Composite a label without range validation.

    ``element_count`` overrides the LabelSpec value (``0`` yields the bare background);
    ``synth_label`` is the validated entry point.
    """
    n = spec.element_count if element_count is None else element_count
    rng = np.random.default_rng(spec.seed)
    _, palette = _palette(rng, spec.palette_size)
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    canvas[:] = palette[0]
    inner = (1, 1, spec.width - 1, spec.height - 1)
    for _ in range(n):
        kind = PRIMITIVES[int(rng.integers(len(PRIMITIVES)))]
        color = palette[int(rng.integers(1, spec.palette_size))]
        _DRAW[kind](canvas, color, rng, inner)
    return canvas


def background_hue(spec):
    """Hue in [0, 1) of the label's background colour."""
    rng = np.random.default_rng(spec.seed)
    hsv, _ = _palette(rng, spec.palette_size)
    return hsv[0][0]


def synth_label(spec):
    spec.validate()
    return compose_label(spec)


def label_seed(master_seed, index):
    return seeding.mix_seed("label", master_seed, index)


def sample_label_batch(master_seed, count, width=64, height=64):
    """``count`` labels derived from ``master_seed``, in index order.

    Label ``i`` gets ``seed = mix_seed("label", master_seed, i)``; its palette
    size and element count are drawn from that seed.
    """
    if not isinstance(count, int) or count < 1:
        raise ValidationError(f"count must be a positive integer, got {count!r}", "count")
    pad = max(4, len(str(count - 1)))
    out = []
    for i in range(count):
        seed = label_seed(master_seed, i)
        params = seeding.rng("label-params", seed)
        spec = LabelSpec(
            label_id=str(i).zfill(pad),
            seed=seed,
            width=width,
            height=height,
            palette_size=int(params.integers(2, 9)),
            element_count=int(params.integers(4, 41)),
        )
        out.append((spec, synth_label(spec)))
    return out
