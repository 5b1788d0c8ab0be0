"""On-disk corpora of (lit, albedo) pairs.

Layout::

    out_dir/lit/<pair_id>.png
    out_dir/albedo/<pair_id>.png
    out_dir/manifest.json

PNGs are 8-bit sRGB. The manifest is written last and atomically, so a
directory without ``manifest.json`` is an incomplete build. Paths inside the
manifest are relative to its directory for generated corpora and absolute
for imported ones.
"""

import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import seeding
from .colorspace import load_png, save_png
from .errors import DatasetError, ValidationError
from .label_synth import sample_label_batch
from .light_sim import make_environment, render_pair

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

# environment pool composition: (class, count)
ENV_POOL_LAYOUT = (("bright", 20), ("medium", 20), ("dim", 10))
DEFAULT_SPLIT_RATIO = 0.8
DEFAULT_ROUGHNESS_THRESHOLD = 0.5


class EmptyTestSplitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    pair_id: str
    label_id: str
    lit_path: str
    albedo_path: str
    split: str
    provenance: dict

    def to_dict(self):
        return {
            "pair_id": self.pair_id,
            "label_id": self.label_id,
            "lit_path": self.lit_path,
            "albedo_path": self.albedo_path,
            "split": self.split,
            "provenance": self.provenance,
        }


@dataclass
class DatasetManifest:
    master_seed: int
    entries: list
    split_ratio: float = DEFAULT_SPLIT_RATIO
    name: str = "labelalbedo-synthetic"
    image_size: int | None = None
    environments: list = field(default_factory=list)
    version: int = MANIFEST_VERSION
    root: Path | None = field(default=None, compare=False)

    @property
    def label_ids(self):
        return sorted({e.label_id for e in self.entries})

    def entries_for(self, split):
        if split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {split!r}", "split")
        return [e for e in self.entries if e.split == split]

    def resolve(self, rel):
        p = Path(rel)
        if p.is_absolute() or self.root is None:
            return p
        return self.root / p

    def to_dict(self):
        return {
            "version": self.version,
            "name": self.name,
            "master_seed": self.master_seed,
            "split_ratio": self.split_ratio,
            "image_size": self.image_size,
            "environments": self.environments,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d, root=None):
        if d.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {d.get('version')!r}")
        return cls(
            master_seed=d["master_seed"],
            entries=[ManifestEntry(**e) for e in d["entries"]],
            split_ratio=d["split_ratio"],
            name=d["name"],
            image_size=d["image_size"],
            environments=d["environments"],
            version=d["version"],
            root=root,
        )

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def validate(self):
        ids = [e.pair_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise DatasetError("duplicate pair_id in manifest")
        label_split = {}
        for e in self.entries:
            if label_split.setdefault(e.label_id, e.split) != e.split:
                raise DatasetError(f"label {e.label_id} appears in both splits")
        return self


@dataclass(frozen=True)
class SplitAssignment:
    train_labels: frozenset
    test_labels: frozenset


def save_manifest(manifest, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest.dumps(), encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(path, check_files=True):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no manifest at {path} (missing or incomplete corpus)")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"unreadable manifest {path}: {exc}") from exc
    manifest = DatasetManifest.from_dict(data, root=path.parent).validate()
    if check_files:
        for e in manifest.entries:
            for p in (e.lit_path, e.albedo_path):
                if not manifest.resolve(p).exists():
                    raise DatasetError(f"pair {e.pair_id}: missing file {manifest.resolve(p)}")
    return manifest


def environment_pool(master_seed):
    pool = []
    for cls, count in ENV_POOL_LAYOUT:
        for _ in range(count):
            k = len(pool)
            seed = seeding.mix_seed("env-pool", master_seed, k)
            pool.append(make_environment(seed, cls, env_id=f"env-{k:02d}-{cls}"))
    return pool


def _split_order_key(master_seed, label_id):
    return (seeding.mix_seed("split", master_seed, label_id), label_id)


def assign_split(manifest, ratio=DEFAULT_SPLIT_RATIO):
    """Label-level split: hash-order the labels, first ceil(ratio * n) train."""
    if not isinstance(ratio, (int, float)) or not 0.0 < ratio < 1.0:
        raise ValidationError(f"ratio must be in (0, 1), got {ratio!r}", "ratio")
    labels = manifest.label_ids
    if not labels:
        raise ValidationError("manifest has no entries", "manifest")
    ordered = sorted(labels, key=lambda lid: _split_order_key(manifest.master_seed, lid))
    n_train = math.ceil(ratio * len(ordered))
    train, test = frozenset(ordered[:n_train]), frozenset(ordered[n_train:])
    if not test:
        warnings.warn(
            f"split ratio {ratio} leaves no test labels out of {len(ordered)}",
            EmptyTestSplitWarning,
            stacklevel=2,
        )
    return SplitAssignment(train, test)


def apply_split(manifest, assignment, ratio):
    entries = [
        replace(e, split="train" if e.label_id in assignment.train_labels else "test")
        for e in manifest.entries
    ]
    return replace(manifest, entries=entries, split_ratio=ratio)


def _render_job(job):
    label, pool, render_seed, roughness_threshold, pair_id, out_dir = job
    pair = render_pair(label, pool, render_seed, roughness_threshold)
    lit_rel = f"lit/{pair_id}.png"
    alb_rel = f"albedo/{pair_id}.png"
    for rel, img in ((lit_rel, pair.lit), (alb_rel, pair.albedo)):
        target = Path(out_dir) / rel
        try:
            save_png(target, img)
        except OSError as exc:
            raise DatasetError(f"failed writing {target}: {exc}") from exc
    spec = label[0]
    prov = pair.metadata()
    prov.update(external=False, label_seed=spec.seed)
    return ManifestEntry(pair_id, pair.label_id, lit_rel, alb_rel, "train", prov)


def build_dataset(
    n_labels,
    renders_per_label,
    master_seed,
    out_dir,
    image_size=64,
    split_ratio=DEFAULT_SPLIT_RATIO,
    roughness_threshold=DEFAULT_ROUGHNESS_THRESHOLD,
    workers=1,
):
    """Generate labels, render every pair, write PNGs and the manifest."""
    for name, v in (("n_labels", n_labels), ("renders_per_label", renders_per_label)):
        if not isinstance(v, int) or v < 1:
            raise ValidationError(f"{name} must be a positive integer, got {v!r}", name)
    out_dir = Path(out_dir)
    try:
        (out_dir / "lit").mkdir(parents=True, exist_ok=True)
        (out_dir / "albedo").mkdir(parents=True, exist_ok=True)
        (out_dir / MANIFEST_NAME).unlink(missing_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot prepare output directory {out_dir}: {exc}") from exc

    labels = sample_label_batch(master_seed, n_labels, image_size, image_size)
    pool = environment_pool(master_seed)
    pad = max(3, len(str(renders_per_label - 1)))
    jobs = []
    for li, label in enumerate(labels):
        for r in range(renders_per_label):
            seed = seeding.mix_seed("render-seed", master_seed, li, r)
            pair_id = f"{label[0].label_id}-{str(r).zfill(pad)}"
            jobs.append((label, pool, seed, roughness_threshold, pair_id, str(out_dir)))

    log.info("rendering %d pairs into %s", len(jobs), out_dir)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            entries = list(ex.map(_render_job, jobs, chunksize=16))
    else:
        entries = [_render_job(j) for j in jobs]

    manifest = DatasetManifest(
        master_seed=master_seed,
        entries=entries,
        split_ratio=split_ratio,
        image_size=image_size,
        environments=[env.to_dict() for env in pool],
        root=out_dir,
    )
    manifest = apply_split(manifest, assign_split(manifest, split_ratio), split_ratio)
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def load_pair(manifest, entry):
    try:
        lit = load_png(manifest.resolve(entry.lit_path))
        albedo = load_png(manifest.resolve(entry.albedo_path))
    except (OSError, ValueError) as exc:
        raise DatasetError(f"pair {entry.pair_id}: cannot read image ({exc})") from exc
    if lit.shape != albedo.shape:
        raise DatasetError(
            f"pair {entry.pair_id}: lit {lit.shape} and albedo {albedo.shape} differ in size"
        )
    return lit, albedo


def load_pairs(manifest, split, shuffle_seed=None):
    """Yield ``(lit, albedo, entry)`` in manifest order, or shuffled by seed."""
    entries = manifest.entries_for(split)
    if shuffle_seed is not None:
        order = seeding.rng("shuffle", shuffle_seed).permutation(len(entries))
        entries = [entries[i] for i in order]
    for e in entries:
        lit, albedo = load_pair(manifest, e)
        yield lit, albedo, e


def load_split_arrays(manifest, split):
    """Whole split stacked as float32 ``(N, H, W, 3)`` arrays plus entries."""
    lits, albedos, entries = [], [], []
    for lit, albedo, e in load_pairs(manifest, split):
        lits.append(lit.astype(np.float32))
        albedos.append(albedo.astype(np.float32))
        entries.append(e)
    if not entries:
        return np.zeros((0, 0, 0, 3), np.float32), np.zeros((0, 0, 0, 3), np.float32), []
    return np.stack(lits), np.stack(albedos), entries


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"not a directory: {directory}")
    return {
        p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES
    }


def match_stems(named_dirs):
    """Match image files across directories by filename stem.

    ``named_dirs`` maps a role name to a directory. Returns the sorted common
    stems and a per-role file map; raises listing the first 10 mismatches.
    """
    files = {role: list_images(d) for role, d in named_dirs.items()}
    all_stems = set().union(*(set(f) for f in files.values()))
    mismatches = []
    for stem in sorted(all_stems):
        missing = [role for role, f in files.items() if stem not in f]
        if missing:
            mismatches.append(f"{stem} (missing in {', '.join(missing)})")
    if mismatches:
        shown = "; ".join(mismatches[:10])
        raise DatasetError(f"{len(mismatches)} unmatched file name(s): {shown}")
    if not all_stems:
        raise DatasetError("no images found")
    return sorted(all_stems), files


def import_external(lit_dir, albedo_dir, name):
    """Manifest over a foreign (lit, albedo) directory pair; every entry is test."""
    stems, files = match_stems({"lit": lit_dir, "albedo": albedo_dir})
    entries = [
        ManifestEntry(
            pair_id=stem,
            label_id=stem,
            lit_path=str(files["lit"][stem].resolve()),
            albedo_path=str(files["albedo"][stem].resolve()),
            split="test",
            provenance={"external": True, "source": name},
        )
        for stem in stems
    ]
    return DatasetManifest(master_seed=0, entries=entries, split_ratio=0.0, name=name)
