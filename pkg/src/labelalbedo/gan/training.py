"""Alternating discriminator / generator training, checkpoints and inference."""

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .. import seeding
from ..errors import CheckpointError, TrainingAborted, ValidationError
from .losses import adversarial_losses, reconstruction_loss
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    to_nchw,
    to_nhwc,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "labelalbedo-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_LOG_NAME = "losses.jsonl"


@dataclass
class TrainConfig:
    """Training hyper-parameters.

    Defaults: Adam with betas (0.5, 0.999), learning rate 2e-4, batch 4,
    L1 weight 100 and adversarial weight 1 (the pix2pix balance).
    ``lambda_rec=0`` trains on the adversarial objective alone. ``augment``
    applies a seeded channel permutation and flips to each training pair.
    """

    epochs: int = 30
    batch_size: int = 4
    learning_rate: float = 2e-4
    lambda_adv: float = 1.0
    lambda_rec: float = 100.0
    seed: int = 0
    checkpoint_interval: int = 5
    beta1: float = 0.5
    beta2: float = 0.999
    augment: bool = True

    def validate(self):
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ValidationError("epochs must be a non-negative integer", "epochs")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValidationError("batch_size must be a positive integer", "batch_size")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive", "learning_rate")
        if self.lambda_adv < 0 or self.lambda_rec < 0:
            raise ValidationError("loss weights must be non-negative", "lambda_adv")
        if self.lambda_adv + self.lambda_rec <= 0:
            raise ValidationError("lambda_adv + lambda_rec must be positive", "lambda_rec")
        if not isinstance(self.checkpoint_interval, int) or self.checkpoint_interval < 1:
            raise ValidationError("checkpoint_interval must be a positive integer", "checkpoint_interval")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValidationError("Adam betas must lie in [0, 1)", "beta1")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class PairBatch:
    lit: np.ndarray
    target_albedo: np.ndarray | None = None
    role: str = "real"

    def validate(self):
        if self.target_albedo is not None and np.shape(self.lit) != np.shape(self.target_albedo):
            raise ValidationError("lit and target_albedo batch shapes differ", "target_albedo")
        return self


@dataclass
class ModelBundle:
    generator: torch.nn.Module
    discriminator: torch.nn.Module
    gen_cfg: GeneratorConfig
    disc_cfg: DiscriminatorConfig
    train_cfg: TrainConfig
    g_opt: torch.optim.Optimizer
    d_opt: torch.optim.Optimizer
    epoch: int = 0
    history: list = field(default_factory=list)

    @property
    def image_size(self):
        return self.gen_cfg.image_size


def _adam(params, cfg):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))


def create_bundle(gen_cfg=None, disc_cfg=None, train_cfg=None):
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    train_cfg = (train_cfg or TrainConfig()).validate()
    g = build_generator(gen_cfg, seeding.mix_seed("generator", train_cfg.seed))
    d = build_discriminator(
        disc_cfg, seeding.mix_seed("discriminator", train_cfg.seed), image_size=gen_cfg.image_size
    )
    return ModelBundle(
        generator=g,
        discriminator=d,
        gen_cfg=gen_cfg,
        disc_cfg=disc_cfg,
        train_cfg=train_cfg,
        g_opt=_adam(g.parameters(), train_cfg),
        d_opt=_adam(d.parameters(), train_cfg),
    )


def _as_tensor_batch(x):
    return x if isinstance(x, torch.Tensor) and x.ndim == 4 and x.shape[1] == 3 else to_nchw(x)


def train_step(bundle, batch, train_cfg=None):
    """One discriminator step followed by one generator step.

    ``batch.lit`` and ``batch.target_albedo`` are channels-last. Returns the
    step's ``d_loss``, ``g_adv`` and ``rec`` as floats; the bundle's modules
    and optimizers are updated in place.
    """
    cfg = train_cfg or bundle.train_cfg
    batch.validate()
    if batch.target_albedo is None:
        raise ValidationError("training needs ground-truth albedo for real pairs", "target_albedo")
    lit = _as_tensor_batch(batch.lit)
    target = _as_tensor_batch(batch.target_albedo)
    g, d = bundle.generator, bundle.discriminator
    g.train()
    d.train()

    fake = g(lit)
    real_logits = d(lit, target)
    fake_logits = d(lit, fake.detach())
    d_loss, _ = adversarial_losses(real_logits, fake_logits)
    if not torch.isfinite(d_loss):
        raise TrainingAborted(f"non-finite discriminator loss at epoch {bundle.epoch}", bundle.history)
    bundle.d_opt.zero_grad(set_to_none=True)
    d_loss.backward()
    bundle.d_opt.step()

    fake_logits = d(lit, fake)
    _, g_adv = adversarial_losses(real_logits.detach(), fake_logits)
    rec = reconstruction_loss(fake, target)
    g_total = cfg.lambda_adv * g_adv + cfg.lambda_rec * rec
    if not torch.isfinite(g_total):
        raise TrainingAborted(f"non-finite generator loss at epoch {bundle.epoch}", bundle.history)
    bundle.g_opt.zero_grad(set_to_none=True)
    g_total.backward()
    bundle.g_opt.step()
    # D's grads from the G pass are stale; clear them so they never leak into a D step
    bundle.d_opt.zero_grad(set_to_none=True)
    return {"d_loss": d_loss.item(), "g_adv": g_adv.item(), "rec": rec.item()}


def epoch_order(seed, epoch, n):
    return seeding.rng("epoch-shuffle", seed, epoch).permutation(n)


# every (i, j) pair of flips is a mirror of the same scene; all proxies are symmetric
_PERMUTATIONS = np.array([[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]])


def augment_pairs(lit, albedo, generator):
    """Apply one random channel permutation and h/v flip per pair (NCHW).

    Shading and tonemapping act per channel, so permuting the channels of
    both images is an exact render under the permuted light.
    """
    n = lit.shape[0]
    perms = torch.from_numpy(_PERMUTATIONS[generator.integers(0, len(_PERMUTATIONS), n)])
    flips = generator.integers(0, 2, (n, 2))
    rows = torch.arange(n)[:, None]
    lit, albedo = lit[rows, perms], albedo[rows, perms]
    out_l, out_a = [], []
    for i in range(n):
        dims = [d for d, f in zip((1, 2), flips[i]) if f]
        out_l.append(lit[i].flip(dims) if dims else lit[i])
        out_a.append(albedo[i].flip(dims) if dims else albedo[i])
    return torch.stack(out_l), torch.stack(out_a)


def write_loss_log(path, history):
    lines = [json.dumps(rec, sort_keys=True) for rec in history]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_loss_log(path):
    text = Path(path).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def _split_arrays(train_split):
    from ..dataset import DatasetManifest, load_split_arrays

    if isinstance(train_split, DatasetManifest):
        lit, albedo, _ = load_split_arrays(train_split, "train")
        return lit, albedo
    lit, albedo = train_split
    return np.asarray(lit, dtype=np.float32), np.asarray(albedo, dtype=np.float32)


def train(train_split, train_cfg=None, out_dir=None, gen_cfg=None, disc_cfg=None, resume=False,
          progress=None):
    """Run the epoch loop; returns the final ``ModelBundle``.

    ``train_split`` is a manifest (its train split is used) or a pair of
    ``(N, H, W, 3)`` arrays. With ``out_dir`` set, checkpoints go to
    ``out_dir/checkpoints/`` every ``checkpoint_interval`` epochs (and at the
    last epoch) and per-epoch mean losses to ``out_dir/losses.jsonl``.
    ``resume=True`` continues from ``checkpoints/last.ckpt`` when present.
    """
    train_cfg = (train_cfg or TrainConfig()).validate()
    lit, albedo = _split_arrays(train_split)
    if len(lit) == 0:
        raise ValidationError("training split is empty", "train_split")
    if lit.shape != albedo.shape:
        raise ValidationError("lit and albedo arrays differ in shape", "train_split")
    if gen_cfg is None:
        gen_cfg = GeneratorConfig(image_size=int(lit.shape[1]))
    if lit.shape[1:3] != (gen_cfg.image_size, gen_cfg.image_size):
        raise ValidationError(
            f"images are {lit.shape[1]}x{lit.shape[2]}, generator expects {gen_cfg.image_size}", "image_size"
        )

    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last = ckpt_dir / "last.ckpt" if ckpt_dir is not None else None
    if resume and last is not None and last.exists():
        bundle = load_checkpoint(last)
        bundle.train_cfg.epochs = train_cfg.epochs
        log.info("resuming from %s at epoch %d", last, bundle.epoch)
        if bundle.epoch > train_cfg.epochs:
            raise CheckpointError(
                f"checkpoint is at epoch {bundle.epoch}, beyond the requested {train_cfg.epochs}"
            )
    else:
        bundle = create_bundle(gen_cfg, disc_cfg, train_cfg)

    cfg = bundle.train_cfg
    lit_t = torch.from_numpy(np.ascontiguousarray(lit)).permute(0, 3, 1, 2).contiguous()
    alb_t = torch.from_numpy(np.ascontiguousarray(albedo)).permute(0, 3, 1, 2).contiguous()
    n = len(lit_t)
    while bundle.epoch < cfg.epochs:
        order = torch.from_numpy(epoch_order(cfg.seed, bundle.epoch, n))
        aug_rng = seeding.rng("augment", cfg.seed, bundle.epoch)
        sums = {"d_loss": 0.0, "g_adv": 0.0, "rec": 0.0}
        steps = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch_lit, batch_alb = lit_t[idx], alb_t[idx]
            if cfg.augment:
                batch_lit, batch_alb = augment_pairs(batch_lit, batch_alb, aug_rng)
            losses = train_step(bundle, PairBatch(batch_lit, batch_alb), cfg)
            for k, v in losses.items():
                sums[k] += v
            steps += 1
        bundle.epoch += 1
        record = {"epoch": bundle.epoch, **{k: v / steps for k, v in sums.items()}}
        bundle.history.append(record)
        log.info("epoch %d  d=%.4f g_adv=%.4f rec=%.4f", bundle.epoch, record["d_loss"],
                 record["g_adv"], record["rec"])
        if progress is not None:
            progress(record)
        if out_dir is not None:
            write_loss_log(Path(out_dir) / LOSS_LOG_NAME, bundle.history)
            if bundle.epoch % cfg.checkpoint_interval == 0 or bundle.epoch == cfg.epochs:
                path = ckpt_dir / f"epoch_{bundle.epoch:04d}.ckpt"
                save_checkpoint(bundle, path)
                save_checkpoint(bundle, last)
    if out_dir is not None and not (Path(out_dir) / LOSS_LOG_NAME).exists():
        write_loss_log(Path(out_dir) / LOSS_LOG_NAME, bundle.history)
    return bundle


def resize_image(image, height, width):
    """Bilinear resampling with antialiasing (PyTorch ``interpolate``)."""
    img = np.asarray(image, dtype=np.float32)
    if img.shape[:2] == (height, width):
        return img
    t = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).unsqueeze(0)
    out = F.interpolate(t, size=(height, width), mode="bilinear", align_corners=False, antialias=True)
    return out[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()


def infer(bundle, image):
    """Albedo for one ``(H, W, 3)`` lit image at the model's resolution.

    Inputs of another size are resampled with ``resize_image`` first.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3 or not np.all(np.isfinite(img)):
        raise ValidationError(f"expected a finite (H, W, 3) image, got shape {img.shape}", "image")
    s = bundle.image_size
    img = resize_image(np.clip(img, 0.0, 1.0), s, s)
    g = bundle.generator
    g.eval()
    with torch.no_grad():
        out = g(to_nchw(img[None]))
    return to_nhwc(out)[0].numpy()


# -- checkpoints --------------------------------------------------------------
#
# A checkpoint is a zip archive holding ``meta.json`` (format tag, configs,
# epoch, loss history, optimizer hyper-parameters and a tensor index) and
# ``tensors.bin``: every tensor as little-endian float32, concatenated in
# index order. Index records are ``{"name", "shape", "offset"}`` with the
# offset in elements.

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _opt_tensors(prefix, opt):
    state = opt.state_dict()
    out = []
    for pid in sorted(state["state"]):
        for key in sorted(state["state"][pid]):
            out.append((f"{prefix}/{pid}/{key}", state["state"][pid][key]))
    return out, state["param_groups"]


def save_checkpoint(bundle, path):
    tensors = []
    for prefix, module in (("generator", bundle.generator), ("discriminator", bundle.discriminator)):
        for name, t in module.state_dict().items():
            tensors.append((f"{prefix}/{name}", t))
    g_state, g_groups = _opt_tensors("g_opt", bundle.g_opt)
    d_state, d_groups = _opt_tensors("d_opt", bundle.d_opt)
    tensors += g_state + d_state

    blob = io.BytesIO()
    index = []
    offset = 0
    for name, t in tensors:
        arr = np.asarray(torch.as_tensor(t).detach().cpu(), dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.write(arr.tobytes(order="C"))
        offset += arr.size
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "generator_config": bundle.gen_cfg.to_dict(),
        "discriminator_config": bundle.disc_cfg.to_dict(),
        "train_config": bundle.train_cfg.to_dict(),
        "epoch": bundle.epoch,
        "history": bundle.history,
        "optimizer_param_groups": {"g_opt": g_groups, "d_opt": d_groups},
        "tensors": index,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for arcname, data in (
            ("meta.json", json.dumps(meta, indent=1, sort_keys=True).encode()),
            ("tensors.bin", blob.getvalue()),
        ):
            info = zipfile.ZipInfo(arcname, date_time=_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, data)
    tmp.replace(path)
    return path


def _restore_opt(opt, prefix, groups, arrays):
    state = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        _, pid, key = name.split("/", 2)
        t = torch.from_numpy(arr.copy())
        state.setdefault(int(pid), {})[key] = t
    for g in groups:
        g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": state, "param_groups": groups})


def load_checkpoint(path):
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            raw = zf.read("tensors.bin")
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
    flat = np.frombuffer(raw, dtype="<f4")
    arrays = {}
    for rec in meta["tensors"]:
        count = int(math.prod(rec["shape"]))
        arrays[rec["name"]] = flat[rec["offset"]:rec["offset"] + count].reshape(rec["shape"])

    gen_cfg = GeneratorConfig(**meta["generator_config"])
    disc_cfg = DiscriminatorConfig(**meta["discriminator_config"])
    train_cfg = TrainConfig(**meta["train_config"])
    bundle = create_bundle(gen_cfg, disc_cfg, train_cfg)
    for prefix, module in (("generator", bundle.generator), ("discriminator", bundle.discriminator)):
        sd = {}
        for name, ref in module.state_dict().items():
            key = f"{prefix}/{name}"
            if key not in arrays:
                raise CheckpointError(f"{path}: missing tensor {key}")
            if tuple(arrays[key].shape) != tuple(ref.shape):
                raise CheckpointError(
                    f"{path}: tensor {key} has shape {arrays[key].shape}, config implies {tuple(ref.shape)}"
                )
            sd[name] = torch.from_numpy(arrays[key].astype(np.float32))
        module.load_state_dict(sd)
    groups = meta["optimizer_param_groups"]
    _restore_opt(bundle.g_opt, "g_opt", groups["g_opt"], arrays)
    _restore_opt(bundle.d_opt, "d_opt", groups["d_opt"], arrays)
    bundle.epoch = int(meta["epoch"])
    bundle.history = list(meta["history"])
    return bundle
