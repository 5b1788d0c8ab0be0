import numpy as np
import torch
import torch.nn.functional as F

LOG_FLOOR = -30.0


def _as_logits(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def adversarial_losses(real_logits, fake_logits):
    """Discriminator BCE (real -> 1, fake -> 0) and non-saturating generator loss.

    ``d_loss = -mean(log s(real)) - mean(log(1 - s(fake)))``
    ``g_adv  = -mean(log s(fake))``

    Logs are floored at -30. Accepts tensors (gradients flow) or array-likes.
    """
    real, fake = _as_logits(real_logits), _as_logits(fake_logits)
    if torch.isnan(real).any() or torch.isnan(fake).any():
        raise ValueError("NaN in discriminator logits")
    log_real = F.logsigmoid(real).clamp(min=LOG_FLOOR)
    log_not_fake = F.logsigmoid(-fake).clamp(min=LOG_FLOOR)
    log_fake = F.logsigmoid(fake).clamp(min=LOG_FLOOR)
    d_loss = -log_real.mean() - log_not_fake.mean()
    g_adv = -log_fake.mean()
    return d_loss, g_adv


def reconstruction_loss(pred, target):
    return (pred - target).abs().mean()
