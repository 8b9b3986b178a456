"""
Training objective: cross-entropy plus the two overconfidence regularisers
(per-person excess probability and household group-size overestimation).
"""

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch
import torch.nn.functional as F

from models.schedule import N_CODES, PAD_CODE

N_ACTIVITY_CODES = N_CODES - 1


@dataclass
class LossComponents:
    total: torch.Tensor
    cross_entropy: torch.Tensor
    r_individual: torch.Tensor
    r_household: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "cross_entropy": float(self.cross_entropy.detach()),
            "r_individual": float(self.r_individual.detach()),
            "r_household": float(self.r_household.detach()),
        }


def aor_terms(probs: torch.Tensor, onehot: torch.Tensor, valid: torch.Tensor, weights: torch.Tensor):
    """
    Overconfidence terms on probabilities [B, T, P, A] and one-hot targets.

    R_ind = sum_valid max(0, p - y) * w_a / N_ind, N_ind = valid (b, t, p) entries
    R_hh  = sum_(b,t,a) max(0, sum_p p - sum_p y) * w_a / N_hh, N_hh = (b, t) pairs with a valid member
    valid is [B, P]; masked persons drop out of every sum.
    """
    keep = valid[:, None, :, None].to(probs.dtype)
    p_hat = probs * keep
    y = onehot.to(probs.dtype) * keep

    n_individual = valid.sum() * probs.shape[1]
    excess = torch.clamp(p_hat - y, min=0.0) * weights
    r_individual = excess.sum() / n_individual.clamp(min=1)

    n_household = valid.any(dim=1).sum() * probs.shape[1]
    group_excess = torch.clamp(p_hat.sum(dim=2) - y.sum(dim=2), min=0.0) * weights
    r_household = group_excess.sum() / n_household.clamp(min=1)
    return r_individual, r_household


def compute_loss(logits: torch.Tensor, batch, weights, lambda_aor: float) -> LossComponents:
    """L_total = L_CE + lambda * (R_ind + R_hh) on logits [B, 96, P, 16]"""
    targets = batch.member_grids.transpose(1, 2)  # [B, 96, P]
    valid = batch.valid_mask
    entry_mask = valid[:, None, :].expand_as(targets)

    # select before log_softmax; masked rows hold -inf logits
    selected = logits[entry_mask]
    cross_entropy = F.cross_entropy(selected, targets[entry_mask])

    probs = torch.softmax(logits, dim=-1)[..., :N_ACTIVITY_CODES]
    onehot = F.one_hot(targets, N_CODES)[..., :N_ACTIVITY_CODES]
    w = torch.as_tensor(np.asarray(weights), dtype=logits.dtype, device=logits.device)
    r_individual, r_household = aor_terms(probs, onehot, valid, w)

    total = cross_entropy + lambda_aor * (r_individual + r_household)
    return LossComponents(total, cross_entropy, r_individual, r_household)


def compute_activity_weights(events: Iterable, n_types: int = N_ACTIVITY_CODES) -> np.ndarray:
    """Solo propensity per activity type: solo instances / all instances, 1 when unseen"""
    solo = np.zeros(n_types)
    total = np.zeros(n_types)
    for event in events:
        for participant in event.participants:
            code = participant.activity_type.code
            if code == PAD_CODE:
                continue
            total[code] += 1
            if len(event.participants) == 1:
                solo[code] += 1
    return np.divide(solo, total, out=np.ones(n_types), where=total > 0)
