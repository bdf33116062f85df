"""Cross-entropy, the pain-related score calibration (PRSC) hinge, and the total objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .errors import BatchMismatch, InputError, KhOutOfRange, NonFiniteGradient, NotOneHot


@dataclass(frozen=True)
class HyperParams:
    lam: float = 0.1  # trade-off between CE and PRSC
    delta: float = 0.05  # margin
    k_h: int = 5  # number of highly pain-related regions

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("lambda must be >= 0")
        if self.delta <= 0:
            raise InputError("delta must be > 0")

    def k_r(self, k: int) -> int:
        return k - self.k_h

    def check(self, k: int) -> None:
        if not 1 <= self.k_h < k:
            raise KhOutOfRange(f"k_h={self.k_h} must satisfy 1 <= k_h < K={k}")


def cross_entropy(y: torch.Tensor, y_p: torch.Tensor) -> torch.Tensor:
    """-sum(y * log y_p) for one-hot ``y`` and probability vector ``y_p`` (last axis)."""
    y = torch.as_tensor(y, dtype=y_p.dtype if torch.is_tensor(y_p) else torch.float64)
    y_p = torch.as_tensor(y_p, dtype=y.dtype)
    if y.shape != y_p.shape:
        raise BatchMismatch(f"label shape {tuple(y.shape)} vs prediction {tuple(y_p.shape)}")
    if not (torch.all((y == 0) | (y == 1)) and torch.all(y.sum(-1) == 1)):
        raise NotOneHot("labels must be one-hot")
    logp = torch.log(torch.clamp(y_p, min=torch.finfo(y_p.dtype).tiny))
    return -(y * logp).sum(-1)


def cross_entropy_from_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Per-sample CE computed in log space (max-subtracted log-softmax)."""
    return -F.log_softmax(logits, dim=-1).gather(-1, labels.long().unsqueeze(-1)).squeeze(-1)


def _shifted_mean(x: torch.Tensor) -> torch.Tensor:
    # mean taken relative to the first entry, exact when all entries are equal
    anchor = x[..., :1]
    return anchor + (x - anchor).mean(-1, keepdim=True)


def prsc_terms(beta: torch.Tensor, hp: HyperParams) -> torch.Tensor:
    """Hinge arguments delta - (top_j - rest_mean), shape (..., k_h)."""
    hp.check(beta.shape[-1])
    ordered = torch.sort(beta, dim=-1, descending=True, stable=True).values
    top, rest = ordered[..., : hp.k_h], ordered[..., hp.k_h :]
    anchor = rest[..., :1]
    # gap measured against the first rest score so equal scores give exactly 0
    gap = (top - anchor) - (rest - anchor).mean(-1, keepdim=True)
    return hp.delta - gap


def prsc(beta: torch.Tensor, hp: HyperParams) -> torch.Tensor:
    """Mean over the top-k_h regions of max(0, delta - (beta_top - mean(beta_rest))).

    Always lies in [0, delta] because every top score is at least the mean
    of the remaining ones.
    """
    beta = torch.as_tensor(beta)
    # relu has zero subgradient at exactly 0
    return _shifted_mean(torch.relu(prsc_terms(beta, hp))).squeeze(-1)


class LossBreakdown(NamedTuple):
    total: torch.Tensor
    ce: torch.Tensor  # batch mean
    prsc: torch.Tensor  # batch mean


def total_loss(logits: torch.Tensor, beta: torch.Tensor, labels: torch.Tensor, hp: HyperParams) -> LossBreakdown:
    """(1/N) sum_i [CE_i + lambda * PRSC_i].

    With lambda == 0 the PRSC term is left out of the graph, so the value and
    gradients are bit-identical to plain mean cross-entropy.
    """
    n = logits.shape[0]
    if n == 0:
        raise BatchMismatch("empty batch")
    if beta.shape[0] != n or labels.shape[0] != n:
        raise BatchMismatch(f"batch sizes differ: logits {n}, beta {beta.shape[0]}, labels {labels.shape[0]}")
    ce = cross_entropy_from_logits(logits, labels)
    if hp.lam == 0:
        with torch.no_grad():
            reg = prsc(beta, hp).mean()
        mean_ce = ce.mean()
        return LossBreakdown(mean_ce, mean_ce, reg)
    reg = prsc(beta, hp)
    total = (ce + hp.lam * reg).mean()
    return LossBreakdown(total, ce.mean().detach(), reg.mean().detach())


def loss_gradients(model, images: torch.Tensor, labels: torch.Tensor, hp: HyperParams) -> dict[str, dict[str, torch.Tensor]]:
    """Reverse-mode gradients of the total objective, keyed by parameter group."""
    model.zero_grad(set_to_none=True)
    out = model(images)
    loss = total_loss(out.logits, out.beta, labels, hp).total
    params = [p for _, p in model.named_parameters()]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    by_name = {n: (g if g is not None else torch.zeros_like(p)) for (n, p), g in zip(model.named_parameters(), grads)}
    result = {}
    for group, named in model.parameter_groups().items():
        result[group] = {n: by_name[n] for n, _ in named}
        for n, g in result[group].items():
            if not torch.all(torch.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {n}")
    return result
