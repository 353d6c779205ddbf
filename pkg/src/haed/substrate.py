"""Numerical substrate: stable cross-entropy, global-norm clipping, gradient checking.

All differentiable computation is carried by torch tensors on CPU. Training runs
in float32; gradient checking requires float64 so that central differences are a
sharp oracle.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

REL_ERR_FLOOR = 1e-12


def assert_finite(t: torch.Tensor, what: str = "tensor"):
    if not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite values in {what}")


def softmax_xent(logits: torch.Tensor, target: int) -> torch.Tensor:
    """Negative log softmax probability of `target`, in nats.

    Numerically stable via max-subtraction; works in float32 or float64.
    """
    if logits.dim() != 1:
        raise ValueError(f"expected 1-D logits, got shape {tuple(logits.shape)}")
    v = logits.shape[0]
    if not (0 <= target < v):
        raise IndexError(f"target {target} out of range for {v} logits")
    assert_finite(logits, "logits")
    shifted = logits - logits.max()
    return torch.logsumexp(shifted, dim=0) - shifted[target]


def clip_global_norm(grads, clip: float):
    """Scale a collection of gradients so their global L2 norm is at most `clip`.

    Returns (clipped grads, pre-clip global norm). Identity when already under
    the threshold, so the operation is idempotent.
    """
    if clip <= 0:
        raise ValueError("clip must be positive")
    for g in grads:
        assert_finite(g, "gradient")
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in grads))
    norm = float(total)
    if norm <= clip:
        return list(grads), norm
    scale = clip / norm
    return [g * scale for g in grads], norm


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error of analytic vs central-difference gradients."""

    max_rel_err: dict = field(default_factory=dict)
    tolerance: float = 1e-5
    deterministic: bool = True

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values()) if self.max_rel_err else 0.0

    @property
    def passed(self) -> bool:
        return self.deterministic and self.worst <= self.tolerance


def grad_check(loss_fn, params: dict, eps: float = 1e-5, coords_per_param: int = 64,
               seed: int = 0, tolerance: float = 1e-5, atol: float = 1e-9) -> GradCheckReport:
    """Compare reverse-mode gradients of `loss_fn` against central differences.

    `params` maps names to float64 leaf tensors with requires_grad; `loss_fn()`
    must read them and return a scalar. Coordinates are subsampled per parameter
    (at least `coords_per_param`, seeded) to keep large tensors tractable. A
    non-deterministic loss_fn is reported as a failure, not a gradient error.

    Coordinates where analytic and numeric agree within `atol` count as exact:
    central differences of an O(1) loss carry ~1e-11 cancellation noise, which
    would otherwise saturate the relative error on exactly-zero gradients.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    for name, p in params.items():
        if p.dtype != torch.float64:
            raise TypeError(f"grad_check requires float64 parameters ({name} is {p.dtype})")

    report = GradCheckReport(tolerance=tolerance)
    with torch.no_grad():
        l0 = float(loss_fn())
        l1 = float(loss_fn())
    if l0 != l1:
        report.deterministic = False
        return report

    names = list(params)
    tensors = [params[n] for n in names]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)

    rng = np.random.default_rng(seed)
    for name, p, a in zip(names, tensors, analytic):
        flat = p.view(-1)
        n = flat.numel()
        idx = np.arange(n) if n <= coords_per_param else np.sort(
            rng.choice(n, size=coords_per_param, replace=False))
        a_flat = torch.zeros(n, dtype=torch.float64) if a is None else a.reshape(-1)
        worst = 0.0
        with torch.no_grad():
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = float(loss_fn())
                flat[i] = orig - eps
                fm = float(loss_fn())
                flat[i] = orig
                numeric = (fp - fm) / (2 * eps)
                ana = float(a_flat[i])
                if abs(ana - numeric) <= atol:
                    continue
                denom = max(abs(ana), abs(numeric), REL_ERR_FLOOR)
                worst = max(worst, abs(ana - numeric) / denom)
        report.max_rel_err[name] = worst
    return report
