"""Adam, learning-rate schedule and reverse-mode gradient helpers."""

from __future__ import annotations

import math

import torch

from ..errors import NaNGradientError


def exponential_lr(step: int, total: int, lr_start: float = 1e-4, lr_end: float = 1e-8) -> float:
    """Exponential decay from ``lr_start`` at step 0 to ``lr_end`` at ``total``."""
    if step >= total:
        return lr_end
    if step <= 0:
        return lr_start
    return lr_start * (lr_end / lr_start) ** (step / total)


def gradients(loss: torch.Tensor, params: dict) -> dict:
    """Reverse-mode gradients of a scalar ``loss`` for every named parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    names = list(params)
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
    return {
        n: torch.zeros_like(params[n]) if g is None else g
        for n, g in zip(names, grads)
    }


class Adam:
    """Adam with bias correction, operating on a dict of named tensors in place."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-15):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in params.items()}

    def step(self, grads: dict, lr: float) -> None:
        bad = [n for n, g in grads.items() if not torch.all(torch.isfinite(g))]
        if bad:
            raise NaNGradientError(f"non-finite gradients in {bad}", parameters=bad)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        with torch.no_grad():
            for n, p in self.params.items():
                g = grads.get(n)
                if g is None:
                    continue
                m, v = self.m[n], self.v[n]
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                denom = (v / c2).sqrt_().add_(self.eps)
                p.addcdiv_(m, denom, value=-lr / c1)

    def state_tensors(self) -> dict:
        out = {}
        for n in self.params:
            out[f"adam.m.{n}"] = self.m[n]
            out[f"adam.v.{n}"] = self.v[n]
        return out

    def load_state_tensors(self, tensors: dict, step: int) -> None:
        for n in self.params:
            self.m[n] = torch.as_tensor(tensors[f"adam.m.{n}"]).to(self.params[n].dtype).clone()
            self.v[n] = torch.as_tensor(tensors[f"adam.v.{n}"]).to(self.params[n].dtype).clone()
        self.step_count = int(step)


def gradient_check(loss_fn, params: dict, h: float = 1e-5, floor: float = 1e-8, max_entries=None):
    """Compare autograd gradients with central finite differences.

    ``loss_fn()`` must return a scalar tensor computed from ``params``.
    Returns ``{name: max relative error}`` using
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)``.
    """
    loss = loss_fn()
    analytic = gradients(loss, params)
    report = {}
    for name, p in params.items():
        flat = p.data.view(-1)
        ga = analytic[name].reshape(-1)
        count = flat.numel() if max_entries is None else min(flat.numel(), max_entries)
        worst = 0.0
        with torch.no_grad():
            for i in range(count):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                a = ga[i].item()
                err = abs(a - fd) / max(abs(a), abs(fd), floor)
                worst = max(worst, err)
        report[name] = worst
    return report


def max_relative_error(report: dict) -> float:
    return max(report.values()) if report else 0.0


def count_parameters(params) -> int:
    return int(sum(math.prod(p.shape) for p in params))
