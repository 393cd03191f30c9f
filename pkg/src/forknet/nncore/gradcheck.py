from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class GradcheckReport:
    """Per-tensor relative error of backprop gradients against central differences.

    The error for one tensor is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    over the checked entries. A tensor whose gradients are all within the
    rounding noise of the central difference, on both sides, reports 0; that
    noise floor is ``max(atol, 64 * machine_eps * max(1, |loss|) / eps)``. This
    matters for parameters whose true gradient is exactly zero (e.g. attention
    key biases), where the ratio would compare noise with noise.
    """

    errors: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return not self.failures and self.max_error < tol


def gradcheck(loss_fn: Callable[[], Tensor], tensors: Mapping[str, Tensor], eps: float = 1e-5,
              max_entries: int | None = None, seed: int = 0, atol: float = 1e-10) -> GradcheckReport:
    """Compare ``backward()`` gradients of a scalar loss with central differences.

    ``loss_fn`` must rebuild the graph from the current tensor values on every
    call. With ``max_entries`` set, at most that many entries per tensor are
    probed, chosen with a seeded generator.
    """
    for t in tensors.values():
        t.grad = None
        t.requires_grad = True
    loss = loss_fn()
    loss.backward()
    floor = max(atol, 64 * np.finfo(np.float64).eps * max(1.0, abs(float(loss.data))) / eps)
    report = GradcheckReport()
    rng = np.random.default_rng(seed)
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(analytic)):
            report.failures.append(f"{name}: non-finite gradient")
            report.errors[name] = float("inf")
            continue
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * eps)
        a = analytic.reshape(-1)[idx]
        diff = np.max(np.abs(a - numeric))
        scale = max(np.max(np.abs(a)), np.max(np.abs(numeric)))
        report.errors[name] = 0.0 if scale <= floor else float(diff / scale)
    return report
