"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class ParamReport:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    error: float


@dataclass
class GradReport:
    tol: float
    worst: list[ParamReport] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.error <= self.tol for r in self.worst)

    @property
    def max_error(self) -> float:
        return max((r.error for r in self.worst), default=0.0)

    def failures(self) -> list[ParamReport]:
        return [r for r in self.worst if r.error > self.tol]

    def __str__(self) -> str:
        lines = [f"grad_check tol={self.tol:g}: {'PASS' if self.ok else 'FAIL'}"]
        for r in self.worst:
            flag = "FAIL" if r.error > self.tol else "ok"
            lines.append(f"  {flag:4s} {r.name}{list(r.index)} analytic={r.analytic:.6e} "
                         f"numeric={r.numeric:.6e} err={r.error:.2e}")
        return "\n".join(lines)


def grad_check(closure: Callable[[], Tensor], params: Sequence, eps: float = 1e-5,
               tol: float = 1e-4, names: Sequence[str] | None = None) -> GradReport:
    """Compare backprop gradients of ``closure()`` against central differences.

    ``params`` are leaf Tensors (requires_grad) or (name, tensor) pairs. Every
    element of every parameter is perturbed; the error metric is
    |analytic - numeric| / max(1, |analytic|). The report keeps the worst
    element per parameter.
    """
    pairs = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            pairs.append(p)
        else:
            pairs.append((names[i] if names else (p.name or f"param{i}"), p))

    for _, p in pairs:
        p.grad = np.zeros_like(p.data)
    loss = closure()
    loss.backward()
    analytic = [p.grad.copy() for _, p in pairs]

    report = GradReport(tol=tol)
    for (name, p), ga in zip(pairs, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        worst = None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = closure().item()
            flat[i] = orig - eps
            fm = closure().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]))
            if worst is None or err > worst.error:
                worst = ParamReport(name, tuple(int(v) for v in np.unravel_index(i, p.shape)),
                                    float(gflat[i]), float(num), float(err))
        if worst is not None:
            report.worst.append(worst)
    return report
