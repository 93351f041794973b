"""Central finite-difference validation of tape gradients."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class FDReport:
    errors: dict = field(default_factory=dict)
    tol: float = 0.0

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return bool(self.errors) and self.max_error < self.tol

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.errors.items())]
        verdict = "PASS" if self.passed else "FAIL"
        return "\n".join(lines + [f"max {self.max_error:.3e} vs tol {self.tol:g}: {verdict}"])


def fd_check(loss_fn, params, h=1e-4, tol=1e-4, floor=1e-6):
    """Compare analytic gradients with central differences.

    ``loss_fn()`` must rebuild the scalar loss from the current parameter
    values. The per-entry error is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``; each parameter reports its worst entry. A failing
    comparison is reported, never raised.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}

    report = FDReport(tol=tol)
    for p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * h)
        a = analytic[p.name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        report.errors[p.name] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    return report
