"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GradCheckError
from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_error: float
    location: str
    checked: int

    def __str__(self):
        return f"max relative error {self.max_error:.3e} at {self.location} ({self.checked} elements)"


def grad_check(build_loss, tensors: dict[str, Tensor], eps: float = 1e-6,
               floor: float = 1e-4) -> GradCheckResult:
    """Compare taped gradients of a scalar loss against central differences.

    ``build_loss`` must rebuild the forward pass from the current contents
    of ``tensors`` (leaf tensors, perturbed in place) and return a scalar.
    The relative error uses ``|a - n| / max(|a|, |n|, floor)`` so that
    near-zero gradients are compared on an absolute scale.
    """
    if not (0.0 < eps <= 1e-3):
        raise ConfigError(f"eps must lie in (0, 1e-3], got {eps}")
    for t in tensors.values():
        if not t.requires_grad:
            raise ConfigError("grad_check targets must require gradients")
        t.grad = np.zeros_like(t.data)

    loss = build_loss()
    if loss.data.shape != ():
        raise GradCheckError("build_loss must return a scalar")
    if not np.isfinite(loss.data):
        raise GradCheckError("non-finite loss at the unperturbed point")
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    worst = 0.0
    where = "(none)"
    checked = 0
    for name, t in tensors.items():
        flat = t.data.ravel()
        ana = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(build_loss().data)
            flat[i] = orig - eps
            f_minus = float(build_loss().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite forward value while perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), floor)
            checked += 1
            if err > worst:
                worst = err
                where = f"{name}[{i}]"
    return GradCheckResult(worst, where, checked)
