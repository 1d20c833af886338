"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor

# Absolute floor of the relative-error denominator; keeps exactly-zero
# gradients from producing 0/0.
_DENOM_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    per_input: dict[str, float] = field(default_factory=dict)
    checked_coords: int = 0
    # Norms of the probed analytic/numeric gradients and of their difference, per input.
    norms: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), _DENOM_FLOOR)
    return float(diff / denom)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor] | dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    name: str = "fn",
) -> GradcheckResult:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``fn`` is re-evaluated for every perturbation and may return a tensor of
    any shape; it is reduced to a scalar by a fixed random projection so that
    every output element contributes. Inputs are perturbed in place.
    ``max_coords`` caps how many coordinates per input are probed (chosen at
    random); ``None`` probes all of them.
    """
    named = dict(inputs) if isinstance(inputs, dict) else {
        f"input{i}": t for i, t in enumerate(inputs)
    }
    # Offset stream so the projection never coincides with caller data drawn from the same seed.
    rng = np.random.default_rng([seed, 0x6D6361])
    probe = fn()
    weights = rng.standard_normal(probe.shape)

    def objective() -> Tensor:
        out = fn()
        return ops.sum_(ops.mul(out, Tensor(weights.astype(out.dtype))))

    for t in named.values():
        t.grad = None
    objective().backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in named.items()}

    per_input: dict[str, float] = {}
    norms: dict[str, tuple[float, float, float]] = {}
    checked = 0
    for key, t in named.items():
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else np.sort(
            rng.choice(n, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = objective().item()
            flat[c] = orig - eps
            f_minus = objective().item()
            flat[c] = orig
            numeric[j] = (f_plus - f_minus) / (2 * eps)
        a = analytic[key].reshape(-1)[coords]
        per_input[key] = relative_error(a, numeric)
        norms[key] = (float(np.linalg.norm(a)), float(np.linalg.norm(numeric)),
                      float(np.linalg.norm(a - numeric)))
        checked += len(coords)
    for t in named.values():
        t.grad = None
    worst = max(per_input.values()) if per_input else 0.0
    return GradcheckResult(name, worst, per_input, checked, norms)
