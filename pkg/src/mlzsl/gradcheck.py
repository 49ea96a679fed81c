"""Finite-difference verification of analytic gradients.

Gradient checking reruns the identical computation in float64 because
central differences are unreliable at float32 precision.  An entry
passes when ``|analytic - numeric| <= max(rtol * |numeric|, afloor)``;
the reported figure is the tightest rtol that would still pass, so a
correct gradient reports well below the 1e-5 bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward

DEFAULT_STEP = 1e-6
DEFAULT_RTOL = 1e-5
DEFAULT_AFLOOR = 1e-8

# Test hook: name of a parameter whose analytic gradient gets perturbed
# before comparison, to prove the checker detects wrong gradients.
INJECT_ERROR_INTO: str | None = None


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked_entries: int
    passed: bool


def central_difference(loss_fn: Callable[[], Tensor], param: Tensor,
                       flat_index: int, step: float = DEFAULT_STEP) -> float:
    """d(loss)/d(param[flat_index]) by central differences.

    Mutates the parameter buffer in place for the two evaluations and
    restores it afterwards.
    """
    flat = param.data.reshape(-1)
    saved = flat[flat_index]
    try:
        flat[flat_index] = saved + step
        up = loss_fn().item()
        flat[flat_index] = saved - step
        down = loss_fn().item()
    finally:
        flat[flat_index] = saved
    return (up - down) / (2.0 * step)


def check_gradients(loss_fn: Callable[[], Tensor],
                    params: Mapping[str, Tensor],
                    step: float = DEFAULT_STEP,
                    rtol: float = DEFAULT_RTOL,
                    afloor: float = DEFAULT_AFLOOR,
                    max_entries_per_param: int | None = None,
                    rng: np.random.Generator | None = None) -> list[GradCheckResult]:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must rebuild the graph from the given parameter tensors on
    every call.  Parameters should be float64.  Large tensors can be
    subsampled via ``max_entries_per_param`` (deterministic under ``rng``);
    sampled entries are checked elementwise.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ValueError(f"gradient check requires float64 parameters ({name} is {p.dtype})")
        p.zero_grad()
    loss = loss_fn()
    backward(loss)

    results = []
    for name, p in params.items():
        if p.grad is None:
            analytic = np.zeros(p.shape, dtype=np.float64)
        else:
            analytic = p.grad.copy()
        if name == INJECT_ERROR_INTO:
            analytic = analytic + 1.0
        size = p.data.size
        if max_entries_per_param is not None and size > max_entries_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            entries = gen.choice(size, size=max_entries_per_param, replace=False)
        else:
            entries = np.arange(size)
        worst = 0.0
        flat_analytic = analytic.reshape(-1)
        for idx in entries:
            numeric = central_difference(loss_fn, p, int(idx), step)
            err = abs(flat_analytic[idx] - numeric)
            # tightest rtol that would accept this entry, given the floor
            rel = 0.0 if err <= afloor else err / max(abs(numeric), afloor / rtol)
            worst = max(worst, rel)
        results.append(GradCheckResult(name=name, max_rel_error=worst,
                                       checked_entries=len(entries),
                                       passed=worst <= rtol))
    return results


def max_error_by_group(results: list[GradCheckResult]) -> dict[str, float]:
    """Aggregate per-parameter results by dotted-name prefix."""
    groups: dict[str, float] = {}
    for r in results:
        group = r.name.split(".")[0]
        groups[group] = max(groups.get(group, 0.0), r.max_rel_error)
    return groups
