"""Compare reverse-mode gradients against central finite differences."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .autodiff import Var


class GradientCheckError(AssertionError):
    pass


def grad_check(lossfn: Callable[[dict[str, Var]], Var], params: dict[str, np.ndarray],
               tolerance: float | None = None, n_samples: int = 200, step: float = 1e-5,
               seed: int = 0, floor: float = 1e-6) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``lossfn`` maps a dict of gradient-tracking leaves to a scalar Var. A
    random sample of ``n_samples`` coordinates (all coordinates when there
    are fewer) is probed with central differences. Relative error is
    ``|a - n| / max(|a| + |n|, floor)``. When ``tolerance`` is given and
    exceeded, :class:`GradientCheckError` is raised.
    """
    leaves = {k: Var(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    loss = lossfn(leaves)
    if not np.isfinite(loss.data).all():
        raise ValueError("loss is not finite at the given parameters")
    loss.backward()
    analytic = {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
                for k, leaf in leaves.items()}

    coords = [(k, i) for k in sorted(params) for i in range(np.asarray(params[k]).size)]
    rng = np.random.default_rng(seed)
    if len(coords) > n_samples:
        picks = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    def evaluate(name, flat_idx, delta):
        probe = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        probe[name].reshape(-1)[flat_idx] += delta
        out = lossfn({k: Var(v) for k, v in probe.items()}).item()
        if not math.isfinite(out):
            raise ValueError("loss became non-finite during finite differencing")
        return out

    worst = 0.0
    for name, idx in coords:
        numeric = (evaluate(name, idx, step) - evaluate(name, idx, -step)) / (2 * step)
        a = analytic[name].reshape(-1)[idx]
        err = abs(a - numeric) / max(abs(a) + abs(numeric), floor)
        worst = max(worst, err)
    if tolerance is not None and worst > tolerance:
        raise GradientCheckError(f"max relative gradient error {worst:.3e} exceeds {tolerance:.1e}")
    return worst
