"""Finite-difference checks of tape gradients at float64."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evhands import ad
from oracles import central_gradient

STEP = 1e-5
REL_TOL = 1e-4


@dataclass
class GradCheckResult:
    points: int
    worst_rel_error: float
    skipped_coords: int
    checked_coords: int

    def ok(self) -> bool:
        return self.worst_rel_error < REL_TOL


def tape_gradient(fn, x: np.ndarray) -> tuple[float, np.ndarray]:
    with ad.precision(np.float64):
        t = ad.Tensor(np.array(x, dtype=np.float64), requires_grad=True)
        with ad.Tape() as tape:
            out = fn(t)
        (g,) = ad.backward(tape, out, [t])
    return out.item(), g


def value(fn, x: np.ndarray) -> float:
    with ad.precision(np.float64):
        return fn(ad.Tensor(np.array(x, dtype=np.float64))).item()


def check(fn, sample, n_points: int = 100, max_coords: int | None = None, seed: int = 0,
          floor: float = 1e-8) -> GradCheckResult:
    """Compare tape and central-difference gradients of ``fn`` at ``n_points`` samples.

    ``sample(rng)`` draws an input array.  Coordinates next to a kink (see
    :func:`oracles.central_gradient`) are skipped and counted.  The relative
    error at a point is ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)`` over
    the checked coordinates.
    """
    rng = np.random.default_rng(seed)
    worst, skipped, checked = 0.0, 0, 0
    for _ in range(n_points):
        x = sample(rng)
        _, g = tape_gradient(fn, x)
        g = g.reshape(-1)
        coords = np.arange(g.size)
        if max_coords is not None and g.size > max_coords:
            coords = np.sort(rng.choice(g.size, max_coords, replace=False))
        fd, kink = central_gradient(lambda y: value(fn, y), x, coords, STEP)
        use = ~kink
        skipped += int(kink.sum())
        checked += int(use.sum())
        a, n = g[coords][use], fd[use]
        if len(a) == 0:
            continue
        denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return GradCheckResult(n_points, worst, skipped, checked)
