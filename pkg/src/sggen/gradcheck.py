"""Finite-difference gradient oracle.

The checker never touches the tape: it only re-runs the forward closure with
perturbed leaf values and compares central differences against the analytic
gradients produced by ``numcore.backward``. Relative error uses a unit floor,
``|a - n| / max(1, |a|, |n|)``, so tiny gradients are compared absolutely.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc

DEFAULT_STEP = 1e-6


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def numeric_grad(f, leaf: nc.Tensor, index, h: float = DEFAULT_STEP) -> float:
    """Central difference of the scalar ``f()`` w.r.t. one leaf coordinate."""
    orig = leaf.data[index]
    leaf.data[index] = orig + h
    fp = f().item()
    leaf.data[index] = orig - h
    fm = f().item()
    leaf.data[index] = orig
    return (fp - fm) / (2.0 * h)


def check_gradients(f, leaves, h: float = DEFAULT_STEP, max_coords: int | None = None, rng=None):
    """Compare analytic and numeric gradients of scalar ``f()`` per leaf.

    ``leaves`` is a dict name -> Tensor (requires_grad). Returns a dict
    name -> max relative error over the checked coordinates. When
    ``max_coords`` is given, a deterministic sample of coordinates per leaf
    is checked instead of all of them.
    """
    for t in leaves.values():
        t.zero_grad()
    loss = f()
    nc.backward(loss)
    analytic = {name: nc.grad_value(t).copy() for name, t in leaves.items()}

    errs = {}
    for name, t in leaves.items():
        flat_indices = np.arange(t.size)
        if max_coords is not None and t.size > max_coords:
            sampler = rng if rng is not None else np.random.default_rng(0)
            flat_indices = np.sort(sampler.choice(t.size, size=max_coords, replace=False))
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for fi in flat_indices:
            index = np.unravel_index(int(fi), t.shape) if t.ndim else ()
            num = numeric_grad(f, t, index, h=h)
            worst = max(worst, rel_err(float(a_flat[fi]), num))
        errs[name] = worst
    return errs
