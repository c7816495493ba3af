"""Finite-difference gradient checking used across the test suite.

Everything runs in float64 with central differences at h = 1e-3; the
truncation error of O(h^2) leaves plenty of room under the 1e-3 relative
tolerance the checks assert.
"""

from __future__ import annotations

import numpy as np

from bivad import tensor as T

H_STEP = 1e-3
REL_TOL = 1e-3


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def fd_grad(fn, arrays: list[np.ndarray], coords: list[list[tuple]] | None = None):
    """Central-difference gradients of scalar fn(*arrays) w.r.t. each array.

    coords optionally restricts each array to a few sampled entries
    (index tuples); None checks every entry.
    """
    grads = []
    for ai, base in enumerate(arrays):
        idx_list = coords[ai] if coords is not None else [
            tuple(ix) for ix in np.ndindex(*base.shape)] if base.ndim else [()]
        g = np.zeros(base.shape, dtype=np.float64)
        for ix in idx_list:
            orig = base[ix]
            base[ix] = orig + H_STEP
            fp = fn(*arrays)
            base[ix] = orig - H_STEP
            fm = fn(*arrays)
            base[ix] = orig
            g[ix] = (fp - fm) / (2.0 * H_STEP)
        grads.append(g)
    return grads


def check_grads(build_loss, arrays: list[np.ndarray], coords=None, tol: float = REL_TOL):
    """Compare tape gradients of build_loss against finite differences.

    build_loss receives float64 Tensors (requires_grad) in the order of
    ``arrays`` and returns a scalar Tensor.  Returns worst relative error.
    """
    tensors = [T.Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    loss = build_loss(*tensors)
    T.backward(loss)
    ana = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def scalar_fn(*arrs):
        vals = [T.Tensor(a, dtype=np.float64) for a in arrs]
        with T.no_grad():
            return build_loss(*vals).item()

    num = fd_grad(scalar_fn, [a.astype(np.float64) for a in arrays], coords)
    worst = 0.0
    for ai, (an, nu) in enumerate(zip(ana, num)):
        idx_list = coords[ai] if coords is not None else [
            tuple(ix) for ix in np.ndindex(*an.shape)] if an.ndim else [()]
        for ix in idx_list:
            e = rel_err(float(an[ix]), float(nu[ix]))
            worst = max(worst, e)
            assert e <= tol, (
                f"gradient mismatch on array {ai} at {ix}: tape {an[ix]:.8g} "
                f"vs central-diff {nu[ix]:.8g} (rel {e:.3g})")
    return worst


def sample_coords(shape, rng: np.random.Generator, k: int = 4) -> list[tuple]:
    total = int(np.prod(shape)) if shape else 1
    if not shape:
        return [()]
    picks = rng.choice(total, size=min(k, total), replace=False)
    return [tuple(int(v) for v in np.unravel_index(p, shape)) for p in picks]
