"""Independent reference implementations the tests check against.

These deliberately avoid the library's own code paths: the edit distance
is a memoized suffix recursion (no DP table, no backtrace), gradients come
from central finite differences of forward passes only.
"""

from typing import Callable, List, Sequence

import numpy as np
import torch


def brute_edit_distance(a: Sequence, b: Sequence, _memo=None) -> int:
    """Recursive Levenshtein on suffixes."""
    if _memo is None:
        _memo = {}
    key = (tuple(a), tuple(b))
    if key in _memo:
        return _memo[key]
    if len(a) == 0:
        result = len(b)
    elif len(b) == 0:
        result = len(a)
    elif a[0] == b[0]:
        result = brute_edit_distance(a[1:], b[1:], _memo)
    else:
        result = 1 + min(
            brute_edit_distance(a[1:], b, _memo),       # delete from a
            brute_edit_distance(a, b[1:], _memo),       # insert into a
            brute_edit_distance(a[1:], b[1:], _memo),   # substitute
        )
    _memo[key] = result
    return result


def all_strings(alphabet: str, max_len: int) -> List[str]:
    out = [""]
    frontier = [""]
    for _ in range(max_len):
        frontier = [s + c for s in frontier for c in alphabet]
        out.extend(frontier)
    return out


def finite_difference_gradients(loss_fn: Callable[[], torch.Tensor],
                                params: Sequence[torch.Tensor],
                                h: float = 1e-4) -> List[torch.Tensor]:
    """Central differences of a scalar loss w.r.t. each parameter tensor.

    ``loss_fn`` must recompute the loss from the parameters' current
    values; only forward passes are used.
    """
    grads = []
    with torch.no_grad():
        for p in params:
            grad = torch.zeros_like(p)
            flat = p.view(-1)
            gflat = grad.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(loss_fn())
                flat[i] = orig - h
                f_minus = float(loss_fn())
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2 * h)
            grads.append(grad)
    return grads


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    """Norm-based relative disagreement between two gradient tensors."""
    diff = (analytic - numeric).norm().item()
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return diff / scale


def check_gradients(loss_fn: Callable[[], torch.Tensor],
                    params: Sequence[torch.Tensor], h: float = 1e-4) -> float:
    """Max relative error between autograd and finite-difference gradients."""
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    numeric = finite_difference_gradients(loss_fn, params, h)
    errors = []
    for p, fd in zip(params, numeric):
        assert p.grad is not None, "parameter received no gradient"
        errors.append(relative_error(p.grad, fd))
    return max(errors)


def bilinear_field_oracle(offsets: np.ndarray, shape) -> np.ndarray:
    """Dense (dy, dx) field from mesh-node offsets, by explicit loops."""
    h, w = shape
    gy, gx = offsets.shape[0], offsets.shape[1]
    field = np.zeros((h, w, 2))
    for y in range(h):
        fy = y * (gy - 1) / (h - 1) if h > 1 else 0.0
        y0 = min(int(np.floor(fy)), gy - 2) if gy > 1 else 0
        ty = fy - y0
        for x in range(w):
            fx = x * (gx - 1) / (w - 1) if w > 1 else 0.0
            x0 = min(int(np.floor(fx)), gx - 2) if gx > 1 else 0
            tx = fx - x0
            for k in range(2):
                v00 = offsets[y0, x0, k]
                v01 = offsets[y0, min(x0 + 1, gx - 1), k]
                v10 = offsets[min(y0 + 1, gy - 1), x0, k]
                v11 = offsets[min(y0 + 1, gy - 1), min(x0 + 1, gx - 1), k]
                top = v00 * (1 - tx) + v01 * tx
                bottom = v10 * (1 - tx) + v11 * tx
                field[y, x, k] = top * (1 - ty) + bottom * ty
    return field


def bilinear_sample_oracle(img: np.ndarray, y: float, x: float, fill: float = 1.0) -> float:
    """Bilinear read at a fractional position; constant fill outside."""
    h, w = img.shape
    if y < -1 or y > h or x < -1 or x > w:
        return fill
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    ty, tx = y - y0, x - x0
    total = 0.0
    for dy, wy in ((0, 1 - ty), (1, ty)):
        for dx, wx in ((0, 1 - tx), (1, tx)):
            yy, xx = y0 + dy, x0 + dx
            value = img[yy, xx] if 0 <= yy < h and 0 <= xx < w else fill
            total += wy * wx * value
    return total
