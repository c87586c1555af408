"""Backtracking line search shared by the Newton updates."""
import math

ARMIJO = 1e-4
SHRINK = 0.5
MAX_HALVINGS = 30


def backtrack(f, f0, slope, step0, apply):
    """Armijo backtracking along a fixed direction.

    ``apply(s)`` returns the candidate point for step size ``s``; ``f`` scores
    it; ``slope`` is the directional derivative at ``s = 0``.  Returns
    ``(point, value)`` of the first accepted step, or ``None``.
    """
    if not (slope > 0 and step0 > 0):
        return None
    s = step0
    for _ in range(MAX_HALVINGS + 1):
        x = apply(s)
        fx = f(x)
        if math.isfinite(fx) and fx >= f0 + ARMIJO * s * slope:
            return x, fx
        s *= SHRINK
    return None


def newton_1d(f, grad_hess, x0, lo, hi, rel_tol=1e-6, max_iter=50):
    """Maximize a scalar function on [lo, hi] by safeguarded Newton steps.

    Falls back to a gradient step when the curvature is not negative.
    Returns ``(x, f(x), fallback_used)``; f never decreases.
    """
    x = min(max(x0, lo), hi)
    fx = f(x)
    fallback = False
    for _ in range(max_iter):
        g, h = grad_hess(x)
        if not math.isfinite(g) or g == 0.0:
            break
        if math.isfinite(h) and h < 0:
            d = -g / h
        else:
            fallback = True
            d = g * max(abs(x), 1.0)
        # keep the trial point inside the box
        if d > 0:
            step0 = min(1.0, (hi - x) / d) if x + d > hi else 1.0
        else:
            step0 = min(1.0, 0.99 * (x - lo) / -d) if x + d < lo else 1.0
        res = backtrack(f, fx, g * d, step0, lambda s: min(max(x + s * d, lo), hi))
        if res is None:
            break
        x_new, f_new = res
        done = abs(x_new - x) <= rel_tol * abs(x)
        x, fx = x_new, f_new
        if done:
            break
    return x, fx, fallback
