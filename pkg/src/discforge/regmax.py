"""Regularized maximum potentials.

Two smooth proxies for ``max_i y_i`` over a length-m vector, both obtained by
penalizing the linear maximization over the probability simplex:

* power-penalty ("lq"): ``max_{r in simplex} <r, y> + (1/(eta*q)) * sum r_i^q``
  for ``0 < q < 1``;
* negative entropy ("entropy"): the usual softened max
  ``(1/eta) * log(sum exp(eta*y_i))``.

Both sandwich the true maximum: ``M(y) <= value <= M(y) + err`` with
``err = m^(1-q)/(eta*q)`` for lq and ``log(m)/eta`` for entropy.  Gradients
live on the simplex.  The lq gradient is ``(lam - eta*y)^(1/(q-1))`` where the
multiplier ``lam`` is the unique root of ``sum (lam - eta*y_i)^(1/(q-1)) = 1``
above ``max eta*y_i``.

``hess_diag_bound`` exposes the diagonal quadratic-form weights that dominate
the curvature of either potential for steps within ``step_cap``; they drive
every per-step potential ledger in the walk drivers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegParams",
    "RegEval",
    "lq_multiplier",
    "lq_value_grad",
    "smax_value_grad",
    "hess_diag_bound",
    "step_cap",
    "sharpened_step_cap",
    "sharpened_hess_diag_bound",
]

# Residual tolerance for the multiplier root; spec asks for 1e-12 relative and
# the residual is O(1), so an absolute bound is the same thing here.
_MULT_TOL = 1e-13
_MAX_NEWTON = 200


@dataclass(frozen=True)
class RegParams:
    """Regularizer family and its parameters.

    kind: "lq" (power penalty, uses q) or "entropy" (negative entropy).
    q:    exponent in (0,1); ignored for entropy.
    eta:  scale parameter, > 0.
    """

    kind: str
    q: float = 0.5
    eta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("lq", "entropy"):
            raise ValueError(f"unknown regularizer kind: {self.kind!r}")
        if self.kind == "lq" and not (0.0 < self.q < 1.0):
            raise ValueError(f"q must lie in (0,1), got {self.q}")
        if not (self.eta > 0.0):
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass
class RegEval:
    """Value, simplex gradient and (for lq) the multiplier at a point."""

    value: float
    grad: np.ndarray
    multiplier: float | None = None


def _as_batch(y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return y[None, :], True
    if y.ndim == 2:
        return y, False
    raise ValueError("y must be a vector or a batch of vectors")


def lq_multiplier_batch(z: np.ndarray, q: float) -> np.ndarray:
    """Roots of ``sum_i (lam - z_i)^(1/(q-1)) = 1`` for each row of z.

    Safeguarded Newton on a bracket that is exact for every simplex size:
    the root lies in ``[max z + 1, max z + m^(1-q)]`` because the left end
    makes the largest term alone >= 1 and the right end caps the full sum.
    Newton from the left end of a convex decreasing residual increases
    monotonically toward the root.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] == 0:
        raise ValueError("need a nonempty batch of nonempty vectors")
    m = z.shape[1]
    pw = 1.0 / (q - 1.0)  # < -1
    zmax = z.max(axis=1)
    lam = zmax + 1.0
    hi = zmax + m ** (1.0 - q)
    if m == 1:
        return lam  # (lam - z)^pw = 1 exactly
    for _ in range(_MAX_NEWTON):
        t = lam[:, None] - z
        tp = t ** pw
        g = tp.sum(axis=1) - 1.0
        if np.all(np.abs(g) <= _MULT_TOL):
            break
        gp = pw * (tp / t).sum(axis=1)
        step = g / gp
        lam = np.minimum(np.maximum(lam - step, zmax + 1.0), hi)
    return lam


def lq_multiplier(y, params: RegParams) -> float:
    """Multiplier lam(y) of the lq regularizer, solved at the rescaled point eta*y."""
    if params.kind != "lq":
        raise ValueError("lq_multiplier requires an lq regularizer")
    yb, _ = _as_batch(y)
    if yb.shape[1] == 0:
        raise ValueError("empty input vector")
    if not np.all(np.isfinite(yb)):
        raise ValueError("non-finite entries in y")
    return float(lq_multiplier_batch(params.eta * yb, params.q)[0])


def lq_value_grad_batch(y: np.ndarray, q: float, eta: float):
    """Batched (value, grad, lam) of the lq-regularized max."""
    z = eta * y
    lam = lq_multiplier_batch(z, q)
    pw = 1.0 / (q - 1.0)
    grad = (lam[:, None] - z) ** pw
    # value = <grad, y> + (1/(eta q)) sum grad^q, with grad^q = (lam-z)^(q/(q-1))
    value = np.einsum("bi,bi->b", grad, y) + (grad**q).sum(axis=1) / (eta * q)
    return value, grad, lam


def lq_value_grad(y, params: RegParams) -> RegEval:
    """Value/gradient/multiplier of the lq-regularized maximum at y."""
    if params.kind != "lq":
        raise ValueError("lq_value_grad requires an lq regularizer")
    yb, single = _as_batch(y)
    if yb.shape[1] == 0:
        raise ValueError("empty input vector")
    if not np.all(np.isfinite(yb)):
        raise ValueError("non-finite entries in y")
    value, grad, lam = lq_value_grad_batch(yb, params.q, params.eta)
    if single:
        return RegEval(float(value[0]), grad[0], float(lam[0]))
    return RegEval(value, grad, lam)  # batch form, used internally


def smax_value_grad(y, eta: float) -> RegEval:
    """Entropy-regularized max (softened max) with an overflow-safe shift."""
    if not (eta > 0.0):
        raise ValueError("eta must be positive")
    yb, single = _as_batch(y)
    if yb.shape[1] == 0:
        raise ValueError("empty input vector")
    if not np.all(np.isfinite(yb)):
        raise ValueError("non-finite entries in y")
    m = eta * yb
    shift = m.max(axis=1, keepdims=True)
    e = np.exp(m - shift)
    s = e.sum(axis=1)
    value = (shift[:, 0] + np.log(s)) / eta
    grad = e / s[:, None]
    if single:
        return RegEval(float(value[0]), grad[0], None)
    return RegEval(value, grad, None)


def step_cap(params: RegParams) -> float:
    """Largest sup-norm displacement for which the quadratic upper bound holds."""
    if params.kind == "lq":
        return (1.0 - params.q) / (8.0 * params.eta)
    return 1.0 / (3.0 * params.eta)


def hess_diag_bound(ev: RegEval, params: RegParams) -> np.ndarray:
    """Diagonal weights w dominating the curvature of the potential.

    For any displacement d with ``|d|_inf <= step_cap(params)``,

        value(y + d) <= value(y) + <grad, d> + sum_i w_i d_i^2.

    lq:      w = eta/(1-q) * grad^(2-q)
    entropy: w = eta * grad
    """
    if params.kind == "lq":
        return (params.eta / (1.0 - params.q)) * ev.grad ** (2.0 - params.q)
    return params.eta * ev.grad


# Sharpened variant: half the curvature constant at the price of a much
# smaller step cap.  The cap/constant pair (C1=1/16, C2=1) is an empirical
# stand-in verified by the acceptance suite, not a proved constant.
_SHARP_C1 = 1.0 / 16.0
_SHARP_C2 = 1.0


def sharpened_step_cap(m: int, params: RegParams) -> float:
    if params.kind != "lq":
        raise ValueError("sharpened bound applies to the lq regularizer")
    return _SHARP_C1 * (1.0 - params.q) / (m * params.eta)


def sharpened_hess_diag_bound(ev: RegEval, m: int, params: RegParams) -> np.ndarray:
    if params.kind != "lq":
        raise ValueError("sharpened bound applies to the lq regularizer")
    coef = params.eta / (2.0 * (1.0 - params.q)) * (1.0 + _SHARP_C2 / m)
    return coef * ev.grad ** (2.0 - params.q)
