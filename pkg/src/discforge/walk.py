"""Generic sticky-walk engine.

Starting from the center of the solid hypercube, repeatedly ask an oracle for
a feasible subspace, pick a unit direction in it orthogonal to the current
point, advance until a coordinate hits the boundary or the step budget L is
exhausted, freeze boundary coordinates permanently, and stop when the oracle
reports Undefined.  The remaining coordinates are rounded by sign.

This module is the literal per-step engine: it queries the oracle at every
step and is meant for cheap oracles (the ellipsoid colorer) and for
contract-level tests.  The Spencer and pseudorandom drivers use a cached
variant of the same loop (see ``_engine``) that refreshes the oracle on
freeze/staleness events; all invariants recorded here hold there too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from discforge.instance import Instance
from discforge.subspace import SubspaceBasis, sign_select

__all__ = [
    "PartialColoring",
    "OracleResult",
    "WalkTrace",
    "WalkError",
    "boundary_step",
    "run_walk",
]

SNAP_TOL = 1e-12  # coordinates this close to +-1 are frozen exactly


class WalkError(RuntimeError):
    """Engine-level failure: empty feasible set or step-count overflow."""


@dataclass
class PartialColoring:
    """Point in [-1,1]^n with its active set and step counter."""

    x: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if np.abs(self.x).max(initial=0.0) > 1.0:
            raise ValueError("coloring leaves the solid hypercube")

    @property
    def F(self) -> np.ndarray:
        return np.nonzero(np.abs(self.x) != 1.0)[0]

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class OracleResult:
    """Feasible subspace plus a sign-selection linear form.

    Oracles return ``None`` instead of an OracleResult to signal Undefined.
    A linear subspace of dimension >= 1 automatically satisfies the half-line
    requirement inside any halfspace.
    """

    subspace: SubspaceBasis
    sign_form: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class WalkTrace:
    """Per-step record sufficient to check every engine invariant offline."""

    n: int
    L: float
    algorithm: str = "generic"
    step_len: list = field(default_factory=list)
    dot_x_delta: list = field(default_factory=list)
    frozen_total: list = field(default_factory=list)
    active_at_step: list = field(default_factory=list)
    potentials: dict = field(default_factory=dict)  # name -> list of floats
    deltas: list | None = None  # unit step directions, small runs only
    final_x: np.ndarray | None = None
    rounding: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.step_len)

    def record(self, step_len, dot, frozen_total, k, delta=None, **pots):
        self.step_len.append(float(step_len))
        self.dot_x_delta.append(float(dot))
        self.frozen_total.append(int(frozen_total))
        self.active_at_step.append(int(k))
        for name, val in pots.items():
            self.potentials.setdefault(name, []).append(float(val))
        if self.deltas is not None and delta is not None:
            self.deltas.append(np.array(delta))

    def replay(self, atol: float = 1e-9) -> bool:
        """Re-apply recorded steps to x(0)=0 and compare with the final point."""
        if self.deltas is None or self.final_x is None:
            raise ValueError("replay needs recorded deltas and final_x")
        x = np.zeros(self.n)
        for gamma, d in zip(self.step_len, self.deltas):
            x += gamma * d
        x[np.abs(x) >= 1.0 - SNAP_TOL] = np.sign(x[np.abs(x) >= 1.0 - SNAP_TOL])
        return bool(np.abs(x - self.final_x).max(initial=0.0) <= atol)

    def to_csv(self, path) -> None:
        names = sorted(self.potentials)
        cols = [
            np.arange(self.steps, dtype=np.float64),
            np.asarray(self.step_len),
            np.asarray(self.dot_x_delta),
            np.asarray(self.frozen_total, dtype=np.float64),
            np.asarray(self.active_at_step, dtype=np.float64),
        ]
        for name in names:
            col = np.asarray(self.potentials[name], dtype=np.float64)
            if col.shape[0] != self.steps:  # snapshot columns may be short
                pad = np.full(self.steps, np.nan)
                pad[: col.shape[0]] = col
                col = pad
            cols.append(col)
        header = ",".join(["t", "step_len", "dot_x_delta", "frozen", "k"] + names)
        meta = f"# n={self.n} L={self.L!r} algorithm={self.algorithm}"
        data = np.column_stack(cols)
        with open(path, "w") as fh:
            fh.write(meta + "\n")
            np.savetxt(fh, data, delimiter=",", header=header, comments="")

    @classmethod
    def from_csv(cls, path) -> "WalkTrace":
        with open(path) as fh:
            meta = fh.readline().strip()
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        fields = dict(tok.split("=", 1) for tok in meta.lstrip("# ").split())
        tr = cls(n=int(fields["n"]), L=float(fields["L"]), algorithm=fields["algorithm"])
        if data.size == 0:
            return tr
        col = {name: data[:, i] for i, name in enumerate(header)}
        tr.step_len = list(col["step_len"])
        tr.dot_x_delta = list(col["dot_x_delta"])
        tr.frozen_total = [int(v) for v in col["frozen"]]
        tr.active_at_step = [int(v) for v in col["k"]]
        for name in header[5:]:
            tr.potentials[name] = list(col[name])
        return tr


def boundary_step(coloring: PartialColoring, delta: np.ndarray, L: float) -> float:
    """min(L, eps) where eps is the smallest positive boundary-crossing distance.

    ``delta`` must be supported on the active set.  Returns L when no active
    coordinate can reach +-1 within L.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if not np.any(delta):
        raise ValueError("zero direction")
    x = coloring.x
    j = np.nonzero(delta)[0]
    target = np.where(delta[j] > 0, 1.0, -1.0)
    eps = np.min((target - x[j]) / delta[j])
    return float(min(L, eps))


def _intersect_with_orthogonal(basis: np.ndarray, x: np.ndarray, tol: float = 1e-12):
    """Basis of span(basis) intersected with the hyperplane orthogonal to x."""
    w = basis.T @ x
    nw = np.linalg.norm(w)
    if nw <= tol:
        return basis
    if basis.shape[1] == 1:
        return basis[:, :0]
    # Householder in coefficient space: rotate w to a coordinate axis and
    # drop that axis; the remaining columns stay orthonormal.
    e = np.zeros_like(w)
    e[0] = nw
    v = w - e
    v /= np.linalg.norm(v)
    H = np.eye(w.shape[0]) - 2.0 * np.outer(v, v)
    rotated = basis @ H.T
    return rotated[:, 1:]


def run_walk(
    A: Instance,
    oracle,
    L: float,
    record_deltas: bool = False,
    max_steps: int | None = None,
    algorithm: str = "generic",
):
    """Drive the sticky walk with a per-step oracle until Undefined, then round.

    ``oracle(A, coloring)`` returns an OracleResult or None (Undefined).
    Returns ``(coloring in {-1,1}^n, WalkTrace)``.
    """
    if not (0.0 < L < 1.0):
        raise ValueError("L must lie in (0,1)")
    n = A.cols
    x = np.zeros(n)
    frozen = np.zeros(n, dtype=bool)
    budget = int(np.ceil(A.cols / L**2)) + n + 2 if max_steps is None else max_steps
    trace = WalkTrace(n=n, L=L, algorithm=algorithm)
    if record_deltas:
        trace.deltas = []
    t = 0
    while True:
        coloring = PartialColoring(x.copy(), t)
        res = oracle(A, coloring)
        if res is None:
            break
        if t >= budget:
            raise WalkError(f"step budget exhausted after {t} steps")
        basis = _intersect_with_orthogonal(res.subspace.basis, x)
        if basis.shape[1] == 0:
            raise WalkError("oracle subspace has empty intersection with the "
                            "orthogonality constraint (codimension budget bug)")
        delta = basis[:, 0]
        delta = delta / np.linalg.norm(delta)
        if res.sign_form is not None:
            delta = sign_select(res.sign_form, delta)
        gamma = boundary_step(coloring, delta, L)
        dot = float(delta @ x)
        x = x + gamma * delta
        snap = np.abs(x) >= 1.0 - SNAP_TOL
        x[snap] = np.sign(x[snap])
        newly = snap & ~frozen
        frozen |= snap
        t += 1
        trace.record(
            gamma,
            dot,
            int(frozen.sum()),
            int(coloring.F.size),
            delta=delta if record_deltas else None,
            **{k: v for k, v in res.diagnostics.items() if np.isscalar(v)},
        )
    trace.final_x = x.copy()
    # sign rounding with sign(0) := +1
    out = np.where(x >= 0.0, 1.0, -1.0)
    trace.rounding = {
        "rounded": int((np.abs(x) != 1.0).sum()),
        "final_active": int((~frozen).sum()),
    }
    return out, trace
