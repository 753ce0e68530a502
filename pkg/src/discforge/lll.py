"""Randomized resampling colorer for row- and column-sparse 0/1 matrices.

Start from a uniform coloring; while some row's discrepancy exceeds
``4*sqrt(s*log(s))`` (natural log), resample all variables of the bad row
with the smallest index.  Termination within polynomially many rounds holds
with high probability; a round cap turns the residual failure mode into an
explicit non-termination result carrying the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from discforge import _kernels
from discforge.instance import Instance

__all__ = ["ResampleTrace", "NonTermination", "lll_color", "bad_row_threshold"]


@dataclass
class ResampleTrace:
    """Per-round record: which row was resampled and how many were bad."""

    rows: list = field(default_factory=list)
    bad_counts: list = field(default_factory=list)
    rounds: int = 0
    terminated: bool = True


class NonTermination(RuntimeError):
    """Round cap exceeded; carries the coloring and trace seen so far."""

    def __init__(self, coloring, trace):
        super().__init__(f"no stable coloring after {trace.rounds} rounds")
        self.coloring = coloring
        self.trace = trace


def bad_row_threshold(s: int) -> float:
    return 4.0 * math.sqrt(s * math.log(s))


def lll_color(
    A: Instance,
    seed: int,
    t_max: int | None = None,
    threshold: float | None = None,
):
    """Resample bad rows of a 0/1, s-sparse matrix until all are balanced.

    ``s`` comes from the instance metadata and must bound both the row and
    column sparsity.  ``threshold`` overrides the default bad-row bound and
    exists for exercising the resampling machinery (the default bound exceeds
    s itself until s is in the hundreds, so no row is ever bad).
    Returns (coloring, ResampleTrace); raises NonTermination past t_max.
    """
    ent = A.entries
    if not np.all((ent == 0.0) | (ent == 1.0)):
        raise ValueError("need a 0/1 matrix")
    s = A.col_sparsity
    if s is None or s < 2:
        raise ValueError("instance must declare column sparsity s >= 2")
    row_nnz = (ent != 0).sum(axis=1)
    col_nnz = (ent != 0).sum(axis=0)
    if row_nnz.max(initial=0) > s or col_nnz.max(initial=0) > s:
        raise ValueError("declared sparsity does not bound rows and columns")
    n = ent.shape[1]
    if t_max is None:
        t_max = 100 * n * int(math.ceil(math.log(max(n, 2))))
    if threshold is None:
        threshold = bad_row_threshold(s)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([0x11A, seed])))
    x = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    disc = ent @ x

    rows_idx, rows_ptr = _csr(ent)
    cols_idx, cols_ptr = _csr(ent.T)
    trace = ResampleTrace()
    total_rounds = 0
    while True:
        bits = rng.random(max(1024, 4 * s * n))
        rounds, _, done, log_row, log_nbad = _kernels.lll_resample(
            rows_idx, rows_ptr, cols_idx, cols_ptr, x, disc,
            threshold, t_max - total_rounds, bits,
        )
        trace.rows.extend(int(r) for r in log_row)
        trace.bad_counts.extend(int(b) for b in log_nbad)
        total_rounds += rounds
        if done:
            break
        if total_rounds >= t_max:
            trace.rounds = total_rounds
            trace.terminated = False
            raise NonTermination(x, trace)
        # random pool exhausted mid-run; refill and continue
    trace.rounds = total_rounds
    trace.terminated = True
    disc_final = np.abs(ent @ x)
    assert disc_final.max(initial=0.0) <= threshold + 1e-9
    return x, trace


def _csr(mat: np.ndarray):
    idx = []
    ptr = [0]
    for row in mat:
        nz = np.nonzero(row)[0]
        idx.extend(nz.tolist())
        ptr.append(len(idx))
    return np.asarray(idx, dtype=np.int64), np.asarray(ptr, dtype=np.int64)


def chernoff_witness(s: int, trials: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo probability that a +-1 sum over s variables exceeds the
    bad-row threshold, with the bound s^-8 it is checked against."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([0x11B, seed])))
    thresh = bad_row_threshold(s)
    hits = 0
    block = 100_000
    left = trials
    while left > 0:
        b = min(block, left)
        sums = np.abs(
            np.where(rng.random((b, s)) < 0.5, 1.0, -1.0).sum(axis=1)
        )
        hits += int((sums > thresh).sum())
        left -= b
    return hits / trials, float(s) ** -8.0
