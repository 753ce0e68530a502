"""Discrepancy instances: construction, random families, persistence.

An instance is a dense real m x n matrix with declared metadata (family tag,
seed, column-norm bound, optional column sparsity).  Generators are pure
functions of (params, seed): identical inputs give bit-identical matrices.

Persistence is a row-major CSV of entries plus a JSON metadata sidecar;
round-trips preserve entries exactly (17 significant digits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Instance",
    "InstanceError",
    "gen_gaussian",
    "gen_haar",
    "gen_regular_system",
    "gen_twisted_hypercube",
    "haar_moment_estimate",
    "save_instance",
    "load_instance",
]

FAMILIES = (
    "gaussian",
    "haar",
    "regular-set-system",
    "twisted-hypercube",
    "hadamard",
    "file",
)

_NORM_SLACK = 1.0 + 1e-9


class InstanceError(ValueError):
    """Invalid construction parameters or inconsistent metadata."""


@dataclass
class Instance:
    """Dense matrix with metadata; invariants checked on construction."""

    entries: np.ndarray
    family: str
    seed: int
    col_norm_bound: float
    col_sparsity: int | None = None

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise InstanceError("entries must be a matrix")
        if self.family not in FAMILIES:
            raise InstanceError(f"unknown family {self.family!r}")
        if not np.all(np.isfinite(self.entries)):
            raise InstanceError("entries must be finite")
        norms = np.linalg.norm(self.entries, axis=0)
        if norms.size and norms.max() > self.col_norm_bound * _NORM_SLACK:
            raise InstanceError(
                f"column norm {norms.max():.12g} exceeds declared bound "
                f"{self.col_norm_bound:.12g}"
            )
        if self.col_sparsity is not None:
            nnz = (self.entries != 0).sum(axis=0)
            if nnz.size and int(nnz.max()) > self.col_sparsity:
                raise InstanceError(
                    f"column has {int(nnz.max())} nonzeros, declared sparsity "
                    f"{self.col_sparsity}"
                )

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256(self.entries.tobytes()).hexdigest()[:16]


def _rng(seed: int, stream: str) -> np.random.Generator:
    # One counter-based generator namespace: every consumer derives its own
    # child stream, so instance and algorithm randomness never interleave.
    ss = np.random.SeedSequence([abs(hash(stream)) % (2**63), int(seed) & (2**63 - 1)])
    return np.random.Generator(np.random.Philox(ss))


def gen_gaussian(n: int, seed: int) -> Instance:
    """n x n matrix of i.i.d. normals with variance 1/n.

    Column norms concentrate around 1; the rare column with norm above 1.2
    is redrawn so the declared bound col_norm_bound = 1.2 holds literally.
    """
    if n < 2:
        raise InstanceError("gaussian family needs n >= 2")
    rng = _rng(seed, "instance.gaussian")
    sigma = 1.0 / np.sqrt(n)
    A = rng.normal(0.0, sigma, size=(n, n))
    norms = np.linalg.norm(A, axis=0)
    for j in np.nonzero(norms > 1.2)[0]:
        while True:
            col = rng.normal(0.0, sigma, size=n)
            if np.linalg.norm(col) <= 1.2:
                A[:, j] = col
                break
    return Instance(A, "gaussian", seed, col_norm_bound=1.2)


def gen_haar(n: int, seed: int) -> Instance:
    """Orthogonal matrix distributed per the Haar measure.

    Samples an i.i.d. Gaussian matrix and orthonormalizes it; fixing the signs
    by the diagonal of R makes the QR factorization Haar-distributed.  A
    numerically degenerate draw is resampled, never surfaced as an error.
    """
    if n < 2:
        raise InstanceError("haar family needs n >= 2")
    rng = _rng(seed, "instance.haar")
    while True:
        G = rng.standard_normal((n, n))
        Q, R = np.linalg.qr(G)
        d = np.diag(R)
        if np.abs(d).min() < 1e-12:  # near-dependent columns: resample
            continue
        Q = Q * np.sign(d)
        if np.abs(Q.T @ Q - np.eye(n)).max() <= 1e-8:
            return Instance(Q, "haar", seed, col_norm_bound=1.0)


def gen_regular_system(n: int, s: int, seed: int) -> Instance:
    """0/1 incidence matrix with exactly s ones in every row and column.

    Bipartite configuration model: a random perfect matching of row stubs to
    column stubs, followed by local resampling of duplicate edges (swap with a
    random other edge) until the multigraph is simple.  Capped at 1000 repair
    sweeps, then an error.
    """
    if not (1 <= s <= n):
        raise InstanceError("need 1 <= s <= n")
    if (n * s) % 2 != 0:
        raise InstanceError("n*s must be even")
    rng = _rng(seed, "instance.regular")
    ns = n * s
    # right[t] = column owning stub t; row of stub t is t // s.
    for _ in range(64):  # full restarts if repair stalls
        right = np.repeat(np.arange(n), s)
        rng.shuffle(right)
        if _repair_duplicates(right, n, s, rng):
            A = np.zeros((n, n))
            rows = np.repeat(np.arange(n), s)
            A[rows, right] = 1.0
            return Instance(
                A,
                "regular-set-system",
                seed,
                col_norm_bound=float(np.sqrt(s)),
                col_sparsity=s,
            )
    raise InstanceError("duplicate-edge resampling failed to produce a simple graph")


def _repair_duplicates(right: np.ndarray, n: int, s: int, rng) -> bool:
    ns = n * s
    for _ in range(1000):
        used = set()
        dup = []
        for t in range(ns):
            key = (t // s, right[t])
            if key in used:
                dup.append(t)
            else:
                used.add(key)
        if not dup:
            return True
        for t in dup:
            for _ in range(64):
                u = int(rng.integers(ns))
                # Swap stub targets when neither new edge already exists.
                a = (t // s, right[u])
                b = (u // s, right[t])
                if a not in used and b not in used and a != b:
                    right[t], right[u] = right[u], right[t]
                    break
            else:
                break  # give this sweep up, recount and retry
    return False


def gen_twisted_hypercube(d: int, mode: str, seed: int) -> Instance:
    """Adjacency matrix of a 2^d-vertex twisted hypercube.

    Level i joins two copies of the level-(i-1) graph by a perfect matching:
    the identity matching in deterministic mode (giving the standard
    hypercube) or a fresh uniformly random matching per level in random mode.
    Every vertex ends with degree d.
    """
    if d < 1:
        raise InstanceError("need d >= 1")
    if d > 20:
        raise InstanceError("d > 20 exceeds the dense-matrix size guard")
    if mode not in ("deterministic", "random"):
        raise InstanceError(f"unknown mode {mode!r}")
    rng = _rng(seed, "instance.twisted")
    A = np.zeros((1, 1))
    for level in range(1, d + 1):
        m = A.shape[0]
        top = np.zeros((2 * m, 2 * m))
        top[:m, :m] = A
        top[m:, m:] = A
        perm = rng.permutation(m) if mode == "random" else np.arange(m)
        top[np.arange(m), m + perm] = 1.0
        top[m + perm, np.arange(m)] = 1.0
        A = top
    return Instance(
        A,
        "twisted-hypercube",
        seed,
        col_norm_bound=float(np.sqrt(d)),
        col_sparsity=d,
    )


def haar_moment_estimate(n: int, trials: int, seed: int):
    """Monte-Carlo joint entry moments of a Haar orthogonal matrix.

    Returns three (estimate, standard_error) pairs for

        E[A_11^8],   E[A_11^4 A_12^4],   E[A_11^2 A_12^2 A_21^2 A_22^2].

    Each sampled matrix contributes the average over all index positions
    compatible with the moment (same row / distinct columns / 2x2 minors),
    which the symmetry of the Haar measure makes exchangeable.
    """
    if n < 2:
        raise InstanceError("need n >= 2")
    if trials < 100:
        raise InstanceError("need at least 100 trials")
    rng = _rng(seed, "instance.haarmoments")
    m8 = np.empty(trials)
    m44 = np.empty(trials)
    m2222 = np.empty(trials)
    for t in range(trials):
        G = rng.standard_normal((n, n))
        Q, R = np.linalg.qr(G)
        Q = Q * np.sign(np.diag(R))
        Q2 = Q * Q
        Q4 = Q2 * Q2
        m8[t] = (Q4 * Q4).mean()
        s4 = Q4.sum(axis=1)
        m44[t] = ((s4 * s4 - (Q4 * Q4).sum(axis=1)).sum()) / (n * n * (n - 1))
        # 2x2 minors: sum over i!=k, j!=l of Q2[i,j]Q2[i,l]Q2[k,j]Q2[k,l],
        # by inclusion-exclusion over the diagonal index collisions.
        S = Q2 @ Q2.T  # S[i,k] = sum_j Q2[i,j] Q2[k,j]
        total = (S * S).sum()
        total -= (s4 * s4).sum()  # i == k
        total -= (Q4 @ Q4.T).sum()  # j == l
        total += (Q4 * Q4).sum()  # i == k and j == l, removed twice
        m2222[t] = total / (n * n * (n - 1) * (n - 1))
    out = []
    for arr in (m8, m44, m2222):
        out.append((float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(trials))))
    return tuple(out)


def haar_moment_formulas(n: int):
    """Closed forms the Monte-Carlo estimates are checked against."""
    d = n * (n + 2) * (n + 4) * (n + 6)
    return (
        105.0 / d,
        9.0 / d,
        (n * n + 4.0 * n + 15.0) / (n * (n + 2) * (n - 1) * (n + 1) * (n + 4) * (n + 6)),
    )


def save_instance(inst: Instance, path) -> None:
    """Write ``<path>.csv`` (row-major entries) and ``<path>.meta.json``."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix == ".csv" else path
    np.savetxt(base.with_suffix(".csv"), inst.entries, fmt="%.17g", delimiter=",")
    meta = {
        "family": inst.family,
        "m": inst.rows,
        "n": inst.cols,
        "seed": inst.seed,
        "col_norm_bound": inst.col_norm_bound,
        "col_sparsity": inst.col_sparsity,
    }
    base.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_instance(path) -> Instance:
    """Load an instance written by save_instance; metadata is re-validated."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".csv", ".json") else path
    if str(base).endswith(".meta"):
        base = Path(str(base)[: -len(".meta")])
    entries = np.loadtxt(base.with_suffix(".csv"), delimiter=",", ndmin=2)
    meta = json.loads(base.with_suffix(".meta.json").read_text())
    inst = Instance(
        entries,
        meta["family"],
        int(meta["seed"]),
        float(meta["col_norm_bound"]),
        meta.get("col_sparsity"),
    )
    if inst.rows != meta["m"] or inst.cols != meta["n"]:
        raise InstanceError("metadata shape disagrees with entries")
    return inst
