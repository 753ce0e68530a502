"""Colorers for pseudorandom square instances (Komlos / Beck-Fiala setting).

The driving quantity is the operator norm of the entrywise-squared matrix on
the subspace orthogonal to the all-ones vector (``lambda_param``).  While a
row retains restricted squared mass above ``8*lambda`` it behaves as if the
frozen coordinates were random, and its discrepancy is controlled by per-group
power-regularized potentials; once the mass drops below that threshold the row
"exits", its running discrepancy is anchored, and the remainder is controlled
by a softened-max potential of thresholded rows that the walk keeps
nonincreasing.

``komlos_color`` runs the combined walk; ``beck_fiala_color`` rescales a
0/+-1 column-sparse instance by 1/sqrt(s) and reports both certificates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from discforge import _kernels
from discforge.instance import Instance
from discforge.regmax import RegParams, lq_value_grad
from discforge.subspace import SubspaceBasis, orth_complement_within
from discforge.walk import PartialColoring, WalkTrace, WalkError

__all__ = [
    "PseudoState",
    "PseudoResult",
    "lambda_param",
    "row_groups",
    "pseudo_state_update",
    "phi_oracle",
    "psi_oracle",
    "komlos_color",
    "beck_fiala_color",
]

K_CONST = 9.0
EPSILON = 0.19
ALPHA_QSUB = 1.0 / 8.0
UNDEFINED_THRESHOLD = 32
DV = 4  # walking-subspace dimension handed to the kernels
PHI_Q = 0.5


class PseudoError(RuntimeError):
    pass


def lambda_param(A: Instance, tol: float = 1e-6) -> float:
    """Operator norm of the entrywise-squared matrix on the 1-orthogonal space.

    Power iteration on (PB)^T(PB) with P the centering projector and
    B = A entrywise squared; deterministic start vector, residual-based stop
    well inside ``tol``.  Cross-checked against a dense SVD in the tests.
    """
    ent = A.entries if isinstance(A, Instance) else np.asarray(A, dtype=np.float64)
    if ent.shape[0] != ent.shape[1]:
        raise ValueError("lambda parameter needs a square matrix")
    n = ent.shape[0]
    B = ent * ent

    def op(u):
        v = u - u.mean()
        w = B @ v
        w = B.T @ w
        return w - w.mean()

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([0xA1B2, n])))
    u = rng.standard_normal(n)
    u -= u.mean()
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        return 0.0
    u /= nrm
    rho = 0.0
    for _ in range(100_000):
        w = op(u)
        rho = float(u @ w)
        res = np.linalg.norm(w - rho * u)
        nw = np.linalg.norm(w)
        if nw <= 1e-30:
            return 0.0
        u = w / nw
        if res <= 0.5 * tol * max(rho, 1e-30):
            break
    return float(np.sqrt(max(rho, 0.0)))


def row_groups(A: Instance) -> list[np.ndarray]:
    """Partition of the rows by total squared mass into dyadic groups.

    Group 0 holds rows with mass at most 1, group r the rows with mass in
    (2^(r-1), 2^r].  Sizes satisfy |group r| <= n 2^(1-r) by double counting.
    """
    ent = A.entries if isinstance(A, Instance) else np.asarray(A, dtype=np.float64)
    masses = (ent * ent).sum(axis=1)
    gid = _group_ids(masses)
    rmax = int(gid.max(initial=0))
    return [np.nonzero(gid == r)[0] for r in range(rmax + 1)]


def _group_ids(masses: np.ndarray) -> np.ndarray:
    gid = np.zeros(masses.shape[0], dtype=np.int64)
    big = masses > 1.0
    gid[big] = np.ceil(np.log2(masses[big], where=big[big])).astype(np.int64)
    gid[big] = np.maximum(gid[big], 1)
    return gid


@dataclass
class PseudoState:
    """Walk-wide bookkeeping for the pseudorandom machinery."""

    lam: float
    lam_eff: float
    eta: float  # softened-max scale sqrt(log n / lam_eff)
    K: float
    epsilon: float
    B: np.ndarray  # thresholded matrix
    groups: list  # dyadic row groups by total mass
    group_of_row: np.ndarray
    in_p: np.ndarray  # rows still in the pseudorandom set
    exit_step: np.ndarray
    anchor: np.ndarray  # <A_i, x(exit_i)> per row
    exceptional: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @classmethod
    def create(cls, A: Instance, lam: float) -> "PseudoState":
        n = A.cols
        lam_eff = max(lam, 1.0 / math.log(max(n, 3)))
        eta = math.sqrt(math.log(max(n, 3)) / lam_eff)
        thresh = 1.0 / (16.0 * K_CONST**2 * eta**2)
        ent = A.entries
        B = np.where(ent * ent <= thresh, ent, 0.0)
        masses = (ent * ent).sum(axis=1)
        return cls(
            lam=lam,
            lam_eff=lam_eff,
            eta=eta,
            K=K_CONST,
            epsilon=EPSILON,
            B=B,
            groups=row_groups(A),
            group_of_row=_group_ids(masses),
            in_p=np.ones(A.rows, dtype=bool),
            exit_step=np.full(A.rows, -1, dtype=np.int64),
            anchor=np.zeros(A.rows),
        )

    def group_eta(self, r: int, n: int) -> float:
        return math.sqrt(n * 2.0 ** (1 - r))


def pseudo_state_update(state: PseudoState, A: Instance, coloring: PartialColoring) -> PseudoState:
    """Move rows out of the pseudorandom set and recompute the exceptional set.

    A row exits permanently once its squared mass restricted to the active
    coordinates drops to 8*lambda; its running discrepancy is anchored at the
    exit step.  The exceptional set holds still-pseudorandom rows whose
    restricted mass exceeds twice the average-case prediction; the counting
    argument bounds it by |F|/16, and a larger set signals a bad lambda.
    """
    ent = A.entries
    F = coloring.F
    k = F.size
    rest = (ent[:, F] ** 2).sum(axis=1) if k else np.zeros(ent.shape[0])
    tot = (ent**2).sum(axis=1)
    exiting = state.in_p & (rest <= 8.0 * state.lam)
    if exiting.any():
        y = ent @ coloring.x
        state.anchor[exiting] = y[exiting]
        state.exit_step[exiting] = coloring.t
        state.in_p[exiting] = False
    I = np.nonzero(state.in_p & (rest > (2.0 * k / ent.shape[1]) * tot))[0]
    if I.size > k / 16.0:
        raise PseudoError(
            f"exceptional set has {I.size} rows > |F|/16 = {k / 16.0:.2f}; "
            "lambda is likely underestimated"
        )
    state.exceptional = I
    return state


def _phi_budget_dims(k: int, n: int, live_groups: list[int], eps: float):
    """Largest k_r scale whose rounded per-group dimensions fit in k/8."""
    r0s = int(math.ceil(math.log2(32.0 * n / k)))
    rs = [r for r in live_groups if r <= r0s]

    def cost(c1):
        return sum(2 * math.ceil(max(c1 * (k * 2.0**r / n) ** eps * k, 1e-12) / 2.0) for r in rs)

    if not rs:
        return r0s, {}, 0.0
    if cost(1e-9) > k / 8.0:
        return r0s, None, 0.0  # cannot honor the budget; caller stops the walk
    lo, hi = 1e-9, 8.0
    while cost(hi) <= k / 8.0 and hi < 1e9:
        hi *= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if cost(mid) <= k / 8.0:
            lo = mid
        else:
            hi = mid
    kr = {r: lo * (k * 2.0**r / n) ** eps * k for r in rs}
    return r0s, kr, lo


def _phi_parts(A: Instance, state: PseudoState, x: np.ndarray, t: int):
    """Constraints, per-group forms and diagnostics for the group potentials.

    Returns None when the active set is too small to honor the codimension
    budget.  Output dict carries everything the driver and the contract-level
    phi_oracle need: constraint vectors, per-group gradients/weights, the
    selection quadratic, and bookkeeping for the ledger.
    """
    ent = A.entries
    n = ent.shape[1]
    F = np.nonzero(np.abs(x) != 1.0)[0]
    k = F.size
    live_groups = sorted(
        {int(state.group_of_row[i]) for i in range(ent.shape[0]) if state.in_p[i]}
    )
    r0s, kr, c1 = _phi_budget_dims(k, n, live_groups, state.epsilon)
    if kr is None:
        return None
    cons: list[np.ndarray] = []
    # rows too heavy for any group budget, and the exceptional set
    heavy = [i for i in np.nonzero(state.in_p)[0] if state.group_of_row[i] > r0s]
    cons.extend(ent[i] for i in heavy)
    cons.extend(ent[i] for i in state.exceptional)
    y = ent @ x
    per_group = {}
    exc = set(state.exceptional.tolist())
    for r, kr_val in kr.items():
        rows = [i for i in state.groups[r] if state.in_p[i]] if r < len(state.groups) else []
        rows = [i for i in rows if i not in exc]
        if not rows:
            continue
        members = state.groups[r]
        pi = np.concatenate([_pi_values(state, y, members), -_pi_values(state, y, members)])
        eta_r = state.group_eta(r, n)
        ev = lq_value_grad(pi, RegParams("lq", PHI_Q, eta_r))
        gplus = ev.grad[: members.size]
        gminus = ev.grad[members.size :]
        w = np.zeros(ent.shape[0])
        live_mask = state.in_p[members]
        w_members = gplus ** (2.0 - PHI_Q) + gminus ** (2.0 - PHI_Q)
        w[members] = np.where(live_mask, w_members, 0.0)
        ncut = int(math.ceil(kr_val / 2.0))
        order = sorted(rows, key=lambda i: -w[i])
        i_r = order[:ncut]
        keep = [i for i in rows if i not in set(i_r)]
        cons.extend(ent[i] for i in i_r)
        top_vecs = []
        if keep:
            Mr = (ent[keep][:, F] * w[keep][:, None]).T @ ent[keep][:, F]
            vals, vecs = sla.eigh(Mr)
            nv = min(ncut, vecs.shape[1])
            for col in range(vecs.shape[1] - nv, vecs.shape[1]):
                v = np.zeros(n)
                v[F] = vecs[:, col]
                top_vecs.append(v)
            cons.extend(top_vecs)
        form = np.zeros(n)
        live_members = members[live_mask]
        form += ent[live_members].T @ (gplus[live_mask] - gminus[live_mask])
        per_group[r] = {
            "eta": eta_r,
            "kr": kr_val,
            "value": ev.value,
            "grad_plus": gplus,
            "grad_minus": gminus,
            "weights": w,
            "form": form,
            "keep": keep,
            "ncut": ncut,
        }
    return {
        "F": F,
        "k": k,
        "r0s": r0s,
        "c1": c1,
        "constraints": cons,
        "groups": per_group,
        "heavy": heavy,
        "y": y,
    }


def _pi_values(state: PseudoState, y: np.ndarray, members: np.ndarray) -> np.ndarray:
    out = y[members].copy()
    dead = ~state.in_p[members]
    out[dead] = state.anchor[members][dead]
    return out


def phi_oracle(A: Instance, coloring: PartialColoring, state: PseudoState):
    """Subspace on which every group potential obeys its quadratic budget.

    Returns (SubspaceBasis, list of first-order forms ordered by group) or
    None when the active set is too small.  Codimension is at most
    k/16 + k/16 + k/8 plus the per-group rounding, i.e. k/4 + O(log n).
    """
    if coloring.F.size < UNDEFINED_THRESHOLD:
        return None
    parts = _phi_parts(A, state, coloring.x, coloring.t)
    if parts is None:
        return None
    k = parts["k"]
    S = orth_complement_within(parts["F"], parts["constraints"], n=A.cols)
    codim = k - S.dim
    budget = k / 4.0 + 2.0 * (parts["r0s"] + 2)
    if codim > budget:
        raise PseudoError(f"phi oracle codimension {codim} exceeds {budget:.1f}")
    forms = [parts["groups"][r]["form"] for r in sorted(parts["groups"])]
    return S, forms


def _psi_parts(state: PseudoState, x: np.ndarray, xanchor: np.ndarray, F: np.ndarray):
    """Fresh softened-max data for the exited rows at the current point."""
    ex = np.nonzero(~state.in_p)[0]
    if ex.size == 0:
        return None
    B = state.B
    diffs = x[None, :] - xanchor[ex]
    Bex = B[ex]
    d = (Bex * diffs).sum(axis=1)
    B2 = Bex * Bex
    q = (B2 * diffs * diffs).sum(axis=1)
    keta = state.K * state.eta
    pi_plus = d - keta * q
    pi_minus = -d - keta * q
    mx = max(0.0, float(np.max(pi_plus)), float(np.max(pi_minus)))
    npin = 2 * int(state.in_p.sum())
    ep = np.exp(state.eta * (pi_plus - mx))
    en = np.exp(state.eta * (pi_minus - mx))
    z = float(ep.sum() + en.sum() + npin * math.exp(-state.eta * mx))
    wp = ep / z
    wm = en / z
    psi = mx + math.log(z) / state.eta
    cmat = B2 * diffs
    return {
        "ex": ex,
        "d": d,
        "q": q,
        "wp": wp,
        "wm": wm,
        "psi": psi,
        "npin": npin,
        "Bex": Bex,
        "B2": B2,
        "cmat": cmat,
        "v1": Bex.T @ (wp - wm),
        "v2": cmat.T @ (wp + wm),
    }


def _qsub_constraints(w: np.ndarray, mat: np.ndarray, alpha: float, F: np.ndarray, n: int):
    """Constraint vectors of the weighted-column quadratic-domination subspace."""
    Bf = np.sqrt(w)[:, None] * mat[:, F]
    g = np.linalg.norm(Bf, axis=0)
    live = g > 0.0
    if not live.any():
        return []
    ncut = int(np.ceil(alpha * F.size))
    C = Bf[:, live] / g[live]
    G = C.T @ C
    vals, vecs = sla.eigh(G)
    out = []
    for col in range(max(vecs.shape[1] - ncut, 0), vecs.shape[1]):
        v = np.zeros(n)
        v[F[live]] = vecs[:, col] * g[live]
        out.append(v)
    return out


def psi_oracle(state: PseudoState, coloring: PartialColoring, xanchor: np.ndarray, n: int):
    """Subspace on which the softened-max of exited rows cannot increase.

    Complements the two first-order vectors and applies the quadratic
    domination construction (alpha = 1/8) to the thresholded rows and to
    their anchored-square companions; codimension at most k/4 + 2.
    """
    F = coloring.F
    parts = _psi_parts(state, coloring.x, xanchor, F)
    if parts is None:
        return orth_complement_within(F, [], n=n), []
    w = parts["wp"] + parts["wm"]
    cons = [parts["v1"], parts["v2"]]
    cons += _qsub_constraints(w, parts["Bex"], ALPHA_QSUB, F, n)
    cons += _qsub_constraints(w, parts["cmat"], ALPHA_QSUB, F, n)
    S = orth_complement_within(F, cons, n=n)
    k = F.size
    if k - S.dim > k / 4.0 + 2.0:
        raisePseudoError = PseudoError(f"psi oracle codimension {k - S.dim} exceeds k/4+2")
        raise raisePseudoError
    return S, cons


@dataclass
class PseudoResult:
    coloring: np.ndarray
    realized: float
    trace: WalkTrace
    report: dict
    state: PseudoState


def komlos_color(
    A: Instance,
    tol: float = 1e-6,
    tracing: bool = False,
    cadence: int = 4096,
) -> PseudoResult:
    """Color a square unit-column instance with the combined two-potential walk."""
    ent = A.entries
    n = ent.shape[1]
    if ent.shape[0] != n:
        raise ValueError("need a square matrix")
    if np.linalg.norm(ent, axis=0).max(initial=0.0) > 1.0 + 1e-9:
        raise ValueError("columns must have norm at most 1")
    lam = lambda_param(A, tol)
    state = PseudoState.create(A, lam)
    return _pseudo_walk(A, state, tracing=tracing, cadence=cadence, rescale=1.0)


def beck_fiala_color(A: Instance, tol: float = 1e-6, tracing: bool = False) -> PseudoResult:
    """Color a 0/+-1 column-s-sparse instance via the rescaled machinery.

    Both certificate routes are reported: sqrt(s)(1 + sqrt(lambda' log n))
    from the softened-max side and sqrt(s) + lambda(A) from the sparsity of
    exited rows; the returned report records their minimum.
    """
    ent = A.entries
    vals = np.unique(ent)
    if not np.all(np.isin(vals, (-1.0, 0.0, 1.0))):
        raise ValueError("entries must lie in {0, +1, -1}")
    s = A.col_sparsity
    if s is None:
        raise ValueError("instance must declare column sparsity")
    nnz = (ent != 0).sum(axis=0).max(initial=0)
    if nnz > s:
        raise ValueError("declared sparsity does not bound the columns")
    n = ent.shape[1]
    scaled = Instance(
        ent / math.sqrt(s), "file", A.seed, col_norm_bound=1.0, col_sparsity=s
    )
    lam_scaled = lambda_param(scaled, tol)
    lam_orig = lam_scaled * s
    state = PseudoState.create(scaled, lam_scaled)
    res = _pseudo_walk(scaled, state, tracing=tracing, cadence=4096, rescale=math.sqrt(s))
    realized = float(np.abs(ent @ res.coloring).max())
    logn = math.log(max(n, 3))
    cert_soft = math.sqrt(s) * (1.0 + math.sqrt(lam_scaled * logn))
    cert_sparse = math.sqrt(s) + lam_orig
    res.report.update(
        {
            "s": s,
            "lambda_original": lam_orig,
            "realized_original_scale": realized,
            "certificate_softmax": cert_soft,
            "certificate_sparsity": cert_sparse,
            "certificate_min": min(cert_soft, cert_sparse),
            "theorem_bracket": math.sqrt(s)
            + min(math.sqrt(lam_orig * logn), lam_orig),
        }
    )
    res.realized = realized
    return res


def _pseudo_walk(A: Instance, state: PseudoState, tracing: bool, cadence: int, rescale: float):
    ent = A.entries
    n = ent.shape[1]
    Ad = np.vstack([ent, -ent])
    L = 1.0 / (16.0 * math.sqrt(2.0 * n))
    budget_steps = int(np.ceil(n / L**2)) + n + 2
    eps = state.epsilon
    rmax = len(state.groups) - 1

    x = np.zeros(n)
    y2 = np.zeros(2 * n)
    xanchor = np.zeros((n, n))
    tail_l1 = np.zeros(n)
    thresh_diff = np.zeros(n, dtype=np.int64)
    a2 = np.zeros(2 * n)
    live2 = np.ones(2 * n, dtype=bool)

    walk_state = np.zeros(5)
    acc = np.zeros(4)
    acc_denom_global = np.zeros(rmax + 8)
    phi0 = {}
    for r, members in enumerate(state.groups):
        if members.size:
            eta_r = state.group_eta(r, n)
            phi0[r] = (2.0 * members.size) ** (1.0 - PHI_Q) / (eta_r * PHI_Q)

    trace = WalkTrace(n=n, L=L, algorithm="komlos")
    tsz = budget_steps if tracing else 0
    tr_step, tr_dot, tr_frozen, tr_k = (np.zeros(tsz) for _ in range(4))
    tr_psib = np.full(tsz, np.nan)
    tr_psia = np.full(tsz, np.nan)
    snapshots = []

    refreshes = 0
    psi_violations = 0
    last_violation_t = -1
    consecutive = 0
    stop_reason = "undefined-threshold"
    while True:
        F = np.nonzero(np.abs(x) != 1.0)[0]
        k = F.size
        if k < UNDEFINED_THRESHOLD:
            break
        coloring = PartialColoring(x.copy(), int(walk_state[0]))
        pseudo_state_update(state, A, coloring)
        newly = (state.exit_step == coloring.t) & ~state.in_p & (tail_l1 == 0.0)
        for i in np.nonzero(newly)[0]:
            xanchor[i] = x
            a2[i] = state.anchor[i]
            a2[i + n] = -state.anchor[i]
            live2[i] = live2[i + n] = False
            tail_l1[i] = float(np.abs(ent[i, F]).sum())
            thresh_diff[i] = int((ent[i, F] != state.B[i, F]).sum())
        parts = _phi_parts(A, state, x, int(walk_state[0]))
        if parts is None:
            stop_reason = "codimension-budget"
            break
        cons = list(parts["constraints"])
        psi_parts = _psi_parts(state, x, xanchor, F)
        if psi_parts is not None:
            w = psi_parts["wp"] + psi_parts["wm"]
            cons.append(psi_parts["v1"])
            cons.append(psi_parts["v2"])
            cons += _qsub_constraints(w, psi_parts["Bex"], ALPHA_QSUB, F, n)
            cons += _qsub_constraints(w, psi_parts["cmat"], ALPHA_QSUB, F, n)
        if len(cons) >= k - DV - 1:
            stop_reason = "codimension-budget"
            break
        Scomp = orth_complement_within(F, cons, n=n)
        refreshes += 1
        # walking directions: bottom of the combined group quadratic inside S
        Msel = np.zeros((k, k))
        for r, info in parts["groups"].items():
            keep = info["keep"]
            if keep:
                w_keep = info["weights"][keep]
                Ak = ent[keep][:, F]
                Msel += 2.0 * info["eta"] * 2.0 ** (-eps * r) * (Ak * w_keep[:, None]).T @ Ak
        basis_local = Scomp.basis[F]
        Mproj = basis_local.T @ Msel @ basis_local
        vals, vecs = sla.eigh(Mproj)
        dv = min(DV, vecs.shape[1])
        V = Scomp.basis @ vecs[:, :dv]
        y2 = Ad @ x
        W2 = Ad @ V
        p = V.T @ x
        cumc_x = np.zeros(dv)
        cumc_y = np.zeros(dv)
        # group slots for the sign form and the ledger coefficients
        dcoef = np.zeros(acc_denom_global.shape[0])
        gphi = np.zeros(dv)
        for r, info in parts["groups"].items():
            dcoef[r] = (k * 2.0**r / n) ** eps / k
            gphi += 2.0 ** (-eps * r) * (V.T @ info["form"])
        acc_local = np.zeros_like(acc_denom_global)
        snapshots.append(
            {
                "t": int(walk_state[0]),
                "k": k,
                "codim": k - Scomp.dim,
                "phi": {r: parts["groups"][r]["value"] for r in parts["groups"]},
                "psi": psi_parts["psi"] if psi_parts else None,
                "n_exited": int((~state.in_p).sum()),
            }
        )
        Fi = F.astype(np.int64)
        Vf = np.zeros((k, dv + 1))
        Vf[:, :dv] = V[F]
        if psi_parts is None:
            walk_state[2] = float((1.0 - np.abs(x[F])).min())
            walk_state[3] = float(np.sqrt((Vf[:, :dv] ** 2).sum(axis=1)).max())
            consts = np.array([L, dv, budget_steps, cadence], dtype=np.float64)
            work = np.zeros((2, dv))
            while True:
                ev = _kernels.komlos_phase_a(
                    x, Fi, Vf, p, cumc_x, cumc_y, gphi, dcoef, acc_local,
                    walk_state, consts, acc, work,
                    tracing, tr_step, tr_dot, tr_frozen, tr_k,
                )
                x[F] += V[F] @ cumc_x
                cumc_x[:] = 0.0
                y2 += W2 @ cumc_y
                cumc_y[:] = 0.0
                if ev == _kernels.EV_CADENCE:
                    gphi = _refresh_sign_form(state, parts, ent, V, y2, a2, n, eps)
                    continue
                break
        else:
            ex = psi_parts["ex"]
            WB = psi_parts["Bex"] @ V
            B2ex = psi_parts["B2"]
            Ptens = np.einsum("ij,jl,jm->ilm", B2ex, V, V).reshape(ex.size, dv * dv)
            h = (psi_parts["cmat"] @ V).astype(np.float64)
            dnow = psi_parts["d"].copy()
            qnow = psi_parts["q"].copy()
            wplus = psi_parts["wp"].copy()
            wminus = psi_parts["wm"].copy()
            walk_state[2] = psi_parts["psi"]
            walk_state[3] = psi_parts["npin"]
            consts = np.array(
                [L, dv, budget_steps, cadence, state.K * state.eta, state.eta, 1e-8],
                dtype=np.float64,
            )
            work = np.zeros((4, dv))
            while True:
                ev = _kernels.komlos_phase_b(
                    x, Fi, Vf, p, cumc_y, gphi, WB, h, Ptens, dnow, qnow,
                    wplus, wminus, dcoef, acc_local, walk_state, consts, acc, work,
                    tracing, tr_step, tr_dot, tr_frozen, tr_k, tr_psib, tr_psia,
                )
                y2 += W2 @ cumc_y
                cumc_y[:] = 0.0
                if ev == _kernels.EV_CADENCE:
                    gphi = _refresh_sign_form(state, parts, ent, V, y2, a2, n, eps)
                    continue
                break
        acc_denom_global += acc_local
        if ev == _kernels.EV_BUDGET:
            raise WalkError("step budget exhausted (nontermination bug)")
        if ev == _kernels.EV_PSIVIOL:
            psi_violations += 1
            if int(walk_state[0]) == last_violation_t:
                consecutive += 1
            else:
                consecutive = 1
                last_violation_t = int(walk_state[0])
            if consecutive > 2:
                raise WalkError("softmax potential increased twice with a fresh oracle")
            continue
        if ev == _kernels.EV_DEGENERATE:
            raise WalkError("no feasible direction inside the walking subspace")
        consecutive = 0

    nsteps = int(walk_state[0])
    if tracing:
        trace.step_len = list(tr_step[:nsteps])
        trace.dot_x_delta = list(tr_dot[:nsteps])
        trace.frozen_total = [int(v) for v in tr_frozen[:nsteps]]
        trace.active_at_step = [int(v) for v in tr_k[:nsteps]]
        trace.potentials["psi_before"] = list(tr_psib[:nsteps])
        trace.potentials["psi_after"] = list(tr_psia[:nsteps])
    trace.final_x = x.copy()
    coloring = np.where(x >= 0.0, 1.0, -1.0)
    realized = float(np.abs(ent @ coloring).max())
    report = _final_report(
        A, state, x, coloring, xanchor, a2, tail_l1, thresh_diff,
        phi0, acc_denom_global, snapshots, nsteps, refreshes, psi_violations,
        acc, L, rescale, stop_reason,
    )
    return PseudoResult(coloring, realized, trace, report, state)


def _refresh_sign_form(state, parts, ent, V, y2, a2, n, eps):
    gphi = np.zeros(V.shape[1])
    for r, info in parts["groups"].items():
        members = state.groups[r]
        pi = np.concatenate(
            [
                np.where(state.in_p[members], y2[members], a2[members]),
                np.where(state.in_p[members], y2[members + n], a2[members + n]),
            ]
        )
        ev = lq_value_grad(pi, RegParams("lq", PHI_Q, info["eta"]))
        live = state.in_p[members]
        gp = ev.grad[: members.size][live]
        gm = ev.grad[members.size :][live]
        form = ent[members[live]].T @ (gp - gm)
        gphi += 2.0 ** (-eps * r) * (V.T @ form)
    return gphi


def _final_report(
    A, state, x, coloring, xanchor, a2, tail_l1, thresh_diff, phi0,
    acc_denom, snapshots, nsteps, refreshes, psi_violations, acc, L,
    rescale, stop_reason,
):
    ent = A.entries
    n = ent.shape[1]
    y_final = ent @ x
    phi_final = {}
    ledger = {}
    for r, members in enumerate(state.groups):
        if not members.size:
            continue
        pi = np.concatenate(
            [
                np.where(state.in_p[members], y_final[members], state.anchor[members]),
                np.where(state.in_p[members], -y_final[members], -state.anchor[members]),
            ]
        )
        ev = lq_value_grad(pi, RegParams("lq", PHI_Q, state.group_eta(r, n)))
        phi_final[r] = float(ev.value)
        incr = phi_final[r] - phi0[r]
        denom = float(acc_denom[r])
        ledger[r] = {
            "increase": incr,
            "denom": denom,
            "constant": incr / denom if denom > 1e-12 else 0.0,
        }
    exited = np.nonzero(~state.in_p)[0]
    anchors_abs = np.abs(state.anchor[exited]) if exited.size else np.zeros(1)
    psi_parts = _psi_parts(state, x, xanchor, np.nonzero(np.abs(x) != 1.0)[0])
    b_disc = np.zeros(0)
    qcorr = np.zeros(0)
    thr_err = np.zeros(0)
    if exited.size:
        diffs = x[None, :] - xanchor[exited]
        b_disc = ((state.B[exited]) * diffs).sum(axis=1)
        qcorr = ((state.B[exited] ** 2) * diffs * diffs).sum(axis=1)
        thr_err = ((ent[exited] - state.B[exited]) * diffs).sum(axis=1)
    logn = math.log(max(n, 3))
    report = {
        "lambda": state.lam,
        "lambda_eff": state.lam_eff,
        "eta": state.eta,
        "L": L,
        "steps": nsteps,
        "refreshes": refreshes,
        "psi_violations": psi_violations,
        "stop_reason": stop_reason,
        "realized": float(np.abs(ent @ coloring).max()),
        "max_abs_dot": float(acc[1]),
        "max_step": float(acc[2]),
        "phi0": {r: float(v) for r, v in phi0.items()},
        "phi_final": phi_final,
        "phi_ledger": ledger,
        "psi_final": psi_parts["psi"] if psi_parts else None,
        "psi0": math.log(2 * n) / state.eta,
        "anchors_max": float(anchors_abs.max(initial=0.0)),
        "b_disc_max": float(np.abs(b_disc).max(initial=0.0)),
        "quad_corr_max": float(qcorr.max(initial=0.0)),
        "quad_corr_bound": float(4.0 * (state.B**2).sum(axis=1).max(initial=0.0)),
        "thresh_err_max": float(np.abs(thr_err).max(initial=0.0)),
        "thresh_err_scale": math.sqrt(max(state.lam, 1e-300) * logn),
        "thresh_diff_max": int(thresh_diff.max(initial=0)),
        "thresh_diff_bound": 8.0 * state.lam * 16.0 * state.K**2 * state.eta**2 + 1.0,
        "tail_l1_max": float(tail_l1.max(initial=0.0)),
        "n_exited": int(exited.size),
        "final_active": int((np.abs(x) != 1.0).sum()),
        "snapshots": snapshots,
        "rescale": rescale,
    }
    # anchor values are dominated by their group potential at the end
    for r, members in enumerate(state.groups):
        dead = members[~state.in_p[members]]
        if dead.size and r in phi_final:
            if np.abs(state.anchor[dead]).max() > phi_final[r] + 1e-7:
                raise PseudoError("anchored discrepancy exceeds its group potential")
    for r, info in ledger.items():
        if info["increase"] > 100.0 * max(info["denom"], 1e-9) + 1e-6:
            raise PseudoError(f"group {r} potential ledger constant exceeds 100")
    if qcorr.size and qcorr.max() > report["quad_corr_bound"] + 1e-9:
        raise PseudoError("quadratic correction exceeds 4x the thresholded row mass")
    return report
