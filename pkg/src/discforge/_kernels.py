"""Hot inner loops of the walk drivers and the resampler.

Every kernel is written once as a plain-python function over numpy arrays and
compiled with numba when the backend allows it; ``DISCFORGE_BACKEND=numpy``
selects the uncompiled twin (identical semantics, far slower, useful for
debugging and as a reference in the backend benchmark).

Kernels run batches of walk steps between "events" (a coordinate freezing, a
potential-ledger violation, budget exhaustion); the python drivers own oracle
construction and respond to events.

Event codes returned by the step loops:
    0  still running (never returned; internal)
    1  global step budget exhausted
    2  coordinates froze: active set changed, oracle must be rebuilt
    3  per-step potential ledger violated: step rolled back, refresh needed
"""

from __future__ import annotations

import numpy as np

from discforge._backend import NUMBA_ENABLED

EV_BUDGET = 1
EV_FREEZE = 2
EV_VIOLATION = 3

_SNAP = 1e-12
_LEDGER_SLACK = 1e-8


def _lq_newton(y, eta, lam, mz, qflag, q):
    """One warm-started multiplier solve; returns (lam, sum_pw_residual_ok).

    qflag 0: q = 1/2 (inverse squares), 1: q = 2/3 (inverse cubes),
    2: generic power.  y here is the potential argument (already the vector
    the regularizer sees, not yet scaled by eta).
    """
    m = y.shape[0]
    if lam < mz + 1.0:
        lam = mz + 1.0
    for _ in range(80):
        s = 0.0
        sd = 0.0
        if qflag == 0:
            for i in range(m):
                r = 1.0 / (lam - eta * y[i])
                r2 = r * r
                s += r2
                sd += r2 * r
            sd *= -2.0
        elif qflag == 1:
            for i in range(m):
                r = 1.0 / (lam - eta * y[i])
                r3 = r * r * r
                s += r3
                sd += r3 * r
            sd *= -3.0
        else:
            pw = 1.0 / (q - 1.0)
            for i in range(m):
                t = lam - eta * y[i]
                tp = t**pw
                s += tp
                sd += pw * tp / t
        g = s - 1.0
        if abs(g) < 1e-12:
            return lam, True
        lam = lam - g / sd
        if lam < mz + 1.0:
            lam = mz + 1.0
    return lam, abs(s - 1.0) < 1e-9


def _lq_fill_grad_value(y, eta, lam, grad, qflag, q):
    """Fill grad in place and return the potential value at y."""
    m = y.shape[0]
    val = 0.0
    pen = 0.0
    if qflag == 0:
        for i in range(m):
            r = 1.0 / (lam - eta * y[i])
            g = r * r
            grad[i] = g
            val += g * y[i]
            pen += r
        val += pen * 2.0 / eta
    elif qflag == 1:
        for i in range(m):
            r = 1.0 / (lam - eta * y[i])
            g = r * r * r
            grad[i] = g
            val += g * y[i]
            pen += r * r
        val += pen * 1.5 / eta
    else:
        pw = 1.0 / (q - 1.0)
        for i in range(m):
            t = lam - eta * y[i]
            g = t**pw
            grad[i] = g
            val += g * y[i]
            pen += g**q
        val += pen / (eta * q)
    return val


def spencer_steps(
    x,
    y,
    grad,
    scratch,
    Fidx,
    Vf,
    W,
    p,
    state,
    consts,
    tr_on,
    tr_step,
    tr_dot,
    tr_frozen,
    tr_k,
    tr_phib,
    tr_phia,
    tr_budget,
    acc,
):
    """Run doubled-row Spencer steps inside a fixed oracle subspace.

    Vf is (k, 3): columns 0-1 hold the orthonormal basis restricted to the
    active set, column 2 is per-step direction scratch.
    state: [t, frozen_count, lam, phi, gapmin] (mutated)
    consts: [eta, q, qflag, L, bcoef, kq1, t_budget, m2]
    acc: [ledger_pos_sum, sum_gamma2, max_abs_dot, max_step, n_newton_fail]
    Returns the event code; state[0] holds the step counter afterwards.
    """
    eta = consts[0]
    q = consts[1]
    qflag = int(consts[2])
    L = consts[3]
    bcoef = consts[4]
    kq1 = consts[5]
    t_budget = consts[6]
    m2 = int(consts[7])
    k = Fidx.shape[0]
    t = state[0]
    lam = state[2]
    phi = state[3]
    gapmin = state[4]

    while True:
        if t >= t_budget:
            state[0] = t
            state[2] = lam
            state[3] = phi
            state[4] = gapmin
            return EV_BUDGET
        # direction in coefficient space, orthogonal to p = V^T x
        pn = (p[0] * p[0] + p[1] * p[1]) ** 0.5
        if pn < 1e-14:
            c0 = 1.0
            c1 = 0.0
        else:
            c0 = -p[1] / pn
            c1 = p[0] / pn
        # sign selection against the current gradient: u = <grad, W c>
        u = 0.0
        for i in range(m2):
            scratch[i] = W[i, 0] * c0 + W[i, 1] * c1
            u += grad[i] * scratch[i]
        if u > 0.0:
            c0 = -c0
            c1 = -c1
            for i in range(m2):
                scratch[i] = -scratch[i]
        # packed direction on F, true orthogonality dot, max coordinate speed
        dot = 0.0
        dmax = 0.0
        for j in range(k):
            dj = Vf[j, 0] * c0 + Vf[j, 1] * c1
            Vf[j, 2] = dj
            xv = x[Fidx[j]]
            dot += dj * xv
            a = abs(dj)
            if a > dmax:
                dmax = a
        # crossing distance, skipping the scan while provably far from faces
        gamma = L
        crossed = False
        if gapmin <= L * dmax * 1.0000001 + 1e-15:
            eps = 1e300
            for j in range(k):
                dj = Vf[j, 2]
                if dj > 0.0:
                    e = (1.0 - x[Fidx[j]]) / dj
                elif dj < 0.0:
                    e = (-1.0 - x[Fidx[j]]) / dj
                else:
                    continue
                if e < eps:
                    eps = e
            if eps <= L:
                gamma = eps
                crossed = True
            newgap = 1e300
            for j in range(k):
                g = 1.0 - abs(x[Fidx[j]] + gamma * Vf[j, 2])
                if g < newgap:
                    newgap = g
            gapmin = newgap
        else:
            gapmin -= gamma * dmax
        # tentative move
        for j in range(k):
            x[Fidx[j]] += gamma * Vf[j, 2]
        mz = -1e300
        for i in range(m2):
            y[i] += gamma * scratch[i]
            zi = eta * y[i]
            if zi > mz:
                mz = zi
        p[0] += gamma * c0
        p[1] += gamma * c1
        lam_new, ok = _lq_newton(y, eta, lam, mz, qflag, q)
        if not ok:
            acc[4] += 1.0
        phi_new = _lq_fill_grad_value(y, eta, lam_new, grad, qflag, q)
        budget = bcoef * gamma * gamma * kq1
        if phi_new - phi > budget + _LEDGER_SLACK:
            # roll back and ask for a fresh oracle
            for j in range(k):
                x[Fidx[j]] -= gamma * Vf[j, 2]
            for i in range(m2):
                y[i] -= gamma * scratch[i]
            p[0] -= gamma * c0
            p[1] -= gamma * c1
            gapmin = -1.0  # force a rescan after refresh
            state[0] = t
            state[2] = lam
            state[3] = phi
            state[4] = gapmin
            return EV_VIOLATION
        if tr_on:
            tr_step[int(t)] = gamma
            tr_dot[int(t)] = dot
            tr_k[int(t)] = k
            tr_phib[int(t)] = phi
            tr_phia[int(t)] = phi_new
            tr_budget[int(t)] = budget
        d = phi_new - phi
        if d > 0.0:
            acc[0] += d
        acc[1] += gamma * gamma
        if abs(dot) > acc[2]:
            acc[2] = abs(dot)
        if gamma > acc[3]:
            acc[3] = gamma
        lam = lam_new
        phi = phi_new
        t += 1.0
        if crossed:
            nf = 0
            for j in range(k):
                xv = x[Fidx[j]]
                if xv >= 1.0 - _SNAP:
                    x[Fidx[j]] = 1.0
                    nf += 1
                elif xv <= -1.0 + _SNAP:
                    x[Fidx[j]] = -1.0
                    nf += 1
            state[1] += nf
            if tr_on:
                tr_frozen[int(t) - 1] = state[1]
            if nf > 0:
                state[0] = t
                state[2] = lam
                state[3] = phi
                state[4] = gapmin
                return EV_FREEZE
        if tr_on:
            tr_frozen[int(t) - 1] = state[1]


def tight_steps(
    x,
    y,
    pi,
    sigma,
    base,
    grad,
    scratch,
    Fidx,
    Vf,
    W,
    p,
    state,
    consts,
    tr_on,
    tr_step,
    tr_dot,
    tr_frozen,
    tr_k,
    tr_phib,
    tr_phia,
    tr_budget,
    acc,
):
    """Sign-proxy Spencer steps (square case, tightened constant).

    Row proxies pi_i = sigma_i * (y_i - base_i) reset to zero whenever the
    running inner product <A_i, x> changes sign; resets happen at the start
    of a step and only decrease the potential.  The Taylor ledger is checked
    with sigma frozen across the move.

    state: [t, frozen_count, lam, phi, gapmin]
    consts: [eta, q, qflag, L, bcoef, qb, t_budget, m]
      (budget per step = bcoef * gamma^2 * qb with qb from the oracle)
    acc: [ledger_pos_sum, sum_gamma2, max_abs_dot, max_step, n_newton_fail,
          n_resets, max_reset_jump]
    """
    eta = consts[0]
    q = consts[1]
    qflag = int(consts[2])
    L = consts[3]
    bcoef = consts[4]
    qb = consts[5]
    t_budget = consts[6]
    m = int(consts[7])
    k = Fidx.shape[0]
    t = state[0]
    lam = state[2]
    phi = state[3]
    gapmin = state[4]

    while True:
        if t >= t_budget:
            state[0] = t
            state[2] = lam
            state[3] = phi
            state[4] = gapmin
            return EV_BUDGET
        # proxy resets for rows whose discrepancy changed sign since anchor
        nreset = 0
        mz = -1e300
        for i in range(m):
            yi = y[i]
            if yi > 0.0 and sigma[i] < 0 or yi < 0.0 and sigma[i] > 0:
                sigma[i] = 1 if yi > 0.0 else -1
                base[i] = yi
                pi[i] = 0.0
                nreset += 1
            zi = eta * pi[i]
            if zi > mz:
                mz = zi
        if nreset > 0:
            acc[5] += nreset
            lam, ok = _lq_newton(pi, eta, lam, mz, qflag, q)
            if not ok:
                acc[4] += 1.0
            phi_reset = _lq_fill_grad_value(pi, eta, lam, grad, qflag, q)
            if phi_reset - phi > acc[6]:
                acc[6] = phi_reset - phi
            phi = phi_reset
        # direction and sign selection (d pi_i = sigma_i <A_i, delta>)
        pn = (p[0] * p[0] + p[1] * p[1]) ** 0.5
        if pn < 1e-14:
            c0 = 1.0
            c1 = 0.0
        else:
            c0 = -p[1] / pn
            c1 = p[0] / pn
        u = 0.0
        for i in range(m):
            s = W[i, 0] * c0 + W[i, 1] * c1
            scratch[i] = s
            u += grad[i] * sigma[i] * s
        if u > 0.0:
            c0 = -c0
            c1 = -c1
            for i in range(m):
                scratch[i] = -scratch[i]
        dot = 0.0
        dmax = 0.0
        for j in range(k):
            dj = Vf[j, 0] * c0 + Vf[j, 1] * c1
            Vf[j, 2] = dj
            dot += dj * x[Fidx[j]]
            a = abs(dj)
            if a > dmax:
                dmax = a
        gamma = L
        crossed = False
        if gapmin <= L * dmax * 1.0000001 + 1e-15:
            eps = 1e300
            for j in range(k):
                dj = Vf[j, 2]
                if dj > 0.0:
                    e = (1.0 - x[Fidx[j]]) / dj
                elif dj < 0.0:
                    e = (-1.0 - x[Fidx[j]]) / dj
                else:
                    continue
                if e < eps:
                    eps = e
            if eps <= L:
                gamma = eps
                crossed = True
            newgap = 1e300
            for j in range(k):
                g = 1.0 - abs(x[Fidx[j]] + gamma * Vf[j, 2])
                if g < newgap:
                    newgap = g
            gapmin = newgap
        else:
            gapmin -= gamma * dmax
        for j in range(k):
            x[Fidx[j]] += gamma * Vf[j, 2]
        mz = -1e300
        for i in range(m):
            y[i] += gamma * scratch[i]
            pi[i] += gamma * sigma[i] * scratch[i]
            zi = eta * pi[i]
            if zi > mz:
                mz = zi
        p[0] += gamma * c0
        p[1] += gamma * c1
        lam_new, ok = _lq_newton(pi, eta, lam, mz, qflag, q)
        if not ok:
            acc[4] += 1.0
        phi_new = _lq_fill_grad_value(pi, eta, lam_new, grad, qflag, q)
        budget = bcoef * gamma * gamma * qb
        if phi_new - phi > budget + _LEDGER_SLACK:
            for j in range(k):
                x[Fidx[j]] -= gamma * Vf[j, 2]
            for i in range(m):
                y[i] -= gamma * scratch[i]
                pi[i] -= gamma * sigma[i] * scratch[i]
            p[0] -= gamma * c0
            p[1] -= gamma * c1
            gapmin = -1.0
            state[0] = t
            state[2] = lam
            state[3] = phi
            state[4] = gapmin
            return EV_VIOLATION
        if tr_on:
            tr_step[int(t)] = gamma
            tr_dot[int(t)] = dot
            tr_k[int(t)] = k
            tr_phib[int(t)] = phi
            tr_phia[int(t)] = phi_new
            tr_budget[int(t)] = budget
        d = phi_new - phi
        if d > 0.0:
            acc[0] += d
        acc[1] += gamma * gamma
        if abs(dot) > acc[2]:
            acc[2] = abs(dot)
        if gamma > acc[3]:
            acc[3] = gamma
        lam = lam_new
        phi = phi_new
        t += 1.0
        if crossed:
            nf = 0
            for j in range(k):
                xv = x[Fidx[j]]
                if xv >= 1.0 - _SNAP:
                    x[Fidx[j]] = 1.0
                    nf += 1
                elif xv <= -1.0 + _SNAP:
                    x[Fidx[j]] = -1.0
                    nf += 1
            state[1] += nf
            if tr_on:
                tr_frozen[int(t) - 1] = state[1]
            if nf > 0:
                state[0] = t
                state[2] = lam
                state[3] = phi
                state[4] = gapmin
                return EV_FREEZE
        if tr_on:
            tr_frozen[int(t) - 1] = state[1]


def lll_resample(A_rows_idx, A_rows_ptr, A_cols_idx, A_cols_ptr, x, disc, thresh, t_max, rand_bits):
    """Smallest-index bad-row resampling until no row exceeds the threshold.

    CSR-style index arrays describe the 0/1 matrix by rows and by columns.
    ``rand_bits`` is a pre-drawn pool of uniform [0,1) floats consumed one per
    variable resample; the caller sizes it and refills on exhaustion.
    Returns (rounds, bits_used, done_flag); ``trace_rows``/``trace_nbad`` are
    filled by the caller from the returned log arrays.
    """
    n = A_rows_ptr.shape[0] - 1
    rounds = 0
    used = 0
    nbits = rand_bits.shape[0]
    log_row = np.empty(t_max, dtype=np.int64)
    log_nbad = np.empty(t_max, dtype=np.int64)
    while rounds < t_max:
        bad = -1
        nbad = 0
        for i in range(n):
            if abs(disc[i]) > thresh:
                nbad += 1
                if bad < 0:
                    bad = i
        if bad < 0:
            return rounds, used, True, log_row[:rounds], log_nbad[:rounds]
        log_row[rounds] = bad
        log_nbad[rounds] = nbad
        for ptr in range(A_rows_ptr[bad], A_rows_ptr[bad + 1]):
            j = A_rows_idx[ptr]
            if used >= nbits:
                return rounds, used, False, log_row[:rounds], log_nbad[:rounds]
            newv = 1.0 if rand_bits[used] < 0.5 else -1.0
            used += 1
            old = x[j]
            if newv != old:
                x[j] = newv
                dv = newv - old
                for q in range(A_cols_ptr[j], A_cols_ptr[j + 1]):
                    disc[A_cols_idx[q]] += dv
        rounds += 1
    return rounds, used, False, log_row[:rounds], log_nbad[:rounds]


EV_CADENCE = 4
EV_PSIVIOL = 5
EV_DEGENERATE = 6


def _pick_orthogonal(cons, ncons, dv, out):
    """Unit vector orthogonal to the first ncons rows of cons.

    Gram-Schmidt on the constraints, then the coordinate axis with the
    largest residual is projected and normalized.  The result is written to
    ``out[ncons]`` (earlier rows are scratch).  Returns the residual norm
    (0.0 signals a degenerate system).
    """
    # orthonormalize constraints in place (rows with tiny norm are dropped)
    nb = 0
    for r in range(ncons):
        for l in range(dv):
            out[nb, l] = cons[r, l]
        for b in range(nb):
            dot = 0.0
            for l in range(dv):
                dot += out[nb, l] * out[b, l]
            for l in range(dv):
                out[nb, l] -= dot * out[b, l]
        nrm = 0.0
        for l in range(dv):
            nrm += out[nb, l] * out[nb, l]
        nrm = nrm**0.5
        if nrm > 1e-12:
            for l in range(dv):
                out[nb, l] /= nrm
            nb += 1
    best = -1.0
    bestj = 0
    for j in range(dv):
        resid = 1.0
        for b in range(nb):
            resid -= out[b, j] * out[b, j]
        if resid > best:
            best = resid
            bestj = j
    res = out[ncons]
    for l in range(dv):
        res[l] = 0.0
    res[bestj] = 1.0
    for b in range(nb):
        dot = 0.0
        for l in range(dv):
            dot += res[l] * out[b, l]
        for l in range(dv):
            res[l] -= dot * out[b, l]
    nrm = 0.0
    for l in range(dv):
        nrm += res[l] * res[l]
    nrm = nrm**0.5
    if nrm < 1e-9:
        return 0.0
    for l in range(dv):
        res[l] /= nrm
    return nrm


def komlos_phase_a(
    x,
    Fidx,
    Vf,
    p,
    cumc_x,
    cumc_y,
    gphi,
    dcoef,
    acc_denom,
    state,
    consts,
    acc,
    work,
    tr_on,
    tr_step,
    tr_dot,
    tr_frozen,
    tr_k,
):
    """Blind-block walk steps while no row has left the pseudorandom set.

    x and the row values are deferred: steps accumulate in coefficient space
    (cumc_x, cumc_y) and x is only materialized near a face.  The caller
    applies cumc_* on every return.

    Vf: (k, dv+1), last column scratch.  state: [t, frozen, gapmin, vmax,
    psi_const].  consts: [L, dv, t_budget, cadence_left].
    acc: [sum_gamma2, max_abs_dot, max_step].  work: (2, dv) scratch.
    """
    L = consts[0]
    dv = int(consts[1])
    t_budget = consts[2]
    cadence = consts[3]
    k = Fidx.shape[0]
    G = dcoef.shape[0]
    t = state[0]
    gapmin = state[2]
    vmax = state[3]
    done = 0.0
    while True:
        if t >= t_budget:
            state[0] = t
            state[2] = gapmin
            return EV_BUDGET
        if done >= cadence:
            state[0] = t
            state[2] = gapmin
            return EV_CADENCE
        # direction orthogonal to p
        r = _pick_orthogonal(p.reshape(1, dv), 1, dv, work)
        if r == 0.0:
            state[0] = t
            state[2] = gapmin
            return EV_DEGENERATE
        u = 0.0
        for l in range(dv):
            u += gphi[l] * work[1, l]
        s = -1.0 if u > 0.0 else 1.0
        dot = 0.0
        for l in range(dv):
            work[1, l] *= s
            dot += work[1, l] * p[l]
        gamma = L
        crossed = False
        if gapmin <= L * vmax * 1.0000001 + 1e-15:
            # materialize x, then take an exact step with a crossing scan
            for j in range(k):
                acc_ = 0.0
                for l in range(dv):
                    acc_ += Vf[j, l] * cumc_x[l]
                x[Fidx[j]] += acc_
            for l in range(dv):
                cumc_x[l] = 0.0
            eps = 1e300
            dmax = 0.0
            for j in range(k):
                dj = 0.0
                for l in range(dv):
                    dj += Vf[j, l] * work[1, l]
                Vf[j, dv] = dj
                a = abs(dj)
                if a > dmax:
                    dmax = a
                if dj > 0.0:
                    e = (1.0 - x[Fidx[j]]) / dj
                elif dj < 0.0:
                    e = (-1.0 - x[Fidx[j]]) / dj
                else:
                    continue
                if e < eps:
                    eps = e
            if eps <= L:
                gamma = eps
                crossed = True
            newgap = 1e300
            for j in range(k):
                x[Fidx[j]] += gamma * Vf[j, dv]
                g = 1.0 - abs(x[Fidx[j]])
                if g < newgap:
                    newgap = g
            gapmin = newgap
        else:
            gapmin -= L * vmax
            for l in range(dv):
                cumc_x[l] += gamma * work[1, l]
        for l in range(dv):
            p[l] += gamma * work[1, l]
            cumc_y[l] += gamma * work[1, l]
        g2 = gamma * gamma
        acc[0] += g2
        if abs(dot) > acc[1]:
            acc[1] = abs(dot)
        if gamma > acc[2]:
            acc[2] = gamma
        for gsl in range(G):
            acc_denom[gsl] += g2 * dcoef[gsl]
        if tr_on:
            tr_step[int(t)] = gamma
            tr_dot[int(t)] = dot
            tr_k[int(t)] = k
        t += 1.0
        done += 1.0
        if crossed:
            nf = 0
            for j in range(k):
                xv = x[Fidx[j]]
                if xv >= 1.0 - _SNAP:
                    x[Fidx[j]] = 1.0
                    nf += 1
                elif xv <= -1.0 + _SNAP:
                    x[Fidx[j]] = -1.0
                    nf += 1
            state[1] += nf
            if tr_on:
                tr_frozen[int(t) - 1] = state[1]
            if nf > 0:
                state[0] = t
                state[2] = gapmin
                return EV_FREEZE
        if tr_on:
            tr_frozen[int(t) - 1] = state[1]


def komlos_phase_b(
    x,
    Fidx,
    Vf,
    p,
    cumc_y,
    gphi,
    WB,
    h,
    Ptens,
    dnow,
    qnow,
    wplus,
    wminus,
    dcoef,
    acc_denom,
    state,
    consts,
    acc,
    work,
    tr_on,
    tr_step,
    tr_dot,
    tr_frozen,
    tr_k,
    tr_psib,
    tr_psia,
):
    """Per-step walk once rows have exited the pseudorandom set.

    Maintains for every exited row i the linear part d_i = <B_i, x - x(exit_i)>
    and quadratic correction q_i = sum_j B_ij^2 (x - x(exit_i))_j^2 of its
    softened-max argument; the potential must be nonincreasing at every step
    (violations roll the step back and request a fresh oracle).

    state: [t, frozen, psi, npin, gapmin(unused)]
    consts: [L, dv, t_budget, cadence_left, keta, eta_psi, ledger_tol]
    acc: [sum_gamma2, max_abs_dot, max_step, psi_checks]
    work: (4, dv) scratch rows for the constraint solve.
    """
    L = consts[0]
    dv = int(consts[1])
    t_budget = consts[2]
    cadence = consts[3]
    keta = consts[4]
    eta = consts[5]
    tol = consts[6]
    k = Fidx.shape[0]
    mex = dnow.shape[0]
    G = dcoef.shape[0]
    t = state[0]
    psi = state[2]
    npin = state[3]
    done = 0.0
    cons = np.empty((3, dv))
    pc = np.empty(dv)
    while True:
        if t >= t_budget:
            state[0] = t
            state[2] = psi
            return EV_BUDGET
        if done >= cadence:
            state[0] = t
            state[2] = psi
            return EV_CADENCE
        # constraints: orthogonality to x plus the two fresh linear forms
        for l in range(dv):
            g1 = 0.0
            g2 = 0.0
            for i in range(mex):
                g1 += (wplus[i] - wminus[i]) * WB[i, l]
                g2 += (wplus[i] + wminus[i]) * h[i, l]
            cons[0, l] = p[l]
            cons[1, l] = g1
            cons[2, l] = g2 * keta
        r = _pick_orthogonal(cons, 3, dv, work)
        if r == 0.0:
            state[0] = t
            state[2] = psi
            return EV_DEGENERATE
        c = work[3]
        u = 0.0
        for l in range(dv):
            u += gphi[l] * c[l]
        if u > 0.0:
            for l in range(dv):
                c[l] = -c[l]
        dot = 0.0
        dmax = 0.0
        eps = 1e300
        for j in range(k):
            dj = 0.0
            for l in range(dv):
                dj += Vf[j, l] * c[l]
            Vf[j, dv] = dj
            dot += dj * x[Fidx[j]]
            a = abs(dj)
            if a > dmax:
                dmax = a
            if dj > 0.0:
                e = (1.0 - x[Fidx[j]]) / dj
            elif dj < 0.0:
                e = (-1.0 - x[Fidx[j]]) / dj
            else:
                continue
            if e < eps:
                eps = e
        gamma = L if eps > L else eps
        crossed = eps <= L
        for j in range(k):
            x[Fidx[j]] += gamma * Vf[j, dv]
        for l in range(dv):
            p[l] += gamma * c[l]
            cumc_y[l] += gamma * c[l]
        # exact quadratic update of the per-row softmax arguments
        for i in range(mex):
            wb = 0.0
            hc = 0.0
            ppc = 0.0
            for l in range(dv):
                av = 0.0
                for l2 in range(dv):
                    av += Ptens[i, l * dv + l2] * c[l2]
                pc[l] = av
                wb += WB[i, l] * c[l]
                hc += h[i, l] * c[l]
                ppc += av * c[l]
            dnow[i] += gamma * wb
            qnow[i] += 2.0 * gamma * hc + gamma * gamma * ppc
            for l in range(dv):
                h[i, l] += gamma * pc[l]
        # potential after the move
        mx = 0.0
        for i in range(mex):
            v = abs(dnow[i]) - keta * qnow[i]
            if v > mx:
                mx = v
        z = npin * np.exp(-eta * mx)
        for i in range(mex):
            ep = np.exp(eta * (dnow[i] - keta * qnow[i] - mx))
            en = np.exp(eta * (-dnow[i] - keta * qnow[i] - mx))
            wplus[i] = ep
            wminus[i] = en
            z += ep + en
        psi_new = mx + np.log(z) / eta
        acc[3] += 1.0
        if psi_new > psi + tol:
            # roll back the step and ask for a fresh oracle
            for j in range(k):
                x[Fidx[j]] -= gamma * Vf[j, dv]
            for l in range(dv):
                p[l] -= gamma * c[l]
                cumc_y[l] -= gamma * c[l]
            for i in range(mex):
                wb = 0.0
                ppc = 0.0
                for l in range(dv):
                    av = 0.0
                    for l2 in range(dv):
                        av += Ptens[i, l * dv + l2] * c[l2]
                    pc[l] = av
                    wb += WB[i, l] * c[l]
                    ppc += av * c[l]
                for l in range(dv):
                    h[i, l] -= gamma * pc[l]
                hc = 0.0
                for l in range(dv):
                    hc += h[i, l] * c[l]
                dnow[i] -= gamma * wb
                qnow[i] -= 2.0 * gamma * hc + gamma * gamma * ppc
            mx = 0.0
            for i in range(mex):
                v = abs(dnow[i]) - keta * qnow[i]
                if v > mx:
                    mx = v
            z = npin * np.exp(-eta * mx)
            for i in range(mex):
                ep = np.exp(eta * (dnow[i] - keta * qnow[i] - mx))
                en = np.exp(eta * (-dnow[i] - keta * qnow[i] - mx))
                wplus[i] = ep
                wminus[i] = en
                z += ep + en
            for i in range(mex):
                wplus[i] /= z
                wminus[i] /= z
            state[0] = t
            state[2] = psi
            return EV_PSIVIOL
        for i in range(mex):
            wplus[i] /= z
            wminus[i] /= z
        g2 = gamma * gamma
        acc[0] += g2
        if abs(dot) > acc[1]:
            acc[1] = abs(dot)
        if gamma > acc[2]:
            acc[2] = gamma
        for gsl in range(G):
            acc_denom[gsl] += g2 * dcoef[gsl]
        if tr_on:
            tr_step[int(t)] = gamma
            tr_dot[int(t)] = dot
            tr_k[int(t)] = k
            tr_psib[int(t)] = psi
            tr_psia[int(t)] = psi_new
        psi = psi_new
        t += 1.0
        done += 1.0
        if crossed:
            nf = 0
            for j in range(k):
                xv = x[Fidx[j]]
                if xv >= 1.0 - _SNAP:
                    x[Fidx[j]] = 1.0
                    nf += 1
                elif xv <= -1.0 + _SNAP:
                    x[Fidx[j]] = -1.0
                    nf += 1
            state[1] += nf
            if tr_on:
                tr_frozen[int(t) - 1] = state[1]
            if nf > 0:
                state[0] = t
                state[2] = psi
                return EV_FREEZE
        if tr_on:
            tr_frozen[int(t) - 1] = state[1]


if NUMBA_ENABLED:
    from numba import njit

    _jit = njit(cache=True, fastmath=True)
    _lq_newton = _jit(_lq_newton)
    _lq_fill_grad_value = _jit(_lq_fill_grad_value)
    _pick_orthogonal = _jit(_pick_orthogonal)
    spencer_steps = _jit(spencer_steps)
    tight_steps = _jit(tight_steps)
    lll_resample = _jit(lll_resample)
    komlos_phase_a = _jit(komlos_phase_a)
    komlos_phase_b = _jit(komlos_phase_b)
