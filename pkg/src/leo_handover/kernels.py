"""Hot numeric kernels, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom dispatch on ``LEO_HANDOVER_NO_NUMBA``.  The
``*_nb`` / ``*_np`` variants stay importable for cross-checks and benchmarks.
"""

import math

import numpy as np

from ._accel import njit, pick

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# Elevation of every satellite seen from every user
# ---------------------------------------------------------------------------

def elevation_matrix_np(users_ecef, sats_ecef):
    """Elevation (deg) of ``sats_ecef[N,3]`` above the local horizon of ``users_ecef[K,3]``."""
    users_ecef = np.asarray(users_ecef, dtype=np.float64)
    sats_ecef = np.asarray(sats_ecef, dtype=np.float64)
    up = users_ecef / np.linalg.norm(users_ecef, axis=1, keepdims=True)
    los = sats_ecef[None, :, :] - users_ecef[:, None, :]
    rng = np.linalg.norm(los, axis=2)
    s = np.einsum("kni,ki->kn", los, up) / rng
    return np.degrees(np.arcsin(np.clip(s, -1.0, 1.0)))


@njit
def elevation_matrix_nb(users_ecef, sats_ecef):
    K = users_ecef.shape[0]
    N = sats_ecef.shape[0]
    out = np.empty((K, N))
    for k in range(K):
        ux, uy, uz = users_ecef[k, 0], users_ecef[k, 1], users_ecef[k, 2]
        r = math.sqrt(ux * ux + uy * uy + uz * uz)
        ex, ey, ez = ux / r, uy / r, uz / r
        for n in range(N):
            dx = sats_ecef[n, 0] - ux
            dy = sats_ecef[n, 1] - uy
            dz = sats_ecef[n, 2] - uz
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            s = (dx * ex + dy * ey + dz * ez) / d
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            out[k, n] = math.degrees(math.asin(s))
    return out


def slant_range_np(users_ecef, sats_ecef):
    return np.linalg.norm(np.asarray(sats_ecef)[None, :, :] - np.asarray(users_ecef)[:, None, :], axis=2)


# ---------------------------------------------------------------------------
# Link budget for every (user, candidate serving satellite)
# ---------------------------------------------------------------------------

def link_matrices_np(dist_km, covered, gt_db, eirp_dbw, freq_ghz, bandwidth_hz, boltzmann, isolation_db):
    """CNR, INR and CINR (dB) for every user/candidate pair.

    Entry ``[k, n]`` assumes satellite ``n`` serves user ``k``; every other
    covering satellite interferes.  Uncovered candidates get ``-inf`` CNR and
    CINR; an empty interferer set gives ``-inf`` INR (zero linear power).
    """
    dist_km = np.asarray(dist_km, dtype=np.float64)
    covered = np.asarray(covered, dtype=bool)
    K, N = dist_km.shape
    fspl = 20.0 * np.log10(dist_km) + 20.0 * math.log10(freq_ghz) + 92.45
    cnr = (eirp_dbw + np.asarray(gt_db, dtype=np.float64)[:, None]
           - 10.0 * math.log10(boltzmann) - 10.0 * math.log10(bandwidth_hz) - fspl)
    c_lin = np.where(covered, 10.0 ** (cnr / 10.0), 0.0)
    iso = 10.0 ** (isolation_db / 10.0)
    # off-diagonal sum excludes the serving candidate without subtracting it
    interf = (c_lin @ (1.0 - np.eye(N))) / iso
    with np.errstate(divide="ignore"):
        inr = np.where(interf > 0.0, 10.0 * np.log10(interf), NEG_INF)
        cinr = np.where(covered, 10.0 * np.log10(c_lin / (interf + 1.0)), NEG_INF)
    cnr = np.where(covered, cnr, NEG_INF)
    inr = np.where(covered, inr, NEG_INF)
    return cnr, inr, cinr


@njit
def link_matrices_nb(dist_km, covered, gt_db, eirp_dbw, freq_ghz, bandwidth_hz, boltzmann, isolation_db):
    K, N = dist_km.shape
    cnr = np.full((K, N), -np.inf)
    inr = np.full((K, N), -np.inf)
    cinr = np.full((K, N), -np.inf)
    c_lin = np.zeros(N)
    const = eirp_dbw - 10.0 * math.log10(boltzmann) - 10.0 * math.log10(bandwidth_hz) \
        - 20.0 * math.log10(freq_ghz) - 92.45
    iso = 10.0 ** (isolation_db / 10.0)
    for k in range(K):
        for n in range(N):
            if covered[k, n]:
                v = const + gt_db[k] - 20.0 * math.log10(dist_km[k, n])
                cnr[k, n] = v
                c_lin[n] = 10.0 ** (v / 10.0)
            else:
                c_lin[n] = 0.0
        for n in range(N):
            if not covered[k, n]:
                continue
            s = 0.0
            for m in range(N):
                if m != n:
                    s += c_lin[m]
            s /= iso
            if s > 0.0:
                inr[k, n] = 10.0 * math.log10(s)
            cinr[k, n] = 10.0 * math.log10(c_lin[n] / (s + 1.0))
    return cnr, inr, cinr


# ---------------------------------------------------------------------------
# Remaining visible time from a sampled coverage tensor
# ---------------------------------------------------------------------------

def visible_runs_np(covered, dt):
    """``covered[T,K,N]`` -> remaining visible time (s) at each sample.

    Counts consecutive covered samples strictly after ``t``; zero where the
    satellite is not covered at ``t``.
    """
    covered = np.asarray(covered, dtype=bool)
    out = np.zeros(covered.shape, dtype=np.float64)
    for t in range(covered.shape[0] - 2, -1, -1):
        keep = covered[t] & covered[t + 1]
        out[t] = np.where(keep, out[t + 1] + dt, 0.0)
    return out


@njit
def visible_runs_nb(covered, dt):
    T, K, N = covered.shape
    out = np.zeros((T, K, N))
    # time outermost: [T,K,N] is C-ordered, so the inner loops stay contiguous
    for t in range(T - 2, -1, -1):
        for k in range(K):
            for n in range(N):
                if covered[t, k, n] and covered[t + 1, k, n]:
                    out[t, k, n] = out[t + 1, k, n] + dt
    return out


# ---------------------------------------------------------------------------
# Best-response dynamics on the capacity-penalised congestion game
# ---------------------------------------------------------------------------

def _payoffs_np(values, actions, k, L, beta):
    """Payoff row of agent ``k`` against the others' current choices."""
    N = values.shape[1]
    others = actions[np.arange(actions.size) != k]
    others = others[others >= 0]
    load = np.bincount(others, minlength=N)
    return values[k] - beta * (load + 1 > L)


def welfare_np(values, actions, L, beta):
    N = values.shape[1]
    chosen = actions[actions >= 0]
    load = np.bincount(chosen, minlength=N)
    total = 0.0
    for k, a in enumerate(actions):
        if a >= 0:
            total += values[k, a] - (beta if load[a] > L else 0.0)
    return total


def best_response_np(values, order, L, beta, max_rounds, init, temperature, eps, uniforms):
    """Sequential best responses; returns (actions, converged, rounds).

    ``values[K,N]`` holds ``-inf`` for unavailable satellites.  With
    ``temperature > 0`` each response is drawn from a Boltzmann distribution
    over payoffs; with ``eps > 0`` a uniformly random available satellite is
    taken with that probability.  ``uniforms[max_rounds, K, 2]`` supplies the
    randomness so both kernel flavours are bit-compatible.
    """
    K, N = values.shape
    actions = init.copy()
    best = actions.copy()
    best_w = welfare_np(values, actions, L, beta)
    converged = False
    rounds = 0
    for r in range(max_rounds):
        rounds = r + 1
        changed = False
        for k in order:
            avail = np.flatnonzero(np.isfinite(values[k]))
            if avail.size == 0:
                if actions[k] != -1:
                    changed = True
                actions[k] = -1
                continue
            pay = _payoffs_np(values, actions, k, L, beta)
            cur = actions[k]
            if eps > 0.0 and uniforms[r, k, 0] < eps:
                choice = int(avail[min(int(uniforms[r, k, 1] * avail.size), avail.size - 1)])
            elif temperature > 0.0:
                p = pay[avail]
                w = np.exp((p - p.max()) / temperature)
                c = np.cumsum(w)
                idx = int(np.searchsorted(c, uniforms[r, k, 1] * c[-1], side="right"))
                choice = int(avail[min(idx, avail.size - 1)])
            else:
                top = pay[avail].max()
                if cur >= 0 and np.isfinite(values[k, cur]) and pay[cur] >= top - 1e-12:
                    choice = cur
                else:
                    choice = int(avail[np.argmax(pay[avail])])
            if choice != cur:
                actions[k] = choice
                changed = True
        w = welfare_np(values, actions, L, beta)
        if w > best_w:
            best_w = w
            best = actions.copy()
        if not changed:
            converged = True
            break
    if converged:
        return actions, True, rounds
    return best, False, rounds


@njit
def _welfare_nb(values, actions, L, beta):
    K, N = values.shape
    load = np.zeros(N, dtype=np.int64)
    for k in range(K):
        if actions[k] >= 0:
            load[actions[k]] += 1
    total = 0.0
    for k in range(K):
        a = actions[k]
        if a >= 0:
            total += values[k, a]
            if load[a] > L:
                total -= beta
    return total


@njit
def best_response_nb(values, order, L, beta, max_rounds, init, temperature, eps, uniforms):
    K, N = values.shape
    actions = init.copy()
    best = actions.copy()
    best_w = _welfare_nb(values, actions, L, beta)
    load = np.zeros(N, dtype=np.int64)
    for k in range(K):
        if actions[k] >= 0:
            load[actions[k]] += 1
    pay = np.empty(N)
    converged = False
    rounds = 0
    for r in range(max_rounds):
        rounds = r + 1
        changed = False
        for i in range(K):
            k = order[i]
            cur = actions[k]
            if cur >= 0:
                load[cur] -= 1
            n_avail = 0
            top = -np.inf
            arg = -1
            for n in range(N):
                v = values[k, n]
                if v == -np.inf:
                    pay[n] = -np.inf
                    continue
                n_avail += 1
                p = v
                if load[n] + 1 > L:
                    p -= beta
                pay[n] = p
                if p > top:
                    top = p
                    arg = n
            if n_avail == 0:
                actions[k] = -1
                if cur != -1:
                    changed = True
                continue
            if eps > 0.0 and uniforms[r, k, 0] < eps:
                j = int(uniforms[r, k, 1] * n_avail)
                if j > n_avail - 1:
                    j = n_avail - 1
                choice = -1
                for n in range(N):
                    if pay[n] != -np.inf:
                        if j == 0:
                            choice = n
                            break
                        j -= 1
            elif temperature > 0.0:
                tot = 0.0
                for n in range(N):
                    if pay[n] != -np.inf:
                        tot += math.exp((pay[n] - top) / temperature)
                target = uniforms[r, k, 1] * tot
                acc = 0.0
                choice = -1
                last = -1
                for n in range(N):
                    if pay[n] != -np.inf:
                        last = n
                        acc += math.exp((pay[n] - top) / temperature)
                        if acc > target:
                            choice = n
                            break
                if choice == -1:
                    choice = last
            else:
                if cur >= 0 and values[k, cur] != -np.inf and pay[cur] >= top - 1e-12:
                    choice = cur
                else:
                    choice = arg
            if choice != cur:
                changed = True
            actions[k] = choice
            load[choice] += 1
        w = _welfare_nb(values, actions, L, beta)
        if w > best_w:
            best_w = w
            best[:] = actions
        if not changed:
            converged = True
            break
    if converged:
        return actions, True, rounds
    return best, False, rounds


elevation_matrix = pick(elevation_matrix_nb, elevation_matrix_np)
link_matrices = pick(link_matrices_nb, link_matrices_np)
visible_runs = pick(visible_runs_nb, visible_runs_np)
best_response = pick(best_response_nb, best_response_np)
