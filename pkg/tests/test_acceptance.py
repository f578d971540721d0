"""Acceptance criteria 1-11.

Each test records PASS/FAIL with ``record()``; conftest prints one line per
criterion at the end of the session. The desk-scale ordering checks (7-10)
share one session fixture that runs the policy matrix once.
"""

import io
import itertools
import math
import time

import numpy as np
import pytest

from conftest import DESK_COUNTS, desk_constellation, record
from helpers import random_agent, random_batch, sac_gradient_errors
from leo_handover import link, metrics
from leo_handover.agents import POLICIES, mis_policy, mrst_policy
from leo_handover.agents.nash import nash_select
from leo_handover.env import (CASE_HANDOVER, CASE_STAY, CASE_UNCOVERED, CASE_UNRELIABLE, NO_SERVICE,
                              EpisodeGeometry, HandoverEnv, RewardParams, Trace, build_geometry)
from leo_handover.link import LinkBudgetParams
from leo_handover.mobility import UserType, spawn_users, trajectory
from leo_handover.orbits import ConstellationArrays, ConstellationSpec, generate_walker
from leo_handover.scenario import execute_run, load_config, loads_config, run_matrix

# ---------------------------------------------------------------------------
# 1. link budget against a linear-domain oracle
# ---------------------------------------------------------------------------

K_B = 1.380649e-23


def oracle_cinr_db(d, f, gt, interferers, eirp_dbm, bw_mhz, iso_db):
    """Everything in linear power ratios; dB only at the very end."""
    p_tx = 10 ** ((eirp_dbm - 30) / 10)  # W
    g_t = 10 ** (gt / 10)
    noise = K_B * bw_mhz * 1e6
    # path loss in the km / GHz convention: (d f)^2 10^9.245
    def carrier(dist):
        return p_tx * g_t / (noise * (dist * f) ** 2 * 10 ** 9.245)
    c = carrier(d)
    i = sum(carrier(x) for x in interferers) / 10 ** (iso_db / 10)
    return 10 * math.log10(c), (10 * math.log10(i) if interferers else None), 10 * math.log10(c / (i + 1))


def test_criterion_01_link_budget_oracle():
    r = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        f, bw = r.uniform(2.0, 40.0), r.uniform(10.0, 500.0)
        eirp, iso = r.uniform(40.0, 80.0), r.uniform(0.0, 20.0)
        gt_by_type = {t: float(r.uniform(5.0, 25.0)) for t in (1, 2, 3, 4)}
        p = LinkBudgetParams(carrier_frequency=f, bandwidth=bw, eirp=eirp, gt_over_T=gt_by_type,
                             polarization_isolation=iso)
        utype = int(r.integers(1, 5))
        gt = gt_by_type[utype]
        n = int(r.integers(1, 8))
        dist = r.uniform(1200.0, 4000.0, n)
        cov = r.random(n) < 0.7
        serve = int(r.integers(n))
        cov[serve] = True
        interferers = [dist[m] for m in range(n) if m != serve and cov[m]]
        c_o, i_o, x_o = oracle_cinr_db(dist[serve], f, gt, interferers, eirp, bw, iso)

        s = link.link_sample(0, serve, dist, cov, gt, p)
        cnr_t, inr_t, cinr_t = link.link_tables(dist[None, :], cov[None, :], np.array([gt]), p)
        errs = [abs(s.cnr - c_o), abs(s.cinr - x_o), abs(cnr_t[0, serve] - c_o), abs(cinr_t[0, serve] - x_o)]
        if i_o is None:
            assert s.inr is None and np.isneginf(inr_t[0, serve])
        else:
            errs += [abs(s.inr - i_o), abs(inr_t[0, serve] - i_o)]
        worst = max(worst, max(errs))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and elapsed < 5.0
    record(1, ok, f"max |err| {worst:.2e} dB over 1000 cases, {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------------------
# 2. coverage and remaining visible time against per-section brute force
# ---------------------------------------------------------------------------

R_E, MU, OMEGA = 6371.0, 398600.4418, 7.2921159e-5


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def brute_sat_ecef(raan, u0, inc, alt, t):
    a = R_E + alt
    u = math.radians(u0) + math.sqrt(MU / a ** 3) * t
    eci = _rot_z(math.radians(raan)) @ _rot_x(math.radians(inc)) @ _rot_z(u) @ np.array([a, 0.0, 0.0])
    return _rot_z(-OMEGA * t) @ eci


def brute_user_ecef(p):
    r = R_E + p.altitude
    lat, lon = math.radians(p.latitude), math.radians(p.longitude)
    return r * np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])


def brute_elevation(user, sat):
    los = sat - user
    cos_zenith = float(los @ user) / (np.linalg.norm(los) * np.linalg.norm(user))
    return 90.0 - math.degrees(math.acos(max(-1.0, min(1.0, cos_zenith))))


def test_criterion_02_geometry_brute_force():
    r = np.random.default_rng(202)
    t0 = time.perf_counter()
    mismatches = 0
    checked = 0
    for snap in range(100):
        spec = ConstellationSpec(int(r.integers(2, 7)), int(r.integers(3, 9)), float(r.uniform(500, 1800)),
                                 float(r.uniform(50, 98)), raan_spread=float(r.uniform(20, 360)),
                                 phase_offset=float(r.uniform(0, 1)), raan_origin=float(r.uniform(0, 360)))
        sats = generate_walker(spec)
        kind = r.choice(["aircraft", "evtol", "uav", "ground"])
        user = spawn_users(int(r.integers(1 << 30)), {k: int(k == kind) for k in DESK_COUNTS})[0]
        dt, sections, start = float(r.choice([5.0, 10.0, 30.0])), int(r.integers(5, 40)), float(r.uniform(0, 8000))
        geo = build_geometry(ConstellationArrays.from_states(sats), [user], LinkBudgetParams(), dt, sections, start)
        route = trajectory(user, dt, sections)
        cov = np.zeros((sections + 1, len(sats)), dtype=bool)
        for t in range(sections + 1):
            ue = brute_user_ecef(route[t])
            for n, s in enumerate(sats):
                el = brute_elevation(ue, brute_sat_ecef(s.raan, s.anomaly, s.inclination, s.altitude, start + t * dt))
                cov[t, n] = el >= 15.0
        # remaining time: forward scan of consecutive covered samples
        rho = np.zeros(cov.shape)
        for t in range(sections + 1):
            for n in range(len(sats)):
                if cov[t, n]:
                    m = 0
                    while t + m + 1 <= sections and cov[t + m + 1, n]:
                        m += 1
                    rho[t, n] = m * dt
        mismatches += int(np.sum(cov != geo.covered[:, 0])) + int(np.sum(rho != geo.remaining[:, 0]))
        checked += cov.size
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30.0
    record(2, ok, f"{mismatches} mismatches over {checked} (section, satellite) samples, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. reward case table
# ---------------------------------------------------------------------------

def expected_reward(p, covered, action, admitted, theta, anchor, rho, occupancy, horizon):
    if action == NO_SERVICE or not covered:
        return CASE_UNCOVERED, -5 * p.beta
    if not admitted or theta < p.cinr_threshold:
        return CASE_UNRELIABLE, -p.beta
    stay = (rho / horizon * p.w1 + theta / p.cinr_max * p.w2 + (p.capacity - occupancy) / p.capacity * p.w3)
    if anchor in (NO_SERVICE, action):
        return CASE_STAY, stay
    return CASE_HANDOVER, stay - 0.5 * p.beta


def test_criterion_03_reward_case_table():
    p = RewardParams(beta=1.5, w1=0.2, w2=0.5, w3=0.3, capacity=2, cinr_threshold=4.0)
    U, N = 3, 2
    rows = 0
    bad = []
    # queue positions for the probe (user 0) on satellite 0 with capacity L = 2:
    #   0: probe admitted first, two fillers follow (load L + 1, a filler is blocked)
    #   1: one filler joins the probe (load == L, admitted)
    #   2: two flying-vehicle fillers go first (probe is the (L+1)-th user, blocked)
    setups = {0: ([int(UserType.UAV), 4, 4], [0, 0]),
              1: ([4, 4, 4], [0, 1]),
              2: ([4, int(UserType.UAV), int(UserType.UAV)], [0, 0])}
    grid = itertools.product([True, False], [0, NO_SERVICE], [0, 1, 2], [3.0, 4.0, 7.5],
                             ["none", "same", "other"])
    for covered, action, position, theta, anchor in grid:
        types, fillers = setups[position]
        K = 3
        cov = np.ones((U + 1, K, N), dtype=bool)
        cov[1, 0, 0] = covered
        cinr = np.full((U + 1, K, N), 20.0)
        cinr[1, 0, 0] = theta
        rho = np.full((U + 1, K, N), 120.0)
        geo = EpisodeGeometry(cov, np.where(cov, cinr, -np.inf), np.where(cov, rho, 0.0), np.array(types), 10.0)
        env = HandoverEnv(geo, p, fv_priority=True)
        # section 0 sets the anchor and the occupancy seen in section 1
        first = {"none": NO_SERVICE, "same": 0, "other": 1}[anchor]
        env.step(np.array([first, 1, 1]))
        res = env.step(np.array([action] + fillers))
        admitted = position != 2
        occ = int(first == 0)
        case, rew = expected_reward(p, covered, action, admitted, theta, first, 120.0, occ, 30.0)
        rows += 1
        if res.case[0] != case or res.reward[0] != pytest.approx(rew, abs=1e-12):
            bad.append((covered, action, position, theta, anchor, int(res.case[0]), float(res.reward[0]), case, rew))
    # the boundary cases explicitly: theta == threshold is reliable, load == L is admitted
    env = HandoverEnv(EpisodeGeometry(np.ones((2, 2, 1), bool), np.full((2, 2, 1), 4.0), np.zeros((2, 2, 1)),
                                      np.array([4, 4]), 10.0), p)
    edge = env.step(np.array([0, 0]))
    boundary_ok = list(edge.case) == [CASE_STAY, CASE_STAY] and edge.blocked.sum() == 0
    ok = not bad and boundary_ok and rows == 2 * 2 * 3 * 3 * 3
    record(3, ok, f"{rows} table rows, {len(bad)} mismatches, boundary {'ok' if boundary_ok else 'WRONG'}")
    assert ok, bad[:5]


# ---------------------------------------------------------------------------
# 4. gradient checks
# ---------------------------------------------------------------------------

def test_criterion_04_gradient_checks():
    r = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = {}
    for _ in range(50):
        N = int(r.integers(2, 5))
        hidden = tuple(int(h) for h in r.integers(2, 6, size=int(r.integers(1, 3))))
        arch = str(r.choice(["shared", "dense"]))
        agent = random_agent(r, N, hidden, arch=arch)
        errs = sac_gradient_errors(agent, random_batch(r, int(r.integers(2, 6)), N))
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60.0
    record(4, ok, "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5. Nash verification
# ---------------------------------------------------------------------------

def own_payoff(values, joint, k, n, L, beta):
    load = sum(1 for j, a in enumerate(joint) if j != k and a == n)
    return values[k, n] - beta * (load + 1 > L)


def test_criterion_05_nash_verification():
    r = np.random.default_rng(505)
    games = violations = nonconv = 0
    while games < 200:
        K, N = int(r.integers(2, 7)), int(r.integers(2, 6))
        if N ** K > 4096:
            continue
        values = r.normal(size=(K, N))
        values[r.random((K, N)) < 0.15] = -np.inf
        L, beta = int(r.integers(1, K + 1)), float(r.uniform(0.05, 4.0))
        res = nash_select(values, L, beta=beta)
        games += 1
        if not res.converged:
            nonconv += 1
            continue
        a = list(res.actions)
        for k in range(K):
            avail = [n for n in range(N) if np.isfinite(values[k, n])]
            if not avail:
                violations += int(a[k] != NO_SERVICE)
                continue
            cur = own_payoff(values, a, k, a[k], L, beta)
            if any(own_payoff(values, a, k, n, L, beta) > cur + 1e-12 for n in avail):
                violations += 1
    ok = violations == 0
    record(5, ok, f"200 games, {violations} profitable deviations, {nonconv} non-converged")
    assert ok


# ---------------------------------------------------------------------------
# 6. blocking recount from dumped traces
# ---------------------------------------------------------------------------

def test_criterion_06_blocking_recount():
    r = np.random.default_rng(606)
    shell = desk_constellation()
    mismatches = 0
    for run in range(50):
        counts = {k: int(r.integers(0, 5)) for k in DESK_COUNTS}
        counts["ground"] += 1
        users = spawn_users(int(r.integers(1 << 30)), counts)
        geo = build_geometry(shell, users, LinkBudgetParams(), 10.0, int(r.integers(5, 25)))
        env = HandoverEnv(geo, RewardParams(capacity=int(r.integers(1, 5))), fv_priority=bool(r.integers(2)))
        obs = env.reset()
        pick = run % 3
        while not env.done:
            if pick == 0:
                acts = r.integers(-1, env.num_sats, env.num_users)
            else:
                pol = mrst_policy if pick == 1 else mis_policy
                acts = np.array([pol(o) for o in obs])
            obs = env.step(acts).observations
        dumped = Trace.read_csv(io.StringIO(env.trace.to_csv()), env.num_sats)
        sat = dumped.array("sat")
        total = 0
        for row in sat:
            for n in range(env.num_sats):
                total += max(0, int(np.sum(row == n)) - env.params.capacity)
        mismatches += int(total != env.blocking)
    ok = mismatches == 0
    record(6, ok, f"{mismatches} mismatches over 50 runs")
    assert ok


# ---------------------------------------------------------------------------
# 7-10. desk-scale orderings
# ---------------------------------------------------------------------------

DESK_L = (4, 6, 8, 10, 12)


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    cfg = load_config("desk", log_defaults=False)
    seeds = list(cfg.seeds)
    root = tmp_path_factory.mktemp("desk")
    t0 = time.perf_counter()
    main = run_matrix(cfg, POLICIES, [8], ["s2"], seeds, root / "l8")
    l8_time = time.perf_counter() - t0
    sweep = run_matrix(cfg, POLICIES, [L for L in DESK_L if L != 8], ["s2"], seeds, root / "sweep")
    prio = run_matrix(cfg, ["nash-sac"], [8], ["s1"], seeds, root / "s1")
    failures = main.failures + sweep.failures + prio.failures
    return {"rows": main.rows + sweep.rows + prio.rows, "l8_time": l8_time, "failures": failures,
            "roots": {"s2": root / "l8", "s1": root / "s1"}, "main": main, "prio": prio, "seeds": seeds}


def _select(rows, policy, L=8, scenario="s2"):
    return sorted((r for r in rows if r["policy"] == policy and r["L"] == L and r["scenario"] == scenario),
                  key=lambda r: r["seed"])


def _mean(rows, policy, key, L=8, scenario="s2"):
    return float(np.mean([r[key] for r in _select(rows, policy, L, scenario)]))


@pytest.mark.slow
def test_criterion_07_handover_ordering(desk):
    rows = desk["rows"]
    ho = {p: _mean(rows, p, "total_handovers") for p in POLICIES}
    reduction = metrics.relative_reduction(ho["nash-sac"], ho["qlearning"])
    order = ho["mrst"] <= ho["nash-sac"] < ho["qlearning"]
    heur = ho["mrst"] < min(ho["mis"], ho["mac"])
    ok = order and heur and reduction >= 0.10 and desk["l8_time"] < 1800 and not desk["failures"]
    record(7, ok, "mean HO " + ", ".join(f"{p} {v:.1f}" for p, v in ho.items())
           + f"; reduction vs qlearning {100 * reduction:.0f}%; L=8 matrix {desk['l8_time'] / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_08_blocking_monotone(desk):
    rows = desk["rows"]
    curves = {p: [_mean(rows, p, "blocking", L) for L in DESK_L] for p in POLICIES}
    mono = {p: all(b <= a for a, b in zip(c, c[1:])) for p, c in curves.items()}
    sac, q = curves["nash-sac"][DESK_L.index(8)], curves["qlearning"][DESK_L.index(8)]
    better = sac <= 0.9 * q if q > 0 else sac == 0
    ok = all(mono.values()) and better
    record(8, ok, "blocking at L=8: " + ", ".join(f"{p} {c[DESK_L.index(8)]:.1f}" for p, c in curves.items())
           + "; non-monotone: " + (", ".join(p for p, m in mono.items() if not m) or "none"))
    assert ok, curves


UTILITY_ORDER = ("nash-sac", "nash-dqn", "qlearning", "mrst")


@pytest.mark.slow
def test_criterion_09_utility_ordering(desk):
    rows = desk["rows"]
    held = 0
    for seed in desk["seeds"]:
        psi = {p: _select(rows, p)[desk["seeds"].index(seed)]["psi_total"] for p in POLICIES}
        chain = (psi["nash-sac"] >= psi["nash-dqn"] > psi["qlearning"] > psi["mrst"]
                 > max(psi["mac"], psi["mis"]))
        held += int(chain)
    mean = {p: _mean(rows, p, "psi_total") for p in POLICIES}
    worst = min(mean["mac"], mean["mis"], mean["mrst"])
    gain = metrics.relative_improvement(mean["nash-sac"], worst)
    ok = held >= 4 and gain >= 0.30
    record(9, ok, f"ordering held in {held}/5 seeds; nash-sac vs worst heuristic {100 * gain:+.0f}%; mean psi "
           + ", ".join(f"{p} {v:.2f}" for p, v in mean.items()))
    assert ok


def _median_cinr(root, rows, label):
    vals = []
    for r in rows:
        data = metrics.read_cdf_csv(root / "runs" / r["run_id"] / "cdf.csv")
        for (_, t), v in data.items():
            if t == label:
                vals.append(v)
    return float(np.median(np.concatenate(vals))) if vals else float("nan")


@pytest.mark.slow
def test_criterion_10_priority_cinr(desk):
    rows = desk["rows"]
    floor = load_config("desk", log_defaults=False).reward.cinr_threshold
    med = {}
    for sc in ("s1", "s2"):
        sel = _select(rows, "nash-sac", 8, sc)
        for t in ("evtol", "uav", "ground"):
            med[t, sc] = _median_cinr(desk["roots"][sc], sel, t)
    fv_ok = all(med[t, "s1"] >= med[t, "s2"] for t in ("evtol", "uav"))
    drop = med["ground", "s2"] - med["ground", "s1"]
    ground_ok = drop < 2.0 and med["ground", "s1"] >= floor
    ok = fv_ok and ground_ok
    record(10, ok, "median CINR s1/s2: " + ", ".join(f"{t} {med[t, 's1']:.2f}/{med[t, 's2']:.2f}"
                                                   for t in ("evtol", "uav", "ground"))
           + f" dB; ground drop {drop:.2f} dB, floor {floor:g} dB")
    assert ok


# ---------------------------------------------------------------------------
# 11. determinism
# ---------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    cfg = loads_config("""
constellation: {num_planes: 4, sats_per_plane: 6, raan_spread: 30.0, phase_offset: 0.5, raan_origin: 5.0}
users: {counts: {aircraft: 2, evtol: 2, uav: 2, ground: 6}}
time: {section_length: 10.0, episode_length: 300.0}
policy: nash-sac
seeds: [3]
training: {episodes: 3, deep: {hidden: [16], batch_size: 16, warmup: 16}}
""", False)
    files = ("trace.csv", "metrics.csv", "cdf.csv", "handovers.csv", "curve.csv")
    same = []
    for policy in ("nash-sac", "nash-dqn", "qlearning", "mac"):
        c = cfg.with_overrides(policy=policy)
        a = execute_run(c, tmp_path / "a")
        b = execute_run(c, tmp_path / "b")
        assert a.run_id == b.run_id
        for name in files:
            pa, pb = tmp_path / "a" / "runs" / a.run_id / name, tmp_path / "b" / "runs" / b.run_id / name
            if pa.exists():
                same.append(pa.read_bytes() == pb.read_bytes())
    ok = all(same) and len(same) >= 16
    record(11, ok, f"{sum(same)}/{len(same)} output files byte-identical across repeated runs")
    assert ok
