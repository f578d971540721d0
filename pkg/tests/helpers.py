"""Shared builders for agent tests: random observation batches and finite differences."""

import numpy as np

from leo_handover.agents.sac import FeatureSpec, SacAgent


def random_obs(rng, B, N, capacity=8, horizon=900.0):
    obs = np.zeros((B, 4, N))
    cov = rng.random((B, N)) < 0.5
    cov[np.arange(B), rng.integers(0, N, B)] = True  # at least one covered satellite
    obs[:, 0] = cov
    obs[:, 1] = rng.integers(0, capacity + 3, (B, N))
    obs[:, 2] = np.where(cov, rng.uniform(-5, 30, (B, N)), -np.inf)
    obs[:, 3] = np.where(cov, rng.uniform(0, horizon, (B, N)), 0.0)
    return obs


def random_batch(rng, B, N, capacity=8, horizon=900.0):
    obs = random_obs(rng, B, N, capacity, horizon)
    nxt = random_obs(rng, B, N, capacity, horizon)
    action = np.array([rng.choice(np.flatnonzero(o[0])) for o in obs], dtype=np.int64)
    return {"obs": obs, "prev": rng.integers(-1, N, B), "action": action,
            "reward": rng.normal(size=B), "next_obs": nxt, "terminal": rng.random(B) < 0.2}


def random_agent(rng, N, hidden, arch="shared", **kw):
    agent = SacAgent(N, FeatureSpec(8, 900.0), rng, hidden=hidden, arch=arch,
                     init_alpha=float(rng.uniform(0.05, 1.0)), **kw)
    # move the targets away from the online critics so the twin structure matters
    for net in (agent.q1_target, agent.q2_target):
        for p in net.params:
            p += rng.normal(scale=0.1, size=p.shape)
    return agent


def central_difference(loss, params, h=1e-6):
    """Gradient of ``loss()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))


def sac_gradient_errors(agent, batch):
    """Relative errors of the analytic q1 / q2 / policy / log-alpha gradients."""
    res = agent.gradients(batch)
    errs = {}
    target = agent.td_target(batch)
    for name, net, which in (("q1", agent.q1, 1), ("q2", agent.q2, 2)):
        fd = central_difference(lambda: agent.critic_loss(batch, which, target), net.params)
        errs[name] = relative_error(res["grad"][name], fd)
    fd = central_difference(lambda: agent.actor_loss(batch), agent.policy.params)
    errs["pi"] = relative_error(res["grad"]["pi"], fd)
    fd = central_difference(lambda: agent.alpha_loss(batch, float(np.exp(agent.log_alpha[0]))), [agent.log_alpha])
    errs["alpha"] = relative_error(res["grad"]["log_alpha"], fd)
    return errs
