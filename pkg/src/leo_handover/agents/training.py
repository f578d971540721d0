"""Episode loop, training with periodic checkpoints, and greedy evaluation."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..env import HandoverEnv, Trace
from .controllers import Controller

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("episode", "mean_return", "mean_entropy", "alpha", "q_loss", "pi_loss")


def run_episode(env: HandoverEnv, controller: Controller, episode: int = 0, explore: bool = False) -> Trace:
    obs = env.reset()
    controller.begin_episode(env, episode, explore)
    while not env.done:
        prev = env.prev_action.copy()
        actions = controller.act(env, obs, explore)
        res = env.step(actions)
        controller.feedback(env, obs, prev, actions, res, explore)
        obs = res.observations
    return env.trace


def evaluate(env: HandoverEnv, controller: Controller) -> Trace:
    """Greedy roll-out; learning controllers do not update."""
    return run_episode(env, controller, episode=0, explore=False)


def _curve_row(episode: int, stats: dict, trace: Trace) -> dict:
    nan = float("nan")
    ret = stats.get("mean_return")
    if ret is None:
        ret = float(trace.array("reward").sum(axis=0).mean())
    return {"episode": episode, "mean_return": ret, "mean_entropy": stats.get("entropy", nan),
            "alpha": stats.get("alpha", nan), "q_loss": stats.get("q1", nan), "pi_loss": stats.get("pi", nan)}


def write_curve(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([r["episode"]] + [repr(float(r[c])) for c in CURVE_COLUMNS[1:]])


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "episode" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def train(env_factory: Callable[[int], HandoverEnv], controller: Controller, episodes: int,
          checkpoint_dir: Optional[Path] = None, checkpoint_every: int = 0, start_episode: int = 0,
          curve: Optional[list] = None) -> list[dict]:
    """Train for episodes ``start_episode .. episodes-1``.

    ``env_factory(episode)`` returns the environment for that episode, which
    lets a run either replay one geometry or draw fresh user populations.
    Every random draw during episode ``e`` comes from streams keyed by ``e``,
    so resuming from a checkpoint taken at an episode boundary reproduces an
    uninterrupted run exactly.
    """
    rows = list(curve or [])
    for ep in range(start_episode, episodes):
        env = env_factory(ep)
        trace = run_episode(env, controller, ep, explore=True)
        rows.append(_curve_row(ep, controller.end_episode(), trace))
        log.debug("episode %d return %.4f", ep, rows[-1]["mean_return"])
        done = ep + 1
        if checkpoint_dir is not None and (done == episodes or (checkpoint_every and done % checkpoint_every == 0)):
            save_training(checkpoint_dir, controller, done, rows)
    return rows


def save_training(directory, controller: Controller, episodes_done: int, rows) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if hasattr(controller, "save"):
        controller.save(directory)
    write_curve(rows, directory / "curve.csv")
    (directory / "progress.json").write_text(json.dumps({"controller": controller.name,
                                                         "episodes_done": episodes_done}, sort_keys=True))


def load_training(directory, controller: Controller):
    """Restore a controller; returns ``(episodes_done, curve_rows)``."""
    directory = Path(directory)
    progress = json.loads((directory / "progress.json").read_text())
    if progress["controller"] != controller.name:
        raise ValueError(f"checkpoint is for {progress['controller']!r}, not {controller.name!r}")
    if hasattr(controller, "load"):
        controller.load(directory)
    return int(progress["episodes_done"]), read_curve(directory / "curve.csv")
