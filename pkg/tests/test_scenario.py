import logging

import pytest

from leo_handover import scenario
from leo_handover.scenario import ConfigError, config_hash, dump_config, load_config, loads_config, run_matrix

TINY = """
constellation: {num_planes: 4, sats_per_plane: 6, raan_spread: 30.0, phase_offset: 0.5, raan_origin: 5.0}
users:
  counts: {aircraft: 1, evtol: 1, uav: 1, ground: 3}
time: {section_length: 10.0, episode_length: 60.0}
training:
  episodes: 1
  deep: {hidden: [8], batch_size: 4, warmup: 4}
"""


def test_empty_config_gives_defaults(caplog):
    with caplog.at_level(logging.INFO, logger="leo_handover.scenario"):
        cfg = loads_config("")
    assert sum(cfg.users.counts.values()) == 80
    assert cfg.users.counts == {"aircraft": 10, "evtol": 10, "uav": 10, "ground": 50}
    assert cfg.link.carrier_frequency == 18.5 and cfg.link.bandwidth == 250.0 and cfg.link.eirp == 73.1
    assert cfg.link.elevation_threshold == 15.0 and cfg.link.polarization_isolation == 12.0
    assert cfg.reward.capacity == 8 and cfg.time.episode_length == 900.0 and cfg.time.sections == 90
    assert cfg.constellation.num_planes * cfg.constellation.sats_per_plane == 588
    # every omitted section (or key, inside a given section) is reported
    assert any("config default reward =" in r.getMessage() for r in caplog.records)
    caplog.clear()
    with caplog.at_level(logging.INFO, logger="leo_handover.scenario"):
        loads_config("reward: {beta: 2.0}")
    assert any("config default reward.capacity = 8" in r.getMessage() for r in caplog.records)


def test_shipped_default_matches_empty():
    assert config_hash(load_config("default", log_defaults=False)) == config_hash(loads_config("", False))


def test_override_capacity():
    cfg = loads_config("reward:\n  capacity: 4\n", False)
    assert cfg.reward.capacity == 4 and cfg.reward.params().capacity == 4
    assert cfg.with_overrides(**{"reward.capacity": 6}).reward.capacity == 6
    with pytest.raises(ConfigError):
        cfg.with_overrides(**{"reward.nope": 1})


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError, match=r"reward\.capcity.*line 3"):
        loads_config("seeds: [1]\nreward:\n  capcity: 4\n", False)
    with pytest.raises(ConfigError, match="users.counts.drone"):
        loads_config("users:\n  counts: {drone: 3}\n", False)


def test_malformed_yaml_reports_line():
    # the unclosed list on line 3 is detected where the parser trips, on line 4
    with pytest.raises(ConfigError, match="line 4"):
        loads_config("reward:\n  beta: 1.0\n  w1: [1, 2\nseeds: [1]\n", False)


@pytest.mark.parametrize("text, key", [
    ("reward: {capacity: 1.5}", "reward.capacity"),
    ("training: {deep: {gamma: 1.0}}", "gamma"),
    ("training: {qlearning: {gamma: 1.2}}", "gamma"),
    ("time: {section_length: 7.0}", "section_length"),
    ("policy: greedy", "policy"),
    ("scenario: s3", "scenario"),
    ("seeds: []", "seeds"),
    ("link: {normalize: true}", "link.normalize"),
    ("reward: {normalize: 1}", "reward.normalize"),
])
def test_invalid_values_rejected(text, key):
    with pytest.raises(ConfigError, match=key):
        loads_config(text, False)


def test_hash_ignores_key_order():
    a = loads_config("reward: {beta: 2.0, capacity: 6}\nseeds: [3]\n", False)
    b = loads_config("seeds: [3]\nreward: {capacity: 6, beta: 2.0}\n", False)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(a.with_overrides(seeds=[4]))


def test_dump_load_fixed_point():
    cfg = loads_config(TINY, False)
    text = dump_config(cfg)
    again = loads_config(text, False)
    assert dump_config(again) == text
    assert config_hash(again) == config_hash(cfg)


def test_run_matrix_counts_and_determinism(tmp_path):
    base = loads_config(TINY, False)
    res = run_matrix(base, ["mrst", "qlearning"], [2, 4], ["s2"], [1, 2], tmp_path / "a")
    assert res.ok and len(res.manifests) == 8 and len(res.rows) == 8
    again = run_matrix(base, ["mrst", "qlearning"], [2, 4], ["s2"], [1, 2], tmp_path / "b")
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    for m in res.manifests:
        for name in ("trace", "metrics"):
            assert ((tmp_path / "a" / "runs" / m.run_id / m.outputs[name]).read_bytes()
                    == (tmp_path / "b" / "runs" / m.run_id / m.outputs[name]).read_bytes())
    assert [m.run_id for m in res.manifests] == [m.run_id for m in again.manifests]


def test_matrix_continues_after_a_failed_run(tmp_path, monkeypatch):
    real = scenario.execute_run

    def flaky(cfg, out_root, geometry=None):
        if cfg.seeds[0] == 2:
            raise RuntimeError("boom")
        return real(cfg, out_root, geometry)

    monkeypatch.setattr(scenario, "execute_run", flaky)
    res = run_matrix(loads_config(TINY, False), ["mis"], [8], ["s1", "s2"], [1, 2, 3], tmp_path)
    assert len(res.manifests) == 4 and len(res.failures) == 2
    assert all("boom" in f[-1] for f in res.failures)
    assert (tmp_path / "failures.txt").read_text().count("\n") == 2
    with pytest.raises(ConfigError):
        run_matrix(loads_config(TINY, False), ["nope"], [8], ["s2"], [1], tmp_path)
