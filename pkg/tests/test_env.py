import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathlets import toy
from pathlets.env import (KEEP, EnvConfig, EnvUsageError, MergeEnv, PathletDictionary,
                          parse_forced_script, run_forced)
from pathlets.graph import build_initial_pathlet_graph, parse_road_network, trajectories_from_text
from helpers import quotient_mu, random_merge_episode, small_env

FINAL_SETS = {
    "p1+p3+p4": {"t5"}, "p2": {"t2", "t3"}, "p5+p8": {"t1", "t4"},
    "p6": {"t4"}, "p7": {"t1", "t6"}, "p9": {"t1", "t6"},
}
FINAL_MU = {"t1": Fraction(1), "t2": Fraction(1, 3), "t3": Fraction(1, 2),
            "t4": Fraction(3, 4), "t5": Fraction(1), "t6": Fraction(2, 3)}


def toy_env(toy_graph, **cfg):
    env = MergeEnv(EnvConfig(**cfg), toy_graph, record_trace=True)
    env.reset(seed=0)
    return env


# -------------------------------------------------------------------- reset

def test_reset_observation(toy_graph):
    env = toy_env(toy_graph)
    s = env.observe()
    assert (s.S1, s.S3, s.S4) == (9, 0.0, 1.0)
    assert s.S2 == pytest.approx(19 / 6, abs=1e-15)  # mean(4,3,2,4,3,3)
    assert env.observation_vector().tolist() == [1.0, 1.0, 0.0, 1.0]


def test_reset_does_not_touch_template(toy_graph):
    env = toy_env(toy_graph)
    run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    assert len(toy_graph.pathlets) == 9
    assert all(t.mu_exact == 1 for t in toy_graph.trajectories.values())
    env.reset(seed=3)
    assert env.observe().S1 == 9


def test_reset_is_seeded(toy_graph):
    a = MergeEnv(EnvConfig(), toy_graph)
    b = MergeEnv(EnvConfig(), toy_graph)
    picks_a = [a.reset(seed=s).current for s in range(20)]
    picks_b = [b.reset(seed=s).current for s in range(20)]
    assert picks_a == picks_b
    assert len(set(picks_a)) > 1


def test_reset_empty_graph_rejected():
    net = parse_road_network("")
    env = MergeEnv(EnvConfig(), build_initial_pathlet_graph(net, []))
    with pytest.raises(EnvUsageError):
        env.reset()


def test_enhanced_state_at_p8(toy_graph):
    env = toy_env(toy_graph, state_mode="enhanced")
    env.set_current("p8")
    s = env.observe()
    assert s.current_weight == 0.5
    assert s.neighbor_weights == (2 / 6, 2 / 6, 1 / 6, 0.0, 0.0, 0.0, 0.0, 0.0)
    vec = env.observation_vector()
    assert vec.shape == (env.obs_dim,) == (13,)
    assert vec[4] == 0.5


# --------------------------------------------------------------- neighbours

def test_eligible_neighbors_canonical_order(toy_graph):
    env = toy_env(toy_graph)
    assert env.eligible_neighbors("p3") == ["p4", "p2", "p1"]


def test_eligible_neighbors_truncated(toy_graph):
    env = toy_env(toy_graph, n_max_neighbors=2)
    assert env.eligible_neighbors("p3") == ["p4", "p2"]


def test_eligible_neighbors_skip_processed(toy_graph):
    env = toy_env(toy_graph)
    for pid in ("p1", "p2", "p4"):
        env.set_current(pid)
        env.step(KEEP)
    assert env.eligible_neighbors("p3") == []


def test_unw_orders_by_id(toy_graph):
    env = toy_env(toy_graph, variant="UNW")
    assert env.eligible_neighbors("p3") == ["p1", "p2", "p4"]
    assert all(p.weight == 1.0 for p in env.graph.pathlets.values())


# --------------------------------------------------------------------- step

def test_merge_p5_p8(toy_graph):
    env = toy_env(toy_graph)
    env.set_current("p5")
    res = env.step(env.action_for("p8"))
    assert res.info == {"action_was_valid": True, "merged_id": "p5+p8", "termination_reason": None}
    merged = env.graph.pathlets["p5+p8"]
    assert merged.traversal_set == {"t1", "t4"}
    assert merged.length == 2
    assert env.graph.trajectories["t6"].mu_exact == Fraction(2, 3)
    assert env.current == "p5+p8"
    s = res.observation
    assert (s.S1, s.S3) == (8, 0.0)
    assert s.S2 == pytest.approx(16 / 6, abs=1e-15)
    assert s.S4 == pytest.approx(17 / 18, abs=1e-15)


def test_merge_p5_p8_linear_reward(toy_graph):
    # hand simulation: d|S| = -1/9, d(phi) = -3/19 relative, d(mu_bar) = -1/18
    env = toy_env(toy_graph)
    env.set_current("p5")
    res = env.step(env.action_for("p8"))
    expected = Fraction(1, 4) * (Fraction(1, 9) + Fraction(3, 19) - Fraction(1, 18))
    assert res.reward == pytest.approx(float(expected), abs=1e-12)


def test_golden_forced_run(toy_graph):
    env = toy_env(toy_graph)
    results = run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    got = {pid: p.traversal_set for pid, p in env.graph.pathlets.items()}
    assert got == FINAL_SETS
    mu = {tid: t.mu_exact for tid, t in env.graph.trajectories.items()}
    assert mu == FINAL_MU
    assert results[-1].done
    assert env.termination_reason == "mu_below"
    d = env.dictionary()
    assert d.summary["S1"] == 6
    assert d.summary["phi"] == pytest.approx(5 / 3)
    assert d.summary["mu_bar"] == pytest.approx(17 / 24)


def test_merged_pathlet_geometry(toy_graph):
    env = toy_env(toy_graph)
    run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    p = env.graph.pathlets["p1+p3+p4"]
    assert p.edge_seq in (["p1", "p3", "p4"], ["p4", "p3", "p1"])
    assert {p.start_node, p.end_node} == {"n20", "n01"}
    assert len(p.nodes) == 4


def test_k1_degrades_every_merge(toy_graph):
    env = toy_env(toy_graph, k=1)
    steps = 0
    while not env.done:
        assert not env.valid_action_mask()[1:].any()
        res = env.step(1)
        assert not res.info["action_was_valid"]
        steps += 1
    assert steps == 9
    assert env.termination_reason == "exhausted"
    assert env.observe().S1 == 9


def test_out_of_range_action_degrades(toy_graph):
    env = toy_env(toy_graph)
    env.set_current("p1")  # one eligible neighbour
    res = env.step(5)
    assert res.info["action_was_valid"] is False
    assert "p1" in env.graph.processed


def test_negative_action_rejected(toy_graph):
    env = toy_env(toy_graph)
    with pytest.raises(ValueError):
        env.step(-1)


def test_step_after_done(toy_graph):
    env = toy_env(toy_graph)
    run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    with pytest.raises(EnvUsageError):
        env.step(KEEP)


def test_cycle_closing_merge_is_invalid():
    net = parse_road_network("e1,a,b\ne2,b,c\ne3,c,a\n")
    trajs = trajectories_from_text("t1:e1,e2,e3\n", net)
    env = MergeEnv(EnvConfig(M=1.0, mu_threshold=0.0), build_initial_pathlet_graph(net, trajs))
    env.reset(0)
    env.set_current("e1")
    env.step(env.action_for("e2"))
    assert env.current == "e1+e2"
    assert env.eligible_neighbors() == ["e3"]
    assert not env.can_merge("e1+e2", "e3")
    res = env.step(1)
    assert res.info["action_was_valid"] is False
    assert "e3" in env.graph.pathlets


def test_nr_variant_kills_partial_trajectory(toy_graph):
    env = toy_env(toy_graph, variant="NR", M=1.0, mu_threshold=0.0)
    env.set_current("p5")
    env.step(env.action_for("p8"))
    t6 = env.graph.trajectories["t6"]
    assert not t6.alive and t6.representation == []
    assert env.observe().S3 == pytest.approx(1 / 6)
    assert "t6" not in env.graph.pathlets["p7"].traversal_set
    assert env.graph.pathlets["p7"].weight == pytest.approx(1 / 6)


def test_loss_exceeded_termination(toy_graph):
    env = toy_env(toy_graph, variant="NR", M=0.1, mu_threshold=0.0)
    env.set_current("p5")
    res = env.step(env.action_for("p8"))
    assert res.done and res.info["termination_reason"] == "loss_exceeded"


def test_trace_rows(toy_graph):
    env = toy_env(toy_graph)
    run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    assert [r["step"] for r in env.trace] == [1, 2, 3]
    assert env.trace[-1]["termination_reason"] == "mu_below"
    assert set(env.trace[0]) == {"step", "action", "valid", "S1", "S2", "S3", "S4",
                                 "reward", "termination_reason"}


def test_dictionary_json_round_trip(toy_graph):
    env = toy_env(toy_graph)
    run_forced(env, parse_forced_script(toy.FORCED_SCRIPT))
    d = env.dictionary()
    back = PathletDictionary.from_json(d.to_json())
    assert back.pathlets == d.pathlets
    assert back.summary == json.loads(json.dumps(d.summary))
    p = back.by_id()["p5+p8"]
    assert p["traversal_traj_ids"] == ["t1", "t4"]
    assert p["weight"] == pytest.approx(2 / 6)
    assert set(back.summary) >= {"S1", "phi", "L_traj", "mu_bar", "config"}


def test_parse_forced_script():
    assert parse_forced_script("# c\np1,p2\np3,KEEP\np4\n") == [("p1", "p2"), ("p3", None), ("p4", None)]
    with pytest.raises(ValueError):
        parse_forced_script("a,b,c\n")


@pytest.mark.parametrize("bad", [dict(k=0), dict(M=1.5), dict(mu_threshold=-0.1),
                                 dict(alphas=(0.5, 0.5, 0.5, 0.0)), dict(variant="X"),
                                 dict(state_mode="full"), dict(n_max_neighbors=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        EnvConfig(**bad)


# --------------------------------------------------------------- invariants

def _check_invariants(env, net, prev_mu):
    g = env.graph
    # edge conservation
    assert sorted(g.covered_edges()) == sorted(net.edges)
    for pid, p in g.pathlets.items():
        assert 1 <= p.length <= env.config.k
        assert len(set(p.nodes)) == len(p.nodes)
        if env.config.variant == "UNW":
            assert p.weight == 1.0
        else:
            assert p.weight * g.n_trajectories == pytest.approx(len(p.traversal_set), abs=1e-9)
    assert g.processed <= set(g.pathlets)
    for tid, t in g.trajectories.items():
        if t.alive:
            assert t.mu_exact == quotient_mu(env, t)
            assert t.mu_exact > 0
            for pid in t.representation:
                assert tid in g.pathlets[pid].traversal_set or g.pathlets[pid].length == 1
        else:
            assert t.mu_exact == 0 and t.representation == []
        assert t.mu_exact <= prev_mu[tid]
        prev_mu[tid] = t.mu_exact


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["standard", "NR", "UNW"]),
       st.integers(2, 6))
def test_episode_invariants(seed, variant, k):
    env, net, _ = small_env(seed, variant=variant, k=k)
    env.reset(seed)
    prev_mu = {tid: Fraction(1) for tid in env.graph.trajectories}
    n0 = env.n_initial
    rng = np.random.default_rng(seed)

    def on_step(env, res):
        _check_invariants(env, net, prev_mu)
        merged = res.info["merged_id"]
        if merged is not None:
            parts = merged.split("+")
            assert env.graph.pathlets[merged].length == len(parts)

    results = random_merge_episode(env, rng, on_step=on_step)
    assert len(results) <= n0 * k
    assert results[-1].done and all(not r.done for r in results[:-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_merge_shrinks_traversal_sets(seed):
    env, _, _ = small_env(seed, k=6)
    env.reset(seed)
    rng = np.random.default_rng(seed)
    while not env.done:
        mask = env.valid_action_mask()
        merges = np.flatnonzero(mask[1:]) + 1
        if not len(merges):
            env.step(KEEP)
            continue
        a = env.current
        b = env.eligible_neighbors()[int(rng.choice(merges)) - 1]
        la, lb = env.graph.pathlets[a].length, env.graph.pathlets[b].length
        sa = set(env.graph.pathlets[a].traversal_set)
        sb = set(env.graph.pathlets[b].traversal_set)
        res = env.step(env.action_for(b))
        new = env.graph.pathlets[res.info["merged_id"]]
        assert new.traversal_set <= sa & sb
        assert new.length == la + lb
        assert min(la, lb) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_mask_matches_step_validity(seed):
    env, _, _ = small_env(seed)
    env.reset(seed)
    rng = np.random.default_rng(seed)
    while not env.done:
        mask = env.valid_action_mask()
        a = int(rng.integers(env.n_actions))
        res = env.step(a)
        assert res.info["action_was_valid"] == bool(mask[a])
