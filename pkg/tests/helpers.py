"""Small random worlds and from-scratch oracles shared by the test modules."""
from fractions import Fraction

import numpy as np

from pathlets.env import EnvConfig, MergeEnv
from pathlets.graph import TrajectoryRecord, build_initial_pathlet_graph
from pathlets.worlds import grid_network, random_walks


def small_world(seed, width=3, height=3, n_traj=12, lengths=(2, 6)):
    rng = np.random.default_rng(seed)
    net = grid_network(width, height)
    walks = random_walks(net, n_traj, lengths, rng)
    trajs = [TrajectoryRecord(f"t{i}", w) for i, w in enumerate(walks, start=1)]
    return net, trajs


def small_env(seed, **cfg):
    net, trajs = small_world(seed)
    g = build_initial_pathlet_graph(net, trajs)
    cfg.setdefault("M", 1.0)
    cfg.setdefault("mu_threshold", 0.0)
    return MergeEnv(EnvConfig(**cfg), g), net, trajs


def quotient_mu(env, t):
    """Quotient form of mu: live representation length over the initial length."""
    total = sum(env.graph.pathlets[pid].length for pid in t.representation)
    return Fraction(total, t.initial_pathlet_length)


def random_merge_episode(env, rng, merge_prob=0.7, on_step=None):
    """Drive an episode with random valid merges; returns the step results."""
    results = []
    while not env.done:
        mask = env.valid_action_mask()
        merges = np.flatnonzero(mask[1:]) + 1
        if len(merges) and rng.random() < merge_prob:
            action = int(rng.choice(merges))
        else:
            action = 0
        results.append(env.step(action))
        if on_step is not None:
            on_step(env, results[-1])
    return results


def five_point(f, x, i, h=1e-4):
    """Fourth-order central difference of ``f`` along coordinate ``i``."""
    e = np.zeros_like(x)
    e[i] = h
    return (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)


def kink_margin(net, states, actions, targets, delta=1.0):
    """Distance of the loss from its nearest non-differentiable point.

    Finite differences are no oracle within a step of a ReLU zero or of the
    Huber switch at ``|residual| = delta``.
    """
    x = np.asarray(states, dtype=float)
    margin = np.inf
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = x @ W + b
        margin = min(margin, float(np.abs(z).min()))
        x = np.maximum(z, 0.0)
    q = x @ net.weights[-1] + net.biases[-1]
    resid = q[np.arange(len(actions)), actions] - targets
    return min(margin, float(np.abs(np.abs(resid) - delta).min()))
