"""Reward scalarizers: linear, Chebyshev and threshold-aware dynamic."""
from __future__ import annotations

from dataclasses import dataclass, field

ALPHA_TOL = 1e-9


@dataclass(frozen=True)
class MetricSnapshot:
    """Dictionary-level metrics at one step.

    ``size_norm`` and ``phi_norm`` are divided by their values at reset
    unless the environment runs with raw reward inputs, in which case they
    carry the raw pathlet count and raw phi.
    """

    size_norm: float
    phi_norm: float
    loss: float
    mu_bar: float

    def as_tuple(self) -> tuple:
        return (self.size_norm, self.phi_norm, self.loss, self.mu_bar)


def check_alphas(alphas) -> tuple:
    alphas = tuple(float(a) for a in alphas)
    if len(alphas) != 4:
        raise ValueError(f"expected four objective weights, got {len(alphas)}")
    if any(a < 0 for a in alphas):
        raise ValueError(f"objective weights must be nonnegative: {alphas}")
    if abs(sum(alphas) - 1.0) > ALPHA_TOL:
        raise ValueError(f"objective weights must sum to 1, got {sum(alphas)!r}")
    return alphas


@dataclass
class ScalarizerConfig:
    kind: str = "linear"
    alphas: tuple = (0.25, 0.25, 0.25, 0.25)
    ideal_point: tuple = (0.0, 0.0, 0.0, 1.0)
    M: float = 0.25
    mu_threshold: float = 0.80
    terminal_adjustment: bool = True
    terminal_bonus_magnitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "chebyshev", "dynamic"):
            raise ValueError(f"unknown scalarizer kind {self.kind!r}")
        self.alphas = check_alphas(self.alphas)
        self.ideal_point = tuple(float(z) for z in self.ideal_point)
        if len(self.ideal_point) != 4 or any(not 0.0 <= z <= 1.0 for z in self.ideal_point):
            raise ValueError(f"ideal point must be four values in [0, 1]: {self.ideal_point}")


def linear_reward(prev: MetricSnapshot, curr: MetricSnapshot, alphas) -> float:
    a1, a2, a3, a4 = alphas
    return (-a1 * (curr.size_norm - prev.size_norm)
            - a2 * (curr.phi_norm - prev.phi_norm)
            - a3 * (curr.loss - prev.loss)
            + a4 * (curr.mu_bar - prev.mu_bar))


def chebyshev_reward(curr: MetricSnapshot, alphas, ideal_point=(0.0, 0.0, 0.0, 1.0)) -> float:
    """Negated largest weighted distance to the ideal point (never positive)."""
    return -max(a * abs(f - z) for a, f, z in zip(alphas, curr.as_tuple(), ideal_point))


def dynamic_weights(loss: float, mu_bar: float, M: float, mu_threshold: float) -> tuple:
    w_traj = 1.0 / max(0.01, (M - loss) / M)
    w_mu = 1.0 / max(0.01, (mu_bar - mu_threshold) / 0.2)
    return w_traj, w_mu


def dynamic_reward(prev: MetricSnapshot, curr: MetricSnapshot, alphas, M: float,
                   mu_threshold: float) -> float:
    a1, a2, a3, a4 = alphas
    w_traj, w_mu = dynamic_weights(curr.loss, curr.mu_bar, M, mu_threshold)
    return (-a1 * (curr.size_norm - prev.size_norm)
            - a2 * (curr.phi_norm - prev.phi_norm)
            - a3 * (curr.loss - prev.loss) * w_traj
            + a4 * (curr.mu_bar - prev.mu_bar) * w_mu)


def dynamic_terminal_adjustment(final: MetricSnapshot, M: float, mu_threshold: float,
                                magnitude: float = 1.0) -> float:
    """Bonus proportional to compaction if both thresholds hold, else a flat penalty."""
    if final.loss <= M and final.mu_bar >= mu_threshold:
        return magnitude * (1.0 - final.size_norm)
    return -magnitude


@dataclass
class Scalarizer:
    """Binds a :class:`ScalarizerConfig` to the per-step reward call."""

    config: ScalarizerConfig = field(default_factory=ScalarizerConfig)

    def __call__(self, prev: MetricSnapshot, curr: MetricSnapshot, done: bool) -> float:
        cfg = self.config
        if cfg.kind == "linear":
            return linear_reward(prev, curr, cfg.alphas)
        if cfg.kind == "chebyshev":
            return chebyshev_reward(curr, cfg.alphas, cfg.ideal_point)
        r = dynamic_reward(prev, curr, cfg.alphas, cfg.M, cfg.mu_threshold)
        if done and cfg.terminal_adjustment:
            r += dynamic_terminal_adjustment(curr, cfg.M, cfg.mu_threshold,
                                             cfg.terminal_bonus_magnitude)
        return r
