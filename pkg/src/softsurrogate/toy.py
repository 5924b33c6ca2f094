"""Two-state synthetic domain with a quadratic return.

An initial state ``s0`` is drawn on an even grid over ``[0, 1.5]`` with
Gaussian jitter.  One transition produces ``s1``:

* behavior: ``s1 = s0`` with probability 0.5, ``(-0.6 + 0.1 U) s0`` with
  probability 0.45 and ``1.5`` otherwise;
* target: ``s1 = 1.5`` if ``s0 < 1.25`` else ``0``;

each followed by ``Normal(0, sigma)`` jitter.  The return is
``f(s0, s1) = 5 s0 + s1 + s1^2`` and is observed with ``Normal(0, omega)``
noise.  Given the prefix, the expected return is the same under both
policies, so surrogacy holds with a one-step prefix.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .data import BehaviorDataset, TargetDataset
from .density_ratio import DensityRatioModel

STAY, SHRINK, JUMP = 0, 1, 2
BRANCH_PROBS = (0.5, 0.45, 0.05)
TARGET_THRESHOLD = 1.25
HIGH_STATE = 1.5


@dataclass(frozen=True)
class ToyConfig:
    n_behavior: int = 5000
    n_target: int = 100
    noise_omega: float = 1.0
    state_noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_behavior < 1 or self.n_target < 1:
            raise ValueError("dataset sizes must be >= 1")
        if self.noise_omega < 0 or self.state_noise_sigma < 0:
            raise ValueError("noise scales must be >= 0")


@dataclass(frozen=True)
class ToySample:
    s0: float
    s1: float
    true_return: float
    observed_return: float


def true_return(s0, s1):
    """The noiseless return ``5 s0 + s1 + s1^2``."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    return 5.0 * s0 + s1 + s1 * s1


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for one ``purpose`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(purpose.encode())]))


def initial_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, HIGH_STATE, n)


def behavior_next_state(s0, branch, u):
    """Noiseless behavior transition for given branch ids and uniforms."""
    s0 = np.asarray(s0, dtype=float)
    branch = np.asarray(branch)
    return np.where(
        branch == STAY, s0, np.where(branch == SHRINK, (-0.6 + 0.1 * np.asarray(u)) * s0, HIGH_STATE)
    )


def target_next_state(s0):
    """Noiseless target transition."""
    return np.where(np.asarray(s0, dtype=float) < TARGET_THRESHOLD, HIGH_STATE, 0.0)


def draw_branches(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(3, size=n, p=BRANCH_PROBS)


def _pack(s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
    return np.stack([s0, s1], axis=1)[:, :, None]


def _draw(config: ToyConfig, n: int, role: str, next_state):
    seed, sigma = config.seed, config.state_noise_sigma
    s0 = initial_grid(n) + stream(seed, f"{role}/grid_noise").normal(0.0, sigma, n) if sigma else initial_grid(n)
    s1 = next_state(s0)
    if sigma:
        s1 = s1 + stream(seed, f"{role}/state_noise").normal(0.0, sigma, n)
    truth = true_return(s0, s1)
    observed = truth.copy()
    if config.noise_omega:
        observed = truth + stream(seed, f"{role}/return_noise").normal(0.0, config.noise_omega, n)
    return s0, s1, truth, observed


def _behavior_kernel(config: ToyConfig, n: int):
    branch = draw_branches(n, stream(config.seed, "behavior/branch"))
    u = stream(config.seed, "behavior/branch_uniform").random(n)
    return lambda s0: behavior_next_state(s0, branch, u)


def sample_behavior(config: ToyConfig) -> BehaviorDataset:
    """Labeled behavior prefixes ``(s0, s1)`` with observed returns."""
    n = config.n_behavior
    s0, s1, _, observed = _draw(config, n, "behavior", _behavior_kernel(config, n))
    return BehaviorDataset(states=_pack(s0, s1), rewards=np.zeros((n, 0)), returns=observed)


def sample_behavior_with_truth(config: ToyConfig):
    """Like :func:`sample_behavior` but also returns the noiseless returns."""
    n = config.n_behavior
    s0, s1, truth, observed = _draw(config, n, "behavior", _behavior_kernel(config, n))
    return BehaviorDataset(states=_pack(s0, s1), rewards=np.zeros((n, 0)), returns=observed), truth


def sample_target_labeled(config: ToyConfig):
    """Target prefixes labeled with observed returns, plus the hidden truth.

    The labeled dataset is what a full-horizon Monte Carlo baseline would
    see; estimators that respect the short-horizon protocol get only
    ``labeled.unlabeled()``.
    """
    m = config.n_target
    s0, s1, truth, observed = _draw(config, m, "target", target_next_state)
    return BehaviorDataset(states=_pack(s0, s1), rewards=np.zeros((m, 0)), returns=observed), truth


def sample_target(config: ToyConfig):
    """Unlabeled target prefixes and their hidden true returns."""
    labeled, truth = sample_target_labeled(config)
    return labeled.unlabeled(), truth


def sample(config: ToyConfig, target: bool = False) -> list[ToySample]:
    """Per-item view of one dataset, for inspection."""
    if target:
        data, truth = sample_target_labeled(config)
    else:
        data, truth = sample_behavior_with_truth(config)
    return [
        ToySample(float(s[0, 0]), float(s[1, 0]), float(t), float(g))
        for s, t, g in zip(data.states, truth, data.returns)
    ]


def _normal_pdf(x, mean, sigma):
    return norm.pdf(x, loc=mean, scale=sigma)


def behavior_density(s0, s1, sigma: float = 0.1):
    """Conditional density of ``s1`` given ``s0`` under the behavior kernel."""
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    a, b = -0.6 * s0, -0.5 * s0
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    width = hi - lo
    # Uniform on [lo, hi] convolved with the Gaussian jitter.
    safe = np.where(width > 1e-12, width, 1.0)
    spread = (norm.cdf((s1 - lo) / sigma) - norm.cdf((s1 - hi) / sigma)) / safe
    spread = np.where(width > 1e-12, spread, _normal_pdf(s1, lo, sigma))
    return (
        BRANCH_PROBS[STAY] * _normal_pdf(s1, s0, sigma)
        + BRANCH_PROBS[SHRINK] * spread
        + BRANCH_PROBS[JUMP] * _normal_pdf(s1, HIGH_STATE, sigma)
    )


def target_density(s0, s1, sigma: float = 0.1):
    return _normal_pdf(s1, target_next_state(s0), sigma)


def oracle_ratio(s0, s1, sigma: float = 0.1):
    """Exact prefix density ratio.

    Both policies share the law of ``s0``, so the ratio is the ratio of the
    conditional densities of ``s1``.
    """
    return target_density(s0, s1, sigma) / behavior_density(s0, s1, sigma)


def population_target_value(n_target: int, sigma: float = 0.1) -> float:
    """Expected mean true return of a target dataset of size ``n_target``.

    With grid points ``g_i`` and jitter ``sigma``, ``E[5 s0] = 5 g_i`` and
    ``E[s1 + s1^2] = sigma^2 + 3.75 P(s0 < 1.25)`` because the noiseless
    next state is 1.5 (where ``x + x^2 = 3.75``) or 0.
    """
    g = initial_grid(n_target)
    if sigma > 0:
        p_high = norm.cdf((TARGET_THRESHOLD - g) / sigma)
    else:
        p_high = (g < TARGET_THRESHOLD).astype(float)
    return float(np.mean(5.0 * g + sigma**2 + (HIGH_STATE + HIGH_STATE**2) * p_high))


def corrupt_density_denominator(
    ratios: DensityRatioModel,
    seed: int,
    units: str = "probability",
    noise: Optional[np.ndarray] = None,
    mean: float = 10.0,
    scale: float = 10.0,
    floor: float = 1e-3,
) -> DensityRatioModel:
    """Perturb each cell's behavior-side denominator with Gaussian noise.

    Parameters
    ----------
    units : {"probability", "count"}
        ``"probability"`` adds the noise to the behavior cell probability
        ``count_b / N``; ``"count"`` adds it to the behavior count
        ``N * p_b`` before dividing by ``N``.
    noise : array, optional
        Explicit per-cell perturbations; drawn from ``Normal(mean, scale)``
        with ``seed`` when omitted.
    floor : float
        Perturbed denominators are clamped to at least ``floor`` (in the
        chosen units) so every ratio stays finite and positive where the
        numerator is.
    """
    den = ratios.denominator
    if den is None:
        raise TypeError("corruption needs a histogram or tabular ratio model")
    if noise is None:
        noise = stream(seed, "ratio_corruption").normal(mean, scale, den.shape)
    noise = np.broadcast_to(np.asarray(noise, dtype=float), den.shape)
    if units == "probability":
        new_den = np.maximum(den + noise, floor)
    elif units == "count":
        n = ratios.n_behavior
        new_den = np.maximum(den * n + noise, floor) / n
    else:
        raise ValueError(f"units must be 'probability' or 'count', got {units!r}")
    return ratios.with_denominator(new_den)
