"""Hypersphere cap probabilities and Monte-Carlo distances between hyperballs.

Class clusters are modelled as uniform hyperballs around simplex prototypes.
The expected distance between a point of one ball and an independent point
of another has no closed form in general, so it is estimated by sampling.

Sampling is split into fixed-size chunks, each with its own counter-derived
random stream, and chunk sums are reduced with exact summation. Estimates are
therefore identical for any number of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .simplex import simplex_vertices

# stream tags, part of every chunk's spawn key
_OP_DISTANCE = 1
_OP_EXPERIMENT = 2

# float64 entries per chunk buffer; bounds memory at high dimension
_CHUNK_ELEMENTS = 1 << 21
_MAX_CHUNK_ROWS = 1 << 16

DEFAULT_SAMPLES = 100_000
MODES = ("same_class", "different_class", "shift")


class WideCapAngleWarning(UserWarning):
    """The nearest-neighbour angle exceeds pi/2; the flat-disc cap approximation is poor."""


@dataclass(frozen=True)
class HyperballSpec:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        if c.ndim != 1:
            raise ValidationError("hyperball center must be a vector")
        if not (self.radius >= 0.0 and math.isfinite(self.radius)):
            raise ValidationError(f"hyperball radius must be finite and >= 0, got {self.radius!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True)
class DistanceEstimate:
    mean: float
    std_error: float
    samples: int
    seed: int


# ---------------------------------------------------------------------------
# cap geometry


def _check_nd(n, d):
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be an integer >= 1, got {n!r}")
    if int(d) != d or d < 3:
        raise ValidationError(f"d must be an integer >= 3, got {d!r}")
    return int(n), int(d)


def log_expected_nn_angle(n: int, d: int) -> float:
    n, d = _check_nd(n, d)
    m = d - 1
    log_inner = math.lgamma(d / 2) - math.log(2.0 * math.sqrt(math.pi) * m) - math.lgamma(m / 2)
    return -2.0 / m * math.log(n) + math.lgamma(1.0 + 1.0 / m) - log_inner / m


def expected_nn_angle(n: int, d: int) -> float:
    """Expected angle (radians) from one of ``n`` uniform unit vectors in R^d to its nearest neighbour."""
    return math.exp(log_expected_nn_angle(n, d))


def cap_probability(n: int, d: int) -> float:
    """Probability of a random unit vector landing in the nearest-neighbour cap.

    The cap is approximated by a flat (d-2)-sphere of radius ``sin(theta)``,
    which is what the formula computes; at d=3 it reduces to
    ``sin(theta)/2``, not the exact solid-angle fraction ``sin^2(theta/2)``.
    """
    theta = expected_nn_angle(n, d)
    if theta > math.pi / 2:
        warnings.warn(
            f"nearest-neighbour angle {theta:.4f} rad exceeds pi/2 for n={n}, d={d}",
            WideCapAngleWarning,
            stacklevel=2,
        )
    s = math.sin(theta)
    if s <= 0.0:
        raise NumericalError(f"sin(theta) <= 0 for n={n}, d={d} (theta={theta!r})")
    log_p = (
        -0.5 * math.log(math.pi)
        + (d - 2) * math.log(s)
        + math.lgamma(d / 2)
        - math.lgamma((d - 1) / 2)
    )
    p = math.exp(log_p)
    if p > 1.0:
        if p - 1.0 <= 1e-12:
            return 1.0
        raise NumericalError(f"cap probability {p!r} exceeds 1 for n={n}, d={d}")
    return p


def cap_probability_table(ns: Sequence[int], dims: Sequence[int]) -> list[tuple[int, int, float, float]]:
    """Rows of ``(n, d, theta_rad, p)`` for every combination, ``n`` outermost."""
    rows = []
    for n in ns:
        for d in dims:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", WideCapAngleWarning)
                rows.append((int(n), int(d), expected_nn_angle(n, d), cap_probability(n, d)))
    return rows


# ---------------------------------------------------------------------------
# sampling


def _ball_offsets(rng: np.random.Generator, n: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    u = 1.0 - rng.random(n)  # (0, 1]
    return g * (radius * u ** (1.0 / d))[:, None]


def sample_in_ball(ball: HyperballSpec, rng: np.random.Generator) -> np.ndarray:
    """One point uniformly distributed in the closed ball."""
    return ball.center + _ball_offsets(rng, 1, ball.dim, ball.radius)[0]


def sample_many_in_ball(ball: HyperballSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    return ball.center + _ball_offsets(rng, n, ball.dim, ball.radius)


def _chunk_plan(samples: int, d: int) -> list[int]:
    rows = max(1, min(_MAX_CHUNK_ROWS, _CHUNK_ELEMENTS // max(d, 1)))
    full, rest = divmod(samples, rows)
    return [rows] * full + ([rest] if rest else [])


def _distance_chunk(args):
    seed, index, rows, delta, ra, rb = args
    ss = np.random.SeedSequence(seed, spawn_key=(_OP_DISTANCE, index))
    rng = np.random.default_rng(ss)
    d = delta.shape[0]
    oa = _ball_offsets(rng, rows, d, ra)
    ob = _ball_offsets(rng, rows, d, rb)
    # (c_a + o_a) - (c_b + o_b), grouped so a common translation of both centers cancels exactly
    dist = np.linalg.norm(delta + (oa - ob), axis=1)
    return math.fsum(dist), math.fsum(dist * dist)


def mc_expected_distance(
    ball_a: HyperballSpec,
    ball_b: HyperballSpec,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    threads: int = 1,
) -> DistanceEstimate:
    """Estimate E||x_a - x_b|| for independent uniform x_a in ball_a, x_b in ball_b."""
    if ball_a.dim != ball_b.dim:
        raise ValidationError(f"dimension mismatch: {ball_a.dim} vs {ball_b.dim}")
    if int(samples) != samples or samples < 1:
        raise ValidationError(f"samples must be a positive integer, got {samples!r}")
    samples = int(samples)
    delta = ball_a.center - ball_b.center
    plan = _chunk_plan(samples, ball_a.dim)
    jobs = [(seed, i, rows, delta, ball_a.radius, ball_b.radius) for i, rows in enumerate(plan)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_distance_chunk, jobs))
    else:
        parts = [_distance_chunk(j) for j in jobs]
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / samples
    if samples > 1:
        var = max(0.0, (s2 - s1 * mean) / (samples - 1))
        se = math.sqrt(var / samples)
    else:
        se = float("nan")
    return DistanceEstimate(mean, se, samples, int(seed))


# ---------------------------------------------------------------------------
# theorem experiments


@dataclass(frozen=True)
class TheoremRow:
    """One line of a theorem experiment; ``key`` is the dimension, or the shift in shift mode."""

    mode: str
    key: float
    mean_kt: float
    stderr_kt: float
    mean_kk: float
    stderr_kk: float
    samples: int
    seed: int

    @property
    def margin(self) -> float:
        """``E[D_kk] - E[D_kt]`` in units of combined standard error."""
        return (self.mean_kk - self.mean_kt) / math.hypot(self.stderr_kt, self.stderr_kk)


def _subseed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(_OP_EXPERIMENT,) + tuple(key))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def prototype_pair(d: int, simplex_k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two distinct simplex prototypes rescaled to unit norm, as points of R^d.

    With ``simplex_k = d + 1`` (the default) the vertices are used directly;
    otherwise the pair is placed isometrically along the first two axes.
    """
    k = d + 1 if simplex_k is None else int(simplex_k)
    if k < 2:
        raise ValidationError("simplex_k must be >= 2")
    if k - 1 == d:
        w = simplex_vertices(k) * math.sqrt(k)
        return w[0].copy(), w[1].copy()
    # unit-norm vertices of a K-simplex have inner product -1/(K-1)
    cos = -1.0 / (k - 1)
    a = np.zeros(d)
    b = np.zeros(d)
    a[0] = 1.0
    if d == 1:
        if k != 2:
            raise ValidationError(f"a {k}-vertex simplex pair cannot be embedded in R^1 at unit norm")
        b[0] = -1.0
    else:
        b[0], b[1] = cos, math.sqrt(1.0 - cos * cos)
    return a, b


def theorem_experiment(
    mode: str,
    dims: Sequence[int],
    r_old: float = 1.0,
    r_new: float = 0.5,
    simplex_k: int | None = None,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    shifts: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
    threads: int = 1,
) -> list[TheoremRow]:
    """Compare E[D_kt] (old ball vs shrunk ball) with E[D_kk] (old vs old).

    same_class
        Concentric balls at one prototype.
    different_class
        Old ball at prototype i against balls at prototype j.
    shift
        Concentric pair whose second ball is translated by ``s`` along a
        fixed axis, for every ``s`` in ``shifts``; ``dims`` must hold a
        single dimension and rows are keyed by ``s``.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if r_new > r_old:
        raise ValidationError(f"the update must shrink the ball: r_new={r_new} > r_old={r_old}")
    if r_new < 0:
        raise ValidationError("radii must be non-negative")
    dims = [int(d) for d in dims]
    if not dims or min(dims) < 1:
        raise ValidationError("dims must be a non-empty list of positive integers")
    mode_code = MODES.index(mode)

    def pair(ca, ra, cb, rb, point, which):
        s = _subseed(seed, mode_code, point, which)
        return mc_expected_distance(HyperballSpec(ca, ra), HyperballSpec(cb, rb), samples, s, threads)

    rows = []
    if mode == "shift":
        if len(dims) != 1:
            raise ValidationError("shift mode takes exactly one dimension")
        d = dims[0]
        center, _ = prototype_pair(d, simplex_k)
        axis = np.zeros(d)
        axis[0] = 1.0
        for p, s in enumerate(shifts):
            moved = center + float(s) * axis
            kt = pair(center, r_old, moved, r_new, p, 0)
            kk = pair(center, r_old, moved, r_old, p, 1)
            rows.append(TheoremRow(mode, float(s), kt.mean, kt.std_error, kk.mean, kk.std_error, samples, seed))
        return rows

    for p, d in enumerate(dims):
        ci, cj = prototype_pair(d, simplex_k)
        if mode == "same_class":
            cj = ci
        kt = pair(ci, r_old, cj, r_new, p, 0)
        kk = pair(ci, r_old, cj, r_old, p, 1)
        rows.append(TheoremRow(mode, d, kt.mean, kt.std_error, kk.mean, kk.std_error, samples, seed))
    return rows
