"""Expected exchange revenue under fitted bid models, and floor optimisation.

Revenue of one opportunity at floors ``rho``::

    E_k[ sum_i k_i * R_i(rho, k) + adx_rev * prod_i F_i(rho_i | rho_i)**k_i ]

where ``R_i`` is the expected first-price payment from bidder ``i``,

    R_i = int_{rho_i}^{B_max} b * prod_{j != i} F_j(max(b, rho_j) | rho_j)**k_j dF_i(b | rho_i),

and ``k`` is a vector of independent Bernoulli participation draws.
"""
from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .auction import BidderType, FloorVector
from .bidmodel import FloorLinkModel, ParticipationModel, link_params, weibull_quantile

logger = logging.getLogger(__name__)

DEFAULT_NODES = 128
DEFAULT_TAIL_MASS = 1e-9
DEFAULT_MC_DRAWS = 2000


@dataclass(frozen=True)
class BidDistributionModel:
    link: FloorLinkModel
    participation: ParticipationModel


@dataclass(frozen=True)
class Bidder:
    bidder_id: str
    bidder_type: BidderType
    model: BidDistributionModel

    def __post_init__(self):
        object.__setattr__(self, "bidder_type", BidderType(self.bidder_type))


@dataclass(frozen=True)
class PlacementContext:
    publisher_id: str
    site_id: str
    placement_id: str
    bidders: tuple[Bidder, ...]
    adx_rev: float = 0.0
    floor_cap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "bidders", tuple(self.bidders))
        if not self.bidders:
            raise ValueError("a placement context needs at least one bidder")
        if not (math.isfinite(self.adx_rev) and self.adx_rev >= 0):
            raise ValueError(f"adx_rev must be finite and >= 0, got {self.adx_rev!r}")
        if not (math.isfinite(self.floor_cap) and self.floor_cap > 0):
            raise ValueError(f"floor_cap must be finite and > 0, got {self.floor_cap!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.publisher_id, self.site_id, self.placement_id)

    def types_present(self) -> set[BidderType]:
        return {b.bidder_type for b in self.bidders}


@dataclass(frozen=True)
class RevenueEstimate:
    value: float
    yahoox_component: float
    adx_component: float
    mc_std_error: float = 0.0


@dataclass(frozen=True)
class OptimizerConfig:
    grid_size: int = 15
    mc_draws: int = DEFAULT_MC_DRAWS
    seed: int = 0
    nodes: int = DEFAULT_NODES
    tail_mass: float = DEFAULT_TAIL_MASS
    nm_maxiter: int = 200
    deadline: Optional[float] = None  # time.monotonic() value


@dataclass(frozen=True)
class OptimizationResult:
    floors: FloorVector
    estimate: RevenueEstimate
    timed_out: bool = False
    evaluations: int = 0


def bidder_floors(rho, ctx: PlacementContext) -> np.ndarray:
    """Per-bidder floor array from a FloorVector or an explicit per-bidder sequence."""
    if isinstance(rho, FloorVector):
        return np.array([rho.for_type(b.bidder_type) for b in ctx.bidders], dtype=float)
    arr = np.asarray(rho, dtype=float)
    if arr.shape != (len(ctx.bidders),):
        raise ValueError(f"expected {len(ctx.bidders)} per-bidder floors, got shape {arr.shape}")
    if np.any(~np.isfinite(arr) | (arr < 0)):
        raise ValueError("floors must be finite and >= 0")
    return arr


@functools.lru_cache(maxsize=16)
def _legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _params(floors, ctx):
    ps = [link_params(float(r), b.model.link) for r, b in zip(floors, ctx.bidders)]
    shape = np.array([p.shape for p in ps])
    scale = np.array([p.scale for p in ps])
    return ps, shape, scale


def _cdf(b, shape, scale):
    return -np.expm1(-np.power(b / scale, shape))


def _payment_terms(floors, ctx, nodes, tail_mass):
    """Quadrature pieces shared by every participation pattern.

    Returns ``(wpay, comp)`` where ``wpay[i, m]`` folds weight * b * pdf_i(b)
    at node ``m`` of bidder ``i``'s range and ``comp[i, j, m]`` is
    ``F_j(max(b, rho_j))`` at the same node (1 on the diagonal).
    """
    n = len(ctx.bidders)
    ps, shape, scale = _params(floors, ctx)
    x, w = _legendre(nodes)
    upper = np.array([weibull_quantile(1.0 - tail_mass, p) for p in ps])

    wpay = np.zeros((n, n * nodes))
    b_all = np.zeros((n, n * nodes))
    for i in range(n):
        lo, hi = floors[i], upper[i]
        if lo >= hi:
            b_all[i] = lo
            continue
        # split at competitors' floors so the kink in F_j(max(b, rho_j)) sits on a boundary
        cuts = np.unique(np.concatenate(([lo, hi], floors[(floors > lo) & (floors < hi)])))
        for piece, (a, c) in enumerate(zip(cuts[:-1], cuts[1:])):
            sl = slice(piece * nodes, (piece + 1) * nodes)
            half = 0.5 * (c - a)
            b = a + half * (x + 1.0)
            z = b / scale[i]
            dens = (shape[i] / scale[i]) * np.power(z, shape[i] - 1.0) * np.exp(-np.power(z, shape[i]))
            b_all[i, sl] = b
            wpay[i, sl] = half * w * b * dens

    comp = _cdf(np.maximum(b_all[:, None, :], floors[None, :, None]),
                shape[None, :, None], scale[None, :, None])
    idx = np.arange(n)
    comp[idx, idx, :] = 1.0
    return wpay, comp, shape, scale


def _pattern_revenue(masks, floors, ctx, nodes, tail_mass):
    """YahooX and ADX revenue for each participation mask (rows of 0/1)."""
    masks = np.asarray(masks, dtype=float)
    wpay, comp, shape, scale = _payment_terms(floors, ctx, nodes, tail_mass)
    # prod_j comp[i, j, m] ** k_j  for each pattern
    win = np.prod(np.power(comp[None, :, :, :], masks[:, None, :, None]), axis=2)
    per_bidder = np.einsum("im,pim->pi", wpay, win)
    yahoox = np.sum(masks * per_bidder, axis=1)
    below = _cdf(floors, shape, scale)
    adx = ctx.adx_rev * np.prod(np.power(below[None, :], masks), axis=1)
    return yahoox, adx, per_bidder


def _mask_of(participants, ctx) -> np.ndarray:
    ids = [b.bidder_id for b in ctx.bidders]
    mask = np.zeros(len(ids))
    for p in participants:
        if isinstance(p, (int, np.integer)):
            mask[int(p)] = 1.0
        else:
            mask[ids.index(p)] = 1.0
    return mask


def _index_of(i, ctx) -> int:
    if isinstance(i, (int, np.integer)):
        return int(i)
    return [b.bidder_id for b in ctx.bidders].index(i)


def expected_bidder_revenue(i, rho, participants, ctx: PlacementContext,
                            nodes: int = DEFAULT_NODES,
                            tail_mass: float = DEFAULT_TAIL_MASS) -> float:
    """Expected first-price payment from bidder ``i`` given who participates.

    ``i`` and ``participants`` take bidder indices or ids. Integration runs
    over ``[rho_i, B_max]`` with ``B_max`` the ``1 - tail_mass`` quantile.
    """
    idx = _index_of(i, ctx)
    mask = _mask_of(participants, ctx)
    if mask[idx] != 1.0:
        raise ValueError(f"bidder {i!r} is not among the participants")
    floors = bidder_floors(rho, ctx)
    _, _, per_bidder = _pattern_revenue(mask[None, :], floors, ctx, nodes, tail_mass)
    return float(per_bidder[0, idx])


def prob_all_below(rho, participants, ctx: PlacementContext) -> float:
    """Probability that every participant's latent bid sits below its floor."""
    mask = _mask_of(participants, ctx)
    if not mask.any():
        return 1.0
    floors = bidder_floors(rho, ctx)
    _, shape, scale = _params(floors, ctx)
    return float(np.prod(np.power(_cdf(floors, shape, scale), mask)))


@functools.lru_cache(maxsize=256)
def _participation_patterns(rates: tuple[float, ...], mc: int, seed: int):
    rng = np.random.default_rng(seed)
    draws = rng.random((mc, len(rates))) < np.asarray(rates)
    patterns, counts = np.unique(draws, axis=0, return_counts=True)
    return patterns.astype(float), counts.astype(float)


def expected_revenue(rho, ctx: PlacementContext, mc: int = DEFAULT_MC_DRAWS, seed: int = 0,
                     nodes: int = DEFAULT_NODES,
                     tail_mass: float = DEFAULT_TAIL_MASS) -> RevenueEstimate:
    """Monte Carlo over participation, quadrature over bids.

    The participation draws depend only on ``(rates, mc, seed)``, so
    evaluations at different floors share them (common random numbers).
    """
    if int(mc) < 1:
        raise ValueError("mc must be >= 1")
    floors = bidder_floors(rho, ctx)
    rates = tuple(float(b.model.participation.rate) for b in ctx.bidders)
    patterns, counts = _participation_patterns(rates, int(mc), int(seed))
    yahoox, adx, _ = _pattern_revenue(patterns, floors, ctx, nodes, tail_mass)
    total = yahoox + adx
    y_mean = float(np.dot(counts, yahoox) / mc)
    a_mean = float(np.dot(counts, adx) / mc)
    if mc > 1:
        mean = np.dot(counts, total) / mc
        var = np.dot(counts, (total - mean) ** 2) / (mc - 1)
        se = float(math.sqrt(max(var, 0.0) / mc))
    else:
        se = 0.0
    return RevenueEstimate(y_mean + a_mean, y_mean, a_mean, se)


class _Timeout(Exception):
    pass


def optimize_floors(ctx: PlacementContext, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizationResult:
    """Maximise expected revenue over (regular, rebroadcaster) floors in [0, cap]^2.

    Coarse grid scan, then bounded Nelder-Mead from the best cell. A floor
    for a bidder type with no bidders in the context is pinned at 0. When
    ``cfg.deadline`` passes, the best point seen so far is returned with
    ``timed_out`` set.
    """
    cap = ctx.floor_cap
    present = ctx.types_present()
    free = [t for t in (BidderType.REGULAR, BidderType.REBROADCASTER) if t in present]
    best = {"x": None, "value": -math.inf, "est": None}
    calls = [0]

    def to_vector(x) -> FloorVector:
        vals = {BidderType.REGULAR: 0.0, BidderType.REBROADCASTER: 0.0}
        for t, v in zip(free, x):
            vals[t] = float(min(max(v, 0.0), cap))
        return FloorVector(vals[BidderType.REGULAR], vals[BidderType.REBROADCASTER])

    def evaluate(x) -> float:
        if cfg.deadline is not None and time.monotonic() > cfg.deadline:
            raise _Timeout
        fv = to_vector(x)
        est = expected_revenue(fv, ctx, cfg.mc_draws, cfg.seed, cfg.nodes, cfg.tail_mass)
        calls[0] += 1
        if est.value > best["value"]:
            best.update(x=fv, value=est.value, est=est)
        return est.value

    timed_out = False
    try:
        axis = np.linspace(0.0, cap, cfg.grid_size)
        mesh = np.meshgrid(*([axis] * len(free)), indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        values = np.array([evaluate(p) for p in points])
        start = points[int(np.argmax(values))]
        if free:
            step = cap / max(cfg.grid_size - 1, 1)
            simplex = [start] + [np.clip(start + step * e, 0.0, cap) if start[d] + step <= cap
                                 else np.clip(start - step * e, 0.0, cap)
                                 for d, e in enumerate(np.eye(len(free)))]
            optimize.minimize(
                lambda x: -evaluate(x), start, method="Nelder-Mead",
                bounds=[(0.0, cap)] * len(free),
                options=dict(initial_simplex=np.array(simplex), xatol=1e-4 * cap,
                             fatol=1e-10, maxiter=cfg.nm_maxiter),
            )
    except _Timeout:
        timed_out = True
        logger.warning("floor optimisation for %s hit its deadline after %d evaluations",
                       "/".join(ctx.key), calls[0])

    if best["x"] is None:
        fv = FloorVector()
        return OptimizationResult(fv, RevenueEstimate(math.nan, math.nan, math.nan, math.nan),
                                  True, calls[0])
    return OptimizationResult(best["x"], best["est"], timed_out, calls[0])
