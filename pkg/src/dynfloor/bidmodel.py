"""Floor-dependent Weibull bid distributions and their truncated MLE.

Each bidder's latent bid distribution is Weibull with

    shape(floor) = exp(a0 + a1 * floor)
    scale(floor) = exp(b0 + b1 * floor)

Observed bids are left-truncated at the floor sent with the request, so
the likelihood of a bid ``b`` at floor ``r`` is ``pdf(b) / (1 - cdf(r))``
with both evaluated under the parameters linked to ``r``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, special

logger = logging.getLogger(__name__)

DEFAULT_MIN_OBSERVATIONS = 200


class ParameterError(ValueError):
    """Weibull parameters are not strictly positive and finite."""


class InsufficientDataError(ValueError):
    """Too few observations to estimate a model."""


@dataclass(frozen=True)
class WeibullParams:
    shape: float
    scale: float

    def __post_init__(self):
        for name in ("shape", "scale"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
                raise ParameterError(f"Weibull {name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class BidObservation:
    """A bid request sent at ``floor_sent`` and the response (``None`` = no bid)."""

    floor_sent: float
    bid: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.floor_sent) and self.floor_sent >= 0):
            raise ValueError(f"floor_sent must be finite and >= 0, got {self.floor_sent!r}")
        if self.bid is not None and not (math.isfinite(self.bid) and self.bid >= self.floor_sent):
            raise ValueError(f"observed bid {self.bid!r} is below its floor {self.floor_sent!r}")


@dataclass(frozen=True)
class FitDiagnostics:
    n_samples: int
    converged: bool
    neg_log_likelihood: float
    floor_dependent: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class FloorLinkModel:
    shape_coeffs: tuple[float, float] = (0.0, 0.0)
    scale_coeffs: tuple[float, float] = (0.0, 0.0)
    diagnostics: Optional[FitDiagnostics] = None

    @property
    def coeffs(self) -> np.ndarray:
        return np.array([*self.shape_coeffs, *self.scale_coeffs], dtype=float)

    @classmethod
    def from_coeffs(cls, coeffs, diagnostics=None) -> "FloorLinkModel":
        a0, a1, b0, b1 = (float(c) for c in coeffs)
        return cls((a0, a1), (b0, b1), diagnostics)

    @classmethod
    def constant(cls, shape: float, scale: float) -> "FloorLinkModel":
        """A link whose parameters do not depend on the floor."""
        p = WeibullParams(shape, scale)
        return cls((math.log(p.shape), 0.0), (math.log(p.scale), 0.0))


@dataclass(frozen=True)
class ParticipationModel:
    rate: float
    support_count: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError(f"participation rate must lie in [0, 1], got {self.rate!r}")


def _unpack(p: WeibullParams):
    if not isinstance(p, WeibullParams):
        raise ParameterError(f"expected WeibullParams, got {type(p).__name__}")
    return p.shape, p.scale


def weibull_cdf(b, p: WeibullParams):
    """``1 - exp(-(b/scale)**shape)``; accepts scalars or arrays."""
    k, lam = _unpack(p)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("bid values must be >= 0")
    out = -np.expm1(-np.power(b / lam, k))
    return out if out.ndim else float(out)


def weibull_pdf(b, p: WeibullParams):
    k, lam = _unpack(p)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("bid values must be >= 0")
    z = b / lam
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (k / lam) * np.power(z, k - 1.0) * np.exp(-np.power(z, k))
    if k == 1.0:
        out = np.where(b == 0, 1.0 / lam, out)
    out = np.nan_to_num(out, nan=0.0, posinf=np.inf)
    return out if out.ndim else float(out)


def weibull_quantile(q, p: WeibullParams):
    k, lam = _unpack(p)
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantile level must lie in [0, 1)")
    if np.any(q == 1):
        raise ValueError("quantile at level 1 is unbounded")
    out = lam * np.power(-np.log1p(-q), 1.0 / k)
    return out if out.ndim else float(out)


def link_params(floor: float, m: FloorLinkModel) -> WeibullParams:
    (a0, a1), (b0, b1) = m.shape_coeffs, m.scale_coeffs
    return WeibullParams(math.exp(a0 + a1 * floor), math.exp(b0 + b1 * floor))


def _link_arrays(coeffs, floors):
    a0, a1, b0, b1 = coeffs
    return np.exp(a0 + a1 * floors), np.exp(b0 + b1 * floors)


def observation_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    """Split observations into ``(floors, bids)`` arrays, bids NaN for no-bid.

    ``data`` may be a sequence of :class:`BidObservation` or a ``(floors, bids)``
    pair of arrays.
    """
    if isinstance(data, tuple) and len(data) == 2 and not isinstance(data[0], BidObservation):
        floors = np.asarray(data[0], dtype=float)
        bids = np.asarray(data[1], dtype=float)
        return floors, bids
    floors = np.fromiter((o.floor_sent for o in data), dtype=float)
    bids = np.fromiter((np.nan if o.bid is None else o.bid for o in data), dtype=float)
    return floors, bids


def _bid_only(data):
    floors, bids = observation_arrays(data)
    keep = ~np.isnan(bids)
    floors, bids = floors[keep], bids[keep]
    if np.any(bids < floors):
        raise ValueError("observed bids must be >= their floor")
    return floors, bids


def _nll(coeffs, floors, bids):
    shape, scale = _link_arrays(coeffs, floors)
    z = bids / scale
    zr = floors / scale
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # -log pdf(b) + log S(r), where log S(r) = -(r/scale)**shape
        terms = (-np.log(shape) + np.log(scale) - (shape - 1.0) * np.log(z)
                 + np.power(z, shape) - np.power(zr, shape))
    total = float(np.sum(terms))
    return total if math.isfinite(total) else math.inf


def truncated_neg_log_likelihood(coeffs, data) -> float:
    """Negative log-likelihood of floor-truncated bids under the link model.

    ``coeffs`` is ``(a0, a1, b0, b1)`` or a :class:`FloorLinkModel`. No-bid
    observations are ignored here; they belong to the participation model.
    """
    if isinstance(coeffs, FloorLinkModel):
        coeffs = coeffs.coeffs
    floors, bids = _bid_only(data)
    if bids.size == 0:
        raise InsufficientDataError("no bids to evaluate the likelihood on")
    return _nll(np.asarray(coeffs, dtype=float), floors, bids)


def moment_start(floors: np.ndarray, bids: np.ndarray) -> tuple[float, float]:
    """Method-of-moments (shape, scale) from the decile of lowest floors.

    Uses the Justus approximation ``shape ~ cv**-1.086``.
    """
    cut = np.quantile(floors, 0.1)
    sub = bids[floors <= cut]
    if sub.size < 2:
        sub = bids
    mean = float(np.mean(sub))
    sd = float(np.std(sub))
    cv = sd / mean if mean > 0 else 1.0
    shape = float(np.clip(cv ** -1.086, 0.2, 20.0)) if cv > 0 else 5.0
    scale = mean / special.gamma(1.0 + 1.0 / shape)
    return shape, max(scale, 1e-6)


def fit_bid_model(
    data,
    min_observations: int = DEFAULT_MIN_OBSERVATIONS,
    min_distinct_floors: int = 2,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> FloorLinkModel:
    """Maximum-likelihood fit of the floor-linked Weibull to truncated bids.

    Nelder-Mead from a moment-matched start. The floor slope terms are
    dropped (a1 = b1 = 0) when the data carry fewer than
    ``min_distinct_floors`` distinct floors. Non-convergence is reported in
    the diagnostics rather than raised.
    """
    floors, bids = _bid_only(data)
    n = int(bids.size)
    if n < max(min_observations, 1):
        raise InsufficientDataError(f"{n} bids observed, need at least {min_observations}")

    shape0, scale0 = moment_start(floors, bids)
    floor_dependent = np.unique(floors).size >= min_distinct_floors and np.ptp(floors) > 0

    if floor_dependent:
        # optimise in floor-centred coordinates so intercept and slope decouple
        centre = float(np.mean(floors))

        def objective(theta):
            a0c, a1, b0c, b1 = theta
            return _nll((a0c - a1 * centre, a1, b0c - b1 * centre, b1), floors, bids)

        x0 = np.array([math.log(shape0), 0.0, math.log(scale0), 0.0])
    else:
        centre = 0.0

        def objective(theta):
            return _nll((theta[0], 0.0, theta[1], 0.0), floors, bids)

        x0 = np.array([math.log(shape0), math.log(scale0)])

    # tolerance is relative to the NLL's magnitude, which grows with n
    opts = dict(xatol=1e-6, fatol=tol * max(1.0, abs(objective(x0))), maxiter=max_iter,
                adaptive=False)
    res = optimize.minimize(objective, x0, method="Nelder-Mead", options=opts)
    iterations = int(res.nit)
    # one restart from the incumbent shakes out premature simplex collapse
    if iterations < max_iter:
        res2 = optimize.minimize(objective, res.x, method="Nelder-Mead",
                                 options={**opts, "maxiter": max_iter - iterations})
        iterations += int(res2.nit)
        if res2.fun <= res.fun:
            res = res2

    if floor_dependent:
        a0c, a1, b0c, b1 = res.x
        coeffs = (a0c - a1 * centre, a1, b0c - b1 * centre, b1)
    else:
        coeffs = (res.x[0], 0.0, res.x[1], 0.0)
    converged = bool(res.success) and math.isfinite(res.fun)
    if not converged:
        logger.warning("bid model fit did not converge after %d iterations", iterations)
    diag = FitDiagnostics(n, converged, float(res.fun), bool(floor_dependent), iterations)
    return FloorLinkModel.from_coeffs(coeffs, diag)


def _censored_nll(theta, floors, bids, has_bid):
    a0, a1, b0, b1, logit = theta
    p = special.expit(logit)
    shape, scale = _link_arrays((a0, a1, b0, b1), floors)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        k, lam = shape[has_bid], scale[has_bid]
        z = bids[has_bid] / lam
        ll_bid = np.log(p) + np.log(k) - np.log(lam) + (k - 1.0) * np.log(z) - np.power(z, k)
        below = -np.expm1(-np.power(floors[~has_bid] / scale[~has_bid], shape[~has_bid]))
        ll_none = np.log((1.0 - p) + p * below)
    total = -(float(np.sum(ll_bid)) + float(np.sum(ll_none)))
    return total if math.isfinite(total) else math.inf


def censored_neg_log_likelihood(coeffs, rate: float, data) -> float:
    """NLL when no-bids are kept: each is non-participation or a bid below the floor.

    A bid ``b`` at floor ``r`` contributes ``rate * pdf(b | r)``; a no-bid
    contributes ``(1 - rate) + rate * cdf(r | r)``.
    """
    if isinstance(coeffs, FloorLinkModel):
        coeffs = coeffs.coeffs
    floors, bids = observation_arrays(data)
    if floors.size == 0:
        raise InsufficientDataError("no observations to evaluate the likelihood on")
    if not (0.0 < rate <= 1.0):
        raise ValueError("rate must lie in (0, 1]")
    logit = math.inf if rate == 1.0 else special.logit(rate)
    return _censored_nll((*coeffs, logit), floors, np.where(np.isnan(bids), 1.0, bids), ~np.isnan(bids))


def fit_censored_bid_model(
    data,
    min_observations: int = DEFAULT_MIN_OBSERVATIONS,
    tol: float = 1e-8,
    max_iter: int = 1500,  # five parameters need a longer simplex run
) -> tuple[FloorLinkModel, ParticipationModel]:
    """Joint MLE of the floor link and the participation rate from all requests.

    Unlike :func:`fit_bid_model`, no-bid requests enter the likelihood as
    left-censored at the floor (or as non-participation), so the fitted
    ``cdf(r | r)`` tracks the observed response rate across floors.
    """
    floors, bids = observation_arrays(data)
    has_bid = ~np.isnan(bids)
    n = int(has_bid.sum())
    if n < max(min_observations, 1):
        raise InsufficientDataError(f"{n} bids observed, need at least {min_observations}")
    if np.any(bids[has_bid] < floors[has_bid]):
        raise ValueError("observed bids must be >= their floor")
    filled = np.where(has_bid, bids, 1.0)

    shape0, scale0 = moment_start(floors[has_bid], bids[has_bid])
    low = floors <= np.quantile(floors, 0.1)
    rate0 = float(np.clip(np.mean(has_bid[low]) if low.any() else np.mean(has_bid), 0.05, 0.95))
    floor_dependent = np.unique(floors).size >= 2 and np.ptp(floors) > 0
    centre = float(np.mean(floors)) if floor_dependent else 0.0

    def unpack(theta):
        if floor_dependent:
            a0c, a1, b0c, b1, logit = theta
            return (a0c - a1 * centre, a1, b0c - b1 * centre, b1, logit)
        return (theta[0], 0.0, theta[1], 0.0, theta[2])

    def objective(theta):
        return _censored_nll(unpack(theta), floors, filled, has_bid)

    if floor_dependent:
        x0 = np.array([math.log(shape0), 0.0, math.log(scale0), 0.0, special.logit(rate0)])
    else:
        x0 = np.array([math.log(shape0), math.log(scale0), special.logit(rate0)])
    opts = dict(xatol=1e-6, fatol=tol * max(1.0, abs(objective(x0))), maxiter=max_iter)
    res = optimize.minimize(objective, x0, method="Nelder-Mead", options=opts)
    iterations = int(res.nit)
    if iterations < max_iter:
        res2 = optimize.minimize(objective, res.x, method="Nelder-Mead",
                                 options={**opts, "maxiter": max_iter - iterations})
        iterations += int(res2.nit)
        if res2.fun <= res.fun:
            res = res2
    a0, a1, b0, b1, logit = unpack(res.x)
    converged = bool(res.success) and math.isfinite(res.fun)
    if not converged:
        logger.warning("censored bid model fit did not converge after %d iterations", iterations)
    diag = FitDiagnostics(n, converged, float(res.fun), bool(floor_dependent), iterations)
    return (FloorLinkModel.from_coeffs((a0, a1, b0, b1), diag),
            ParticipationModel(float(special.expit(logit)), int(floors.size)))


def estimate_participation(records: Iterable, bidder_id: Optional[str] = None) -> ParticipationModel:
    """Share of bid requests the bidder answered with any bid.

    ``records`` holds objects with ``bidder_id`` and ``bid`` attributes (log
    records) or :class:`BidObservation` instances (already one bidder).
    """
    sent = responded = 0
    for r in records:
        if bidder_id is not None and getattr(r, "bidder_id", bidder_id) != bidder_id:
            continue
        sent += 1
        if r.bid is not None and not (isinstance(r.bid, float) and math.isnan(r.bid)):
            responded += 1
    if sent == 0:
        raise InsufficientDataError(f"no bid requests recorded for bidder {bidder_id!r}")
    return ParticipationModel(responded / sent, sent)


def sample_truncated(rng: np.random.Generator, m: FloorLinkModel, floors: np.ndarray) -> np.ndarray:
    """Draw one latent bid per floor, conditioned on being at or above it.

    Inverse-CDF on the truncated tail: ``b = scale * ((r/scale)**k - log U)**(1/k)``.
    """
    floors = np.asarray(floors, dtype=float)
    shape, scale = _link_arrays(m.coeffs, floors)
    u = 1.0 - rng.random(floors.shape)  # (0, 1]
    return scale * np.power(np.power(floors / scale, shape) - np.log(u), 1.0 / shape)
