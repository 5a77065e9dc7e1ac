"""Acquisition functions and their maximization.

Closed-form EI and LCB (with jitter), the hyper-parameter-marginalized
acquisition (the empirical mean over a set of posterior draws), and a
derivative-free multi-start maximizer: a seeded random probe sweep
followed by coordinate-wise pattern search on the top candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .gp import Dataset, GpFunctionSample, HyperParams, PosteriorSummary, posterior

EI = "EI"
LCB = "LCB"
TS = "TS"

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

N_REFINE_STARTS = 5
N_REFINE_ITERS = 100
INITIAL_STEP = 0.1
MIN_STEP = 1e-9


def ei_from_moments(mean, std, incumbent: float, jitter: float = 0.0):
    """Expected improvement over (incumbent - jitter) for N(mean, std^2).

    Closed form delta*Phi(delta/std) + std*phi(delta/std); in the
    zero-variance limit it degenerates to max(delta, 0).
    """
    if jitter < 0:
        raise ValueError("jitter must be non-negative for EI")
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    scalar = mean.ndim == 0 and std.ndim == 0
    mean, std = np.atleast_1d(mean), np.atleast_1d(std)
    mean, std = np.broadcast_arrays(mean, std)
    delta = incumbent - jitter - mean
    out = np.maximum(delta, 0.0)
    pos = std > 0
    if np.any(pos):
        z = delta[pos] / std[pos]
        phi = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        out[pos] = delta[pos] * ndtr(z) + std[pos] * phi
    out = np.maximum(out, 0.0)
    return float(out[0]) if scalar else out


def lcb_from_moments(mean, std, jitter: float = 1.0):
    """jitter*std - mean; larger is better when minimizing the objective."""
    if not jitter > 0:
        raise ValueError("jitter must be positive for LCB")
    out = jitter * np.asarray(std, dtype=float) - np.asarray(mean, dtype=float)
    return float(out) if out.ndim == 0 else out


def ei_value(x, post: PosteriorSummary, incumbent: float, jitter: float = 0.0):
    """Jittered expected improvement at x (point or batch)."""
    single = np.asarray(x).ndim == 1
    mean, std = post.mean_and_std(np.atleast_2d(np.asarray(x, dtype=float)))
    val = ei_from_moments(mean, std, incumbent, jitter)
    return float(val[0]) if single else val


def lcb_value(x, post: PosteriorSummary, jitter: float = 1.0):
    """Jittered lower confidence bound at x (point or batch)."""
    single = np.asarray(x).ndim == 1
    mean, std = post.mean_and_std(np.atleast_2d(np.asarray(x, dtype=float)))
    val = lcb_from_moments(mean, std, jitter)
    return float(val[0]) if single else val


@dataclass(frozen=True)
class AcquisitionSample:
    """One draw from the acquisition stochastic process.

    For EI/LCB kinds this is the mean of the acquisition over
    `theta_draws`, each hyper-parameter vector contributing its own
    posterior against `dataset_ref`. For the TS kind it is the negated
    sampled function (so maximizing it minimizes the draw).
    """

    kind: str
    theta_draws: tuple[HyperParams, ...]
    jitter: float
    dataset_ref: Dataset
    incumbent: float
    posteriors: tuple[PosteriorSummary, ...]
    ts_function: GpFunctionSample | None = None

    def __post_init__(self):
        if self.kind in (EI, LCB):
            if not self.theta_draws or self.ts_function is not None:
                raise ValueError(f"{self.kind} samples need theta draws and no TS function")
        elif self.kind == TS:
            if self.theta_draws or self.ts_function is None:
                raise ValueError("TS samples need a sampled function and no theta draws")
        else:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")


def make_acquisition_sample(
    kind: str,
    thetas,
    dataset: Dataset,
    jitter: float | None = None,
) -> AcquisitionSample:
    """Build an EI/LCB sample, fitting one posterior per theta draw."""
    thetas = tuple(thetas)
    if jitter is None:
        jitter = 0.0 if kind == EI else 1.0
    return AcquisitionSample(
        kind=kind,
        theta_draws=thetas,
        jitter=float(jitter),
        dataset_ref=dataset,
        incumbent=dataset.incumbent if dataset.t > 0 else 0.0,
        posteriors=tuple(posterior(dataset, hp) for hp in thetas),
    )


def make_ts_sample(g: GpFunctionSample, dataset: Dataset) -> AcquisitionSample:
    """Wrap one GP function draw as an acquisition sample (argmax = argmin g)."""
    return AcquisitionSample(
        kind=TS,
        theta_draws=(),
        jitter=0.0,
        dataset_ref=dataset,
        incumbent=dataset.incumbent if dataset.t > 0 else 0.0,
        posteriors=(),
        ts_function=g,
    )


def _stacked_moments(pts: np.ndarray, posteriors) -> tuple[np.ndarray, np.ndarray]:
    """Means and stddevs of every posterior at pts; shapes (s, n).

    All posteriors share training inputs, so the per-dimension squared
    differences are computed once and rescaled per theta draw.
    """
    s = len(posteriors)
    n = pts.shape[0]
    first = posteriors[0]
    if first.chol is None:
        means = np.empty((s, n))
        stds = np.empty((s, n))
        for q, p in enumerate(posteriors):
            means[q] = p.hp.mean_const
            stds[q] = np.sqrt(p.hp.signal_variance)
        return means, stds
    train = first.dataset.inputs
    diff = pts[:, None, :] - train[None, :, :]
    sqdiff = diff * diff  # (n, t, d)
    inv_ls2 = np.stack([1.0 / p.hp.lengthscales**2 for p in posteriors])  # (s, d)
    r2 = np.einsum("ntd,sd->snt", sqdiff, inv_ls2)
    r = np.sqrt(r2)
    sv = np.array([p.hp.signal_variance for p in posteriors])
    k = sv[:, None, None] * (1.0 + np.sqrt(5.0) * r + (5.0 / 3.0) * r2) * np.exp(
        -np.sqrt(5.0) * r
    )
    mu = np.array([p.hp.mean_const for p in posteriors])
    alphas = np.stack([p.alpha for p in posteriors])  # (s, t)
    means = mu[:, None] + np.einsum("snt,st->sn", k, alphas)
    var = np.empty((s, n))
    for q, p in enumerate(posteriors):
        v = solve_triangular(p.chol, k[q].T, lower=True, check_finite=False)
        var[q] = np.maximum(sv[q] - np.einsum("tn,tn->n", v, v), 0.0)
    return means, np.sqrt(var)


def marginal_value(x, sample: AcquisitionSample):
    """Evaluate the marginalized acquisition at x (point or batch).

    EI/LCB: arithmetic mean of the per-theta acquisition values.
    TS: the negated function draw.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if sample.kind == TS:
        vals = -sample.ts_function(pts)
    else:
        if len(sample.posteriors) == 1:
            # single draw: use the posterior's own path so the s=1
            # reduction to the plain acquisition is exact
            m, s_ = sample.posteriors[0].mean_and_std(pts)
            means, stds = m[None, :], s_[None, :]
        else:
            means, stds = _stacked_moments(pts, sample.posteriors)
        if sample.kind == EI:
            per_theta = ei_from_moments(means, stds, sample.incumbent, sample.jitter)
        else:
            per_theta = lcb_from_moments(means, stds, sample.jitter)
        vals = per_theta.mean(axis=0)
    return float(vals[0]) if single else vals


def maximize(
    sample: AcquisitionSample,
    domain: np.ndarray,
    budget: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Derivative-free acquisition maximization over a box domain.

    Sweeps `budget` uniform random probes (default 2048 per dimension),
    then refines the top candidates by coordinate-wise pattern search
    with a shrinking step, clipped to the domain. Deterministic in the
    seed; ties in the probe sweep break toward the lowest probe index.
    The returned point's value is never below the best probed value.
    """
    domain = np.asarray(domain, dtype=float).reshape(-1, 2)
    d = domain.shape[0]
    lo, hi = domain[:, 0], domain[:, 1]
    width = hi - lo
    if budget is None:
        budget = 2048 * d
    if budget < 1:
        raise ValueError("budget must be >= 1")

    rng = np.random.default_rng(seed)
    probes = lo + rng.random((budget, d)) * width
    # chunked sweep keeps the (s, n, t) temporaries cache-sized
    values = np.empty(budget)
    chunk = 2048
    for start in range(0, budget, chunk):
        stop = min(start + chunk, budget)
        values[start:stop] = np.atleast_1d(marginal_value(probes[start:stop], sample))

    order = np.argsort(-values, kind="stable")[:N_REFINE_STARTS]
    pts = probes[order].copy()
    best = values[order].copy()
    k = pts.shape[0]
    steps = np.full(k, INITIAL_STEP)

    offsets = np.concatenate([np.eye(d), -np.eye(d)])  # (2d, d)
    for _ in range(N_REFINE_ITERS):
        active = np.flatnonzero(steps >= MIN_STEP)
        if active.size == 0:
            break
        na = active.size
        cand = pts[active, None, :] + steps[active, None, None] * offsets[None, :, :] * width
        np.clip(cand, lo, hi, out=cand)
        cvals = marginal_value(cand.reshape(-1, d), sample).reshape(na, 2 * d)
        best_j = np.argmax(cvals, axis=1)
        best_c = cvals[np.arange(na), best_j]
        improved = best_c > best[active]
        moved = active[improved]
        pts[moved] = cand[np.arange(na), best_j][improved]
        best[moved] = best_c[improved]
        steps[active[~improved]] *= 0.5

    return pts[int(np.argmax(best))].copy()
