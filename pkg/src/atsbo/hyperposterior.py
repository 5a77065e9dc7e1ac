"""Hyper-parameter data posterior.

Priors over GP hyper-parameters, the log posterior combining them with
the marginal likelihood, an affine-invariant ensemble (stretch-move)
MCMC sampler, and the independent jitter draw used by the jittered batch
strategy.

Positive hyper-parameters are sampled in log space with the Jacobian
folded into the target density, so walkers never hit the positivity
boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError, InitializationError
from .gp import DEFAULT_NUGGET, SQRT5, Dataset, HyperParams, log_marginal_likelihood

EI = "EI"
LCB = "LCB"


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors: Gamma(shape, rate) on lengthscales and signal
    variance, uniform on the constant mean (normalized-output units)."""

    lengthscale_shape: float = 1.0
    lengthscale_rate: float = 6.0
    signal_variance_shape: float = 1.0
    signal_variance_rate: float = 6.0
    mean_lo: float = -3.0
    mean_hi: float = 3.0


def _gamma_logpdf(x, shape: float, rate: float):
    """log Gamma(shape, rate) density; -inf outside (0, inf)."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    ok = x > 0
    out[ok] = (
        shape * math.log(rate)
        - math.lgamma(shape)
        + (shape - 1.0) * np.log(x[ok])
        - rate * x[ok]
    )
    return out


def log_prior(hp: HyperParams, spec: PriorSpec) -> float:
    """Sum of independent component log-densities; -inf outside support."""
    total = _gamma_logpdf(hp.lengthscales, spec.lengthscale_shape, spec.lengthscale_rate).sum()
    total += _gamma_logpdf(
        np.array([hp.signal_variance]), spec.signal_variance_shape, spec.signal_variance_rate
    )[0]
    if spec.mean_lo <= hp.mean_const <= spec.mean_hi:
        total += -math.log(spec.mean_hi - spec.mean_lo)
    else:
        return -np.inf
    return float(total)


def log_posterior(hp: HyperParams, dataset: Dataset, spec: PriorSpec) -> float:
    """log prior + log marginal likelihood; short-circuits on -inf prior.

    An empty dataset contributes zero likelihood, so the result is the
    prior alone.
    """
    lp = log_prior(hp, spec)
    if not np.isfinite(lp):
        return -np.inf
    if dataset.t == 0:
        return lp
    return lp + log_marginal_likelihood(dataset, hp)


@dataclass(frozen=True)
class McmcConfig:
    """Stretch-move ensemble settings. n_steps counts total steps
    (burn-in included); sample_hyperparams fills it in when None."""

    n_walkers: int = 32
    burn_in: int = 300
    thin: int = 1
    stretch_a: float = 2.0
    seed: int = 0
    n_steps: int | None = None

    def __post_init__(self):
        if self.n_walkers < 2 or self.n_walkers % 2 != 0:
            raise ConfigError("n_walkers must be even and >= 2")
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not self.stretch_a > 1.0:
            raise ConfigError("stretch_a must be > 1")
        if self.n_steps is not None and self.n_steps <= self.burn_in:
            raise ConfigError("n_steps must exceed burn_in")


@dataclass(frozen=True)
class EnsembleResult:
    draws: np.ndarray  # (n_draws, dim), step-major, walkers within a step
    acceptance_rate: float
    final_walkers: np.ndarray


def _lockstep_init(rngs, init, n_walkers: int, dim: int, logpdf_vec):
    """Initial walkers for several synchronized chains.

    `init` may be None (standard normal), an (n_walkers, dim) array
    applied to every chain, or a callable rng -> (dim,) draw. Callable
    initializers re-draw any walker landing at -inf density, up to 100
    attempts, consuming only the owning chain's rng.
    """
    c = len(rngs)
    walkers = np.empty((c, n_walkers, dim))
    logp = np.empty((c, n_walkers))
    if callable(init):
        for k in range(n_walkers):
            xs = np.stack(
                [np.asarray(init(rng), dtype=float).ravel() for rng in rngs]
            )
            lps = logpdf_vec(xs)
            for i, rng in enumerate(rngs):
                x, lp = xs[i], float(lps[i])
                attempts = 1
                while not np.isfinite(lp):
                    if attempts >= 100:
                        raise InitializationError(
                            f"walker {k}: no finite-density start after 100 attempts"
                        )
                    x = np.asarray(init(rng), dtype=float).ravel()
                    lp = float(logpdf_vec(x[None, :])[0])
                    attempts += 1
                walkers[i, k] = x
                logp[i, k] = lp
    else:
        if init is None:
            for i, rng in enumerate(rngs):
                walkers[i] = rng.standard_normal((n_walkers, dim))
        else:
            arr = np.array(init, dtype=float)
            if arr.shape != (n_walkers, dim):
                raise ConfigError(
                    f"init array must have shape ({n_walkers}, {dim}), got {arr.shape}"
                )
            walkers[:] = arr
        logp = logpdf_vec(walkers.reshape(-1, dim)).reshape(c, n_walkers)
    for i in range(c):
        if not np.any(np.isfinite(logp[i])):
            raise InitializationError("all walkers initialized at -inf density")
    return walkers, logp


def _lockstep_ensembles(
    logpdf_vec, dim: int, cfg: McmcConfig, seeds, init=None
) -> list[EnsembleResult]:
    """Run one stretch-move ensemble per seed, in lockstep.

    The chains are mutually independent (each consumes only its own rng,
    in the same order as a solo run would), but their density
    evaluations are stacked into single vectorized calls. Results are
    therefore identical to running the chains one at a time.
    """
    if cfg.n_steps is None:
        raise ConfigError("cfg.n_steps must be set")
    if cfg.n_walkers < 2 * dim:
        raise ConfigError(
            f"n_walkers={cfg.n_walkers} must be at least twice the dimension ({dim})"
        )
    c = len(seeds)
    rngs = [np.random.default_rng(seed) for seed in seeds]
    walkers, logp = _lockstep_init(rngs, init, cfg.n_walkers, dim, logpdf_vec)
    logp = np.where(np.isnan(logp), -np.inf, logp)

    half = cfg.n_walkers // 2
    halves = (np.arange(half), np.arange(half, cfg.n_walkers))
    a = cfg.stretch_a
    n_accept = np.zeros(c, dtype=int)
    kept: list[list[np.ndarray]] = [[] for _ in range(c)]
    z = np.empty((c, half))
    pidx = np.empty((c, half), dtype=np.int64)
    u = np.empty((c, half))
    for step in range(cfg.n_steps):
        for sel, other in ((halves[0], halves[1]), (halves[1], halves[0])):
            for i, rng in enumerate(rngs):
                z[i] = (rng.random(half) * (a - 1.0) + 1.0) ** 2 / a
                pidx[i] = rng.integers(0, half, half)
            partners = walkers[:, other, :][np.arange(c)[:, None], pidx]
            proposals = partners + z[:, :, None] * (walkers[:, sel, :] - partners)
            lp_new = logpdf_vec(proposals.reshape(-1, dim)).reshape(c, half)
            lp_new = np.where(np.isnan(lp_new), -np.inf, lp_new)
            cur = logp[:, sel]
            with np.errstate(invalid="ignore"):
                log_ratio = (dim - 1) * np.log(z) + lp_new - cur
            # -inf current density: accept any finite proposal
            log_ratio = np.where(np.isneginf(cur) & np.isfinite(lp_new), np.inf, log_ratio)
            for i, rng in enumerate(rngs):
                u[i] = rng.random(half)
            accept = np.log(u) < log_ratio
            for i in range(c):
                moved = sel[accept[i]]
                walkers[i, moved] = proposals[i, accept[i]]
                logp[i, moved] = lp_new[i, accept[i]]
            n_accept += accept.sum(axis=1)
        if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thin == cfg.thin - 1:
            for i in range(c):
                kept[i].append(walkers[i].copy())

    results = []
    for i in range(c):
        draws = np.concatenate(kept[i], axis=0) if kept[i] else np.empty((0, dim))
        results.append(
            EnsembleResult(
                draws=draws,
                acceptance_rate=float(n_accept[i]) / (cfg.n_steps * cfg.n_walkers),
                final_walkers=walkers[i],
            )
        )
    return results


def ensemble_sample(
    logpdf,
    dim: int,
    cfg: McmcConfig,
    init=None,
    vectorized: bool = False,
) -> EnsembleResult:
    """Affine-invariant ensemble sampling with the stretch move.

    Each step updates the two walker halves in turn: walker k picks a
    partner j from the complementary half, draws z with density
    proportional to 1/sqrt(z) on [1/a, a], proposes
    y = x_j + z (x_k - x_j), and accepts with probability
    min(1, z^(dim-1) exp(logpdf(y) - logpdf(x_k))).

    Returns post-burn-in draws thinned by cfg.thin, flattened step-major,
    so the final entries are the last step's walkers. Deterministic in
    cfg.seed.
    """
    if vectorized:
        logpdf_vec = logpdf
    else:
        def logpdf_vec(xs):
            return np.array([logpdf(x) for x in xs], dtype=float)

    return _lockstep_ensembles(logpdf_vec, dim, cfg, [cfg.seed], init=init)[0]


class _BatchedLogPosterior:
    """Vectorized log posterior over transformed hyper-parameter vectors.

    Parameter layout: [log lengthscales (d), log signal variance, mean].
    Pairwise squared distances per dimension are precomputed once; each
    call builds the kernel matrices for a whole walker half and runs a
    batched Cholesky. Numerically failed proposals get -inf density.
    """

    def __init__(self, dataset: Dataset, spec: PriorSpec, nugget: float):
        self.spec = spec
        self.d = dataset.dim
        self.t = dataset.t
        self.nugget = nugget
        if self.t > 0:
            x = dataset.inputs
            diff = x[:, None, :] - x[None, :, :]
            # kernel matrices are symmetric: store squared differences for
            # the strict lower triangle only and scatter after the
            # transcendental math
            il, jl = np.tril_indices(self.t, k=-1)
            self._il, self._jl = il, jl
            self._sqdiff_tri = np.ascontiguousarray(
                ((diff * diff)[il, jl, :]).T  # (d, ntri)
            )
            self._y = np.ascontiguousarray(dataset.outputs)
            self._diag = np.arange(self.t)
            self._buffers: dict[int, tuple] = {}

    def _get_buffers(self, b: int):
        # reuse work arrays across calls; allocation dominates otherwise
        if b not in self._buffers:
            ntri = self._sqdiff_tri.shape[1]
            self._buffers[b] = (
                np.empty((b, ntri)),  # r2
                np.empty((b, ntri)),  # r
                np.empty((b, ntri)),  # exp term
                np.empty((b, ntri)),  # kernel values
                np.empty((b, ntri)),  # scratch
                np.empty((b, self.t, self.t)),  # full matrices
            )
        return self._buffers[b]

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        phi = np.atleast_2d(phi)
        d = self.d
        log_ls = phi[:, :d]
        log_sv = phi[:, d]
        mean = phi[:, d + 1]
        spec = self.spec

        out = np.full(phi.shape[0], -np.inf)
        in_mean = (mean >= spec.mean_lo) & (mean <= spec.mean_hi)
        finite = np.all(np.isfinite(phi), axis=1) & in_mean
        if not np.any(finite):
            return out

        # Gamma(shape, rate) prior on exp(phi) plus the log-space Jacobian.
        # For each positive component: shape*log(rate) - lgamma(shape)
        #   + shape*phi - rate*exp(phi)
        ls = np.exp(log_ls[finite])
        sv = np.exp(log_sv[finite])
        lp = (
            d * (spec.lengthscale_shape * math.log(spec.lengthscale_rate)
                 - math.lgamma(spec.lengthscale_shape))
            + spec.lengthscale_shape * log_ls[finite].sum(axis=1)
            - spec.lengthscale_rate * ls.sum(axis=1)
        )
        lp += (
            spec.signal_variance_shape * math.log(spec.signal_variance_rate)
            - math.lgamma(spec.signal_variance_shape)
            + spec.signal_variance_shape * log_sv[finite]
            - spec.signal_variance_rate * sv
        )
        lp += -math.log(spec.mean_hi - spec.mean_lo)

        if self.t > 0:
            lml = self._lml_batch(ls, sv, mean[finite])
            lp = lp + lml
        out[finite] = np.where(np.isnan(lp), -np.inf, lp)
        return out

    def _lml_batch(self, ls, sv, mean):
        t = self.t
        b = ls.shape[0]
        r2, r, e, kt, scratch, k = self._get_buffers(b)
        with np.errstate(over="ignore", invalid="ignore"):
            # accumulate per dimension: elementwise (not BLAS) so each row's
            # result is independent of how many rows share the batch
            inv_ls2 = 1.0 / (ls * ls)
            np.multiply(inv_ls2[:, 0, None], self._sqdiff_tri[0], out=r2)
            for j in range(1, self.d):
                np.multiply(inv_ls2[:, j, None], self._sqdiff_tri[j], out=scratch)
                r2 += scratch
            np.sqrt(r2, out=r)
            np.multiply(r, -SQRT5, out=e)
            np.exp(e, out=e)
            np.multiply(r2, 5.0 / 3.0, out=kt)
            r *= SQRT5
            kt += r
            kt += 1.0
            kt *= e
            kt *= sv[:, None]
        k[:, self._il, self._jl] = kt
        k[:, self._jl, self._il] = kt
        k[:, self._diag, self._diag] = (sv + self.nugget)[:, None]
        ok = np.all(np.isfinite(kt), axis=1) & np.isfinite(sv)
        result = np.full(b, -np.inf)
        if not np.any(ok):
            return result
        chols = np.empty_like(k[ok])
        usable = np.ones(int(ok.sum()), dtype=bool)
        try:
            chols = np.linalg.cholesky(k[ok])
        except np.linalg.LinAlgError:
            for i, kk in enumerate(k[ok]):
                try:
                    chols[i] = np.linalg.cholesky(kk)
                except np.linalg.LinAlgError:
                    usable[i] = False
        resid = self._y[None, :] - mean[ok, None]
        quad = np.empty(int(ok.sum()))
        for i in np.flatnonzero(usable):
            z = solve_triangular(chols[i], resid[i], lower=True, check_finite=False)
            quad[i] = z @ z
        lml = (
            -0.5 * quad[usable]
            - np.log(np.diagonal(chols[usable], axis1=1, axis2=2)).sum(axis=1)
            - 0.5 * t * math.log(2.0 * math.pi)
        )
        tmp = np.full(int(ok.sum()), -np.inf)
        tmp[usable] = lml
        result[ok] = tmp
        return result


def sample_hyperparams_many(
    dataset: Dataset, s: int, cfg: McmcConfig, spec: PriorSpec, seeds
) -> list[list[HyperParams]]:
    """Independent posterior theta sets, one per seed, sampled in lockstep.

    Each seed gets its own walker ensemble and rng stream; the chains are
    only batched together for the density evaluations, so the result for
    a given seed equals a solo `sample_hyperparams` run with that seed.
    """
    if s < 1:
        raise ConfigError("s must be >= 1")
    d = dataset.dim
    dim = d + 2
    target = _BatchedLogPosterior(dataset, spec, DEFAULT_NUGGET)

    def init(rng):
        ls = rng.gamma(spec.lengthscale_shape, 1.0 / spec.lengthscale_rate, size=d)
        sv = rng.gamma(spec.signal_variance_shape, 1.0 / spec.signal_variance_rate)
        mean = rng.uniform(spec.mean_lo, spec.mean_hi)
        return np.concatenate([np.log(ls), [math.log(sv), mean]])

    kept_steps = -(-s // cfg.n_walkers)  # ceil
    run_cfg = replace(cfg, n_steps=cfg.burn_in + cfg.thin * kept_steps)
    seeds = list(seeds)
    # keep stacked density evaluations cache-sized (~80 rows per call)
    group = max(1, 160 // cfg.n_walkers)
    results = []
    for start in range(0, len(seeds), group):
        results.extend(
            _lockstep_ensembles(target, dim, run_cfg, seeds[start : start + group], init=init)
        )
    out = []
    for res in results:
        out.append(
            [
                HyperParams(
                    lengthscales=np.exp(row[:d]),
                    signal_variance=float(np.exp(row[d])),
                    mean_const=float(row[d + 1]),
                )
                for row in res.draws[-s:]
            ]
        )
    return out


def sample_hyperparams(
    dataset: Dataset, s: int, cfg: McmcConfig, spec: PriorSpec
) -> list[HyperParams]:
    """Draw s hyper-parameter vectors from their data posterior.

    Runs one stretch-move ensemble (walkers initialized from the prior)
    and returns the last s thinned draws mapped back from log space.
    """
    return sample_hyperparams_many(dataset, s, cfg, spec, [cfg.seed])[0]


@dataclass(frozen=True)
class JitterSpec:
    """Jitter prior for the jittered batch strategy.

    With probability 1 - bernoulli_p the kind-specific default is
    returned (EI: 0, LCB: 1), reverting to the plain strategy; otherwise
    an explorative jitter is drawn from the kind-specific law
    (EI: 10^Uniform(-3, 0), LCB: Beta(1, 12)).
    """

    kind: str
    bernoulli_p: float = 0.5
    ei_log10_lo: float = -3.0
    ei_log10_hi: float = 0.0
    lcb_beta_a: float = 1.0
    lcb_beta_b: float = 12.0
    ei_default: float = 0.0
    lcb_default: float = 1.0

    def __post_init__(self):
        if self.kind not in (EI, LCB):
            raise ConfigError(f"jitter kind must be EI or LCB, got {self.kind!r}")
        if not 0.0 <= self.bernoulli_p <= 1.0:
            raise ConfigError("bernoulli_p must lie in [0, 1]")

    @property
    def default(self) -> float:
        return self.ei_default if self.kind == EI else self.lcb_default


def sample_jitter(spec: JitterSpec, seed: int) -> float:
    """One jitter draw; deterministic in the seed."""
    rng = np.random.default_rng(seed)
    if rng.random() >= spec.bernoulli_p:
        return spec.default
    if spec.kind == EI:
        return float(10.0 ** rng.uniform(spec.ei_log10_lo, spec.ei_log10_hi))
    return float(rng.beta(spec.lcb_beta_a, spec.lcb_beta_b))
