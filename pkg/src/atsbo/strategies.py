"""Batch proposal strategies.

Sequential marginalized BO, acquisition Thompson sampling (fresh
hyper-parameter draws per batch point), its jittered and hallucinated
variants, the batch-LCB and parallel-TS baselines, and the coin-flip
wrapper that re-draws the baselines' hyper-parameters per point with
probability p.

Per-point seeds derive from (root_seed, point index, tag), so point
proposals for the independent strategies can run in any order with
identical results, and exact reduction identities hold bitwise:
ATS(M=1) == sequential, hATS(M=1) == ATS(M=1), enhance(p=0) == base,
jATS with all-default coins == ATS.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import (
    EI,
    LCB,
    AcquisitionSample,
    make_acquisition_sample,
    make_ts_sample,
    maximize,
)
from .errors import ConfigError
from .gp import Dataset, HyperParams, sample_gp_function
from .hyperposterior import (
    JitterSpec,
    McmcConfig,
    PriorSpec,
    sample_hyperparams,
    sample_hyperparams_many,
    sample_jitter,
)
from .rng import derive_seed, generator

SEQUENTIAL = "Sequential"
ATS = "ATS"
JATS = "jATS"
HATS = "hATS"
BLCB = "BLCB"
PTS = "PTS"
ATS_ON_BLCB = "ATSonBLCB"
ATS_ON_PTS = "ATSonPTS"
STRATEGIES = (SEQUENTIAL, ATS, JATS, HATS, BLCB, PTS, ATS_ON_BLCB, ATS_ON_PTS)

# seed-path tags
_TAG_THETA = 0
_TAG_OPT = 1
_TAG_JITTER = 2
_TAG_TS = 3
_TAG_COIN = 4


@dataclass(frozen=True)
class BatchConfig:
    """Settings for one batch proposal."""

    batch_size: int
    acquisition_kind: str = EI
    strategy: str = ATS
    s: int = 10
    enhance_p: float = 0.5
    root_seed: int = 0
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    priors: PriorSpec = field(default_factory=PriorSpec)
    jitter_spec: JitterSpec | None = None
    n_probes: int | None = None
    ts_features: int = 1024

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.s < 1:
            raise ConfigError("s must be >= 1")
        if self.acquisition_kind not in (EI, LCB):
            raise ConfigError(f"acquisition_kind must be EI or LCB, got {self.acquisition_kind!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.enhance_p <= 1.0:
            raise ConfigError("enhance_p must lie in [0, 1]")
        if self.root_seed < 0:
            raise ConfigError("root_seed must be non-negative")


@dataclass(frozen=True)
class PointProvenance:
    """How one batch point was produced."""

    index: int
    theta_seed: int
    opt_seed: int
    thetas: tuple[HyperParams, ...]
    jitter: float
    coin: bool | None = None
    hallucination: float | None = None
    ts_seed: int | None = None


@dataclass(frozen=True)
class BatchProposal:
    points: np.ndarray  # (M, d), in the dataset's (normalized) coordinates
    provenance: tuple[PointProvenance, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))


@dataclass(frozen=True)
class HallucinatedDataset:
    """Real data plus the (x', h) pairs fabricated so far within a batch."""

    base: Dataset
    pending: tuple[tuple[np.ndarray, float], ...] = ()

    def extended(self, x: np.ndarray, h: float) -> "HallucinatedDataset":
        return HallucinatedDataset(self.base, self.pending + ((np.asarray(x, dtype=float), float(h)),))

    def combined(self) -> Dataset:
        """The base dataset with hallucinations appended (never persisted)."""
        if not self.pending:
            return Dataset(
                inputs=self.base.inputs,
                outputs=self.base.outputs,
                domain=self.base.domain,
                norm_state=self.base.norm_state,
            )
        xs = np.vstack([p[0] for p in self.pending])
        hs = np.array([p[1] for p in self.pending])
        return self.base.extended(xs, hs)


def _default_jitter(kind: str) -> float:
    return 0.0 if kind == EI else 1.0


def _theta_set(dataset: Dataset, cfg: BatchConfig, seed: int, count: int | None = None):
    draws = sample_hyperparams(
        dataset, count if count is not None else cfg.s, replace(cfg.mcmc, seed=seed), cfg.priors
    )
    return tuple(draws)


def _finish_point(dataset: Dataset, cfg: BatchConfig, index: int, thetas, theta_seed, jittered):
    """Jitter draw (when jittered), acquisition build, and maximization for
    one ATS/j-ATS point with an already-sampled theta set."""
    if jittered:
        spec = cfg.jitter_spec or JitterSpec(kind=cfg.acquisition_kind)
        jitter = sample_jitter(spec, derive_seed(cfg.root_seed, index, _TAG_JITTER))
    else:
        jitter = _default_jitter(cfg.acquisition_kind)
    sample = make_acquisition_sample(cfg.acquisition_kind, thetas, dataset, jitter=jitter)
    opt_seed = derive_seed(cfg.root_seed, index, _TAG_OPT)
    x = maximize(sample, dataset.domain, cfg.n_probes, opt_seed)
    prov = PointProvenance(
        index=index,
        theta_seed=theta_seed,
        opt_seed=opt_seed,
        thetas=thetas,
        jitter=jitter,
        coin=(jitter != spec.default) if jittered else None,
    )
    return x, prov


def _propose_point(dataset: Dataset, cfg: BatchConfig, index: int, jittered: bool):
    """One independent ATS/j-ATS point: fresh theta set, optional jitter,
    maximize. Reference path for the batched implementation below."""
    theta_seed = derive_seed(cfg.root_seed, index, _TAG_THETA)
    thetas = _theta_set(dataset, cfg, theta_seed)
    return _finish_point(dataset, cfg, index, thetas, theta_seed, jittered)


def _ats_like_batch(dataset: Dataset, cfg: BatchConfig, jittered: bool) -> BatchProposal:
    # the per-point chains are independent; sampling them in lockstep only
    # batches the density evaluations, preserving per-point results
    theta_seeds = [derive_seed(cfg.root_seed, i, _TAG_THETA) for i in range(cfg.batch_size)]
    theta_sets = sample_hyperparams_many(dataset, cfg.s, cfg.mcmc, cfg.priors, theta_seeds)
    results = [
        _finish_point(dataset, cfg, i, tuple(theta_sets[i]), theta_seeds[i], jittered)
        for i in range(cfg.batch_size)
    ]
    return BatchProposal(
        points=np.vstack([x for x, _ in results]),
        provenance=tuple(p for _, p in results),
    )


def _require_data(dataset: Dataset):
    if dataset.t < 1:
        raise ValueError("batch proposal requires at least one observation")


def ats_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Algorithm: for each batch point independently, draw s hyper-parameter
    vectors from their data posterior, average the acquisition over them,
    and maximize."""
    _require_data(dataset)
    return _ats_like_batch(dataset, cfg, jittered=False)


def sequential_step(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Marginalized sequential BO step: one theta set, one maximization."""
    return ats_batch(dataset, replace(cfg, batch_size=1))


def jats_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """ATS with an independent jitter draw applied per batch point."""
    _require_data(dataset)
    return _ats_like_batch(dataset, cfg, jittered=True)


def hats_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """ATS with hallucinations fed to the hyper-parameter posterior.

    Sequential inner loop: theta vectors are sampled from the posterior
    conditioned on real data plus hallucinations appended so far, while
    the acquisition itself conditions on the real data only. Each chosen
    point is then hallucinated with the mean of its s posterior means.
    """
    _require_data(dataset)
    tilde = HallucinatedDataset(dataset)
    points = []
    provenance = []
    for i in range(cfg.batch_size):
        theta_seed = derive_seed(cfg.root_seed, i, _TAG_THETA)
        thetas = _theta_set(tilde.combined(), cfg, theta_seed)
        sample = make_acquisition_sample(
            cfg.acquisition_kind, thetas, dataset, jitter=_default_jitter(cfg.acquisition_kind)
        )
        opt_seed = derive_seed(cfg.root_seed, i, _TAG_OPT)
        x = maximize(sample, dataset.domain, cfg.n_probes, opt_seed)
        h = float(np.mean([p.mean(x) for p in sample.posteriors]))
        tilde = tilde.extended(x, h)
        points.append(x)
        provenance.append(
            PointProvenance(
                index=i,
                theta_seed=theta_seed,
                opt_seed=opt_seed,
                thetas=thetas,
                jitter=sample.jitter,
                hallucination=h,
            )
        )
    return BatchProposal(points=np.vstack(points), provenance=tuple(provenance))


def blcb_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Batch LCB baseline with surrogate-level hallucinations.

    One theta set is sampled per batch (marginalization refreshed each
    batch iteration); the inner loop maximizes the marginalized LCB on
    the hallucinated dataset and hallucinates each chosen point with the
    s-averaged posterior mean of the surrogate in use.
    """
    _require_data(dataset)
    if cfg.acquisition_kind != LCB:
        raise ConfigError("blcb_batch requires acquisition_kind == LCB")
    theta_seed = derive_seed(cfg.root_seed, 0, _TAG_THETA)
    thetas = _theta_set(dataset, cfg, theta_seed)
    return _blcb_inner(dataset, cfg, thetas, theta_seed, coins=None)


def _blcb_inner(dataset, cfg, thetas, theta_seed, coins):
    """Shared B-LCB loop; `coins` supplies per-point redraw decisions."""
    tilde = HallucinatedDataset(dataset)
    points = []
    provenance = []
    for i in range(cfg.batch_size):
        coin = None
        if coins is not None:
            coin = coins[i]
            if coin and i > 0:
                theta_seed = derive_seed(cfg.root_seed, i, _TAG_THETA)
                thetas = _theta_set(dataset, cfg, theta_seed)
        sample = make_acquisition_sample(LCB, thetas, tilde.combined(), jitter=1.0)
        opt_seed = derive_seed(cfg.root_seed, i, _TAG_OPT)
        x = maximize(sample, dataset.domain, cfg.n_probes, opt_seed)
        h = float(np.mean([p.mean(x) for p in sample.posteriors]))
        tilde = tilde.extended(x, h)
        points.append(x)
        provenance.append(
            PointProvenance(
                index=i,
                theta_seed=theta_seed,
                opt_seed=opt_seed,
                thetas=thetas,
                jitter=1.0,
                coin=coin,
                hallucination=h,
            )
        )
    return BatchProposal(points=np.vstack(points), provenance=tuple(provenance))


def pts_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Parallel Thompson sampling baseline.

    One hyper-parameter vector is drawn from the data posterior per
    batch iteration; each batch point independently minimizes its own
    GP posterior function draw under that vector.
    """
    _require_data(dataset)
    theta_seed = derive_seed(cfg.root_seed, 0, _TAG_THETA)
    theta = _theta_set(dataset, cfg, theta_seed, count=1)[0]
    coins = [None] * cfg.batch_size
    return _pts_inner(dataset, cfg, theta, theta_seed, coins)


def _pts_inner(dataset, cfg, theta, theta_seed, coins):
    points = []
    provenance = []
    for i in range(cfg.batch_size):
        coin = coins[i]
        if coin and i > 0:
            theta_seed = derive_seed(cfg.root_seed, i, _TAG_THETA)
            theta = _theta_set(dataset, cfg, theta_seed, count=1)[0]
        ts_seed = derive_seed(cfg.root_seed, i, _TAG_TS)
        g = sample_gp_function(dataset, theta, ts_seed, n_features=cfg.ts_features)
        sample = make_ts_sample(g, dataset)
        opt_seed = derive_seed(cfg.root_seed, i, _TAG_OPT)
        x = maximize(sample, dataset.domain, cfg.n_probes, opt_seed)
        points.append(x)
        provenance.append(
            PointProvenance(
                index=i,
                theta_seed=theta_seed,
                opt_seed=opt_seed,
                thetas=(theta,),
                jitter=0.0,
                coin=coin,
                ts_seed=ts_seed,
            )
        )
    return BatchProposal(points=np.vstack(points), provenance=tuple(provenance))


def ats_enhance(base_strategy: str, dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Coin-flip wrapper over a parallel baseline.

    Runs the base strategy's inner loop but flips a Bernoulli(enhance_p)
    coin before each batch point: on heads the hyper-parameter set (B-LCB)
    or the vector underlying the function draw (P-TS) is re-drawn from
    the real-data posterior, on tails the current one is reused.
    Previously appended hallucination values stay fixed either way.
    """
    _require_data(dataset)
    if base_strategy not in (BLCB, PTS):
        raise ConfigError(f"ats_enhance supports BLCB or PTS, got {base_strategy!r}")
    coins = [
        bool(generator(cfg.root_seed, i, _TAG_COIN).random() < cfg.enhance_p)
        for i in range(cfg.batch_size)
    ]
    theta_seed = derive_seed(cfg.root_seed, 0, _TAG_THETA)
    if base_strategy == BLCB:
        if cfg.acquisition_kind != LCB:
            raise ConfigError("ats_enhance on BLCB requires acquisition_kind == LCB")
        thetas = _theta_set(dataset, cfg, theta_seed)
        return _blcb_inner(dataset, cfg, thetas, theta_seed, coins=coins)
    theta = _theta_set(dataset, cfg, theta_seed, count=1)[0]
    return _pts_inner(dataset, cfg, theta, theta_seed, coins)


def propose_batch(dataset: Dataset, cfg: BatchConfig) -> BatchProposal:
    """Dispatch to the configured strategy."""
    if cfg.strategy == SEQUENTIAL:
        return sequential_step(dataset, cfg)
    if cfg.strategy == ATS:
        return ats_batch(dataset, cfg)
    if cfg.strategy == JATS:
        return jats_batch(dataset, cfg)
    if cfg.strategy == HATS:
        return hats_batch(dataset, cfg)
    if cfg.strategy == BLCB:
        return blcb_batch(dataset, cfg)
    if cfg.strategy == PTS:
        return pts_batch(dataset, cfg)
    if cfg.strategy == ATS_ON_BLCB:
        return ats_enhance(BLCB, dataset, cfg)
    if cfg.strategy == ATS_ON_PTS:
        return ats_enhance(PTS, dataset, cfg)
    raise ConfigError(f"unknown strategy {cfg.strategy!r}")
