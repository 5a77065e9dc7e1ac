"""Gaussian-process regression core.

Matern 5/2 kernel with ARD lengthscales, constant prior mean, exact
posterior and marginal likelihood via a cached Cholesky factor, data
normalization (outputs z-scored, inputs mapped to the unit cube), and
approximate posterior function draws through a random-feature expansion.

All values handled here live in normalized units unless stated otherwise;
callers are expected to run `normalize` on raw data before fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError

SQRT5 = np.sqrt(5.0)

DEFAULT_NUGGET = 1e-6
MAX_NUGGET = 1e-2
NUGGET_ESCALATION = 10.0


@dataclass(frozen=True)
class NormState:
    """Affine maps applied by `normalize`: output z-score and input unit-cube map."""

    y_mean: float
    y_std: float
    x_lo: np.ndarray
    x_hi: np.ndarray

    def x_to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.x_lo) / (self.x_hi - self.x_lo)

    def x_to_original(self, x: np.ndarray) -> np.ndarray:
        return self.x_lo + np.asarray(x, dtype=float) * (self.x_hi - self.x_lo)

    def y_to_unit(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def y_to_original(self, y):
        return self.y_mean + np.asarray(y, dtype=float) * self.y_std


@dataclass(frozen=True)
class Dataset:
    """Collected evaluations (x_i, y_i) on a box domain.

    `norm_state` is None for raw data; `normalize` returns a copy whose
    inputs live in [0, 1]^d and whose outputs are z-scored, with the maps
    recorded so the transform can be undone exactly.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    domain: np.ndarray
    norm_state: NormState | None = None

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.asarray(self.outputs, dtype=float).ravel()
        domain = np.asarray(self.domain, dtype=float).reshape(-1, 2)
        if inputs.size == 0:
            inputs = inputs.reshape(0, domain.shape[0])
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "domain", domain)
        if inputs.shape[0] != outputs.shape[0]:
            raise ValueError(
                f"inputs ({inputs.shape[0]}) and outputs ({outputs.shape[0]}) differ in length"
            )
        if inputs.shape[1] != domain.shape[0]:
            raise ValueError(
                f"inputs are {inputs.shape[1]}-dimensional but domain has {domain.shape[0]} bounds"
            )
        if np.any(domain[:, 0] >= domain[:, 1]):
            raise ValueError("domain bounds must satisfy lo < hi in every dimension")
        if inputs.size and (
            np.any(inputs < domain[:, 0]) or np.any(inputs > domain[:, 1])
        ):
            raise ValueError("all inputs must lie inside the domain (inclusive)")
        if not np.all(np.isfinite(outputs)):
            raise ValueError("outputs must be finite")

    @property
    def t(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.domain.shape[0]

    @property
    def incumbent(self) -> float:
        """Best (smallest) observed output."""
        if self.t == 0:
            raise ValueError("incumbent undefined for an empty dataset")
        return float(self.outputs.min())

    def extended(self, new_inputs: np.ndarray, new_outputs) -> "Dataset":
        """A new Dataset with extra evaluations appended (same domain and norm state)."""
        new_inputs = np.atleast_2d(np.asarray(new_inputs, dtype=float))
        new_outputs = np.asarray(new_outputs, dtype=float).ravel()
        return Dataset(
            inputs=np.vstack([self.inputs, new_inputs]),
            outputs=np.concatenate([self.outputs, new_outputs]),
            domain=self.domain,
            norm_state=self.norm_state,
        )


def normalize(dataset: Dataset) -> Dataset:
    """Map inputs to the unit cube and z-score the outputs.

    The output stddev (population) is clamped to 1 when all outputs are
    equal. Raises ValueError on an empty dataset; raises if the dataset is
    already normalized (re-normalizing would stack the transforms).
    """
    if dataset.t == 0:
        raise ValueError("cannot normalize an empty dataset")
    if dataset.norm_state is not None:
        raise ValueError("dataset is already normalized")
    lo, hi = dataset.domain[:, 0], dataset.domain[:, 1]
    y_mean = float(dataset.outputs.mean())
    y_std = float(dataset.outputs.std())
    if y_std <= 0.0:
        y_std = 1.0
    state = NormState(y_mean=y_mean, y_std=y_std, x_lo=lo.copy(), x_hi=hi.copy())
    unit_domain = np.column_stack([np.zeros(dataset.dim), np.ones(dataset.dim)])
    return Dataset(
        inputs=state.x_to_unit(dataset.inputs),
        outputs=state.y_to_unit(dataset.outputs),
        domain=unit_domain,
        norm_state=state,
    )


def denormalize(dataset: Dataset) -> Dataset:
    """Invert `normalize`, recovering original-domain inputs and outputs."""
    state = dataset.norm_state
    if state is None:
        raise ValueError("dataset is not normalized")
    return Dataset(
        inputs=state.x_to_original(dataset.inputs),
        outputs=state.y_to_original(dataset.outputs),
        domain=np.column_stack([state.x_lo, state.x_hi]),
        norm_state=None,
    )


@dataclass(frozen=True)
class HyperParams:
    """One GP hyper-parameter vector: ARD lengthscales, signal variance,
    constant mean, and a fixed nugget (not sampled)."""

    lengthscales: np.ndarray
    signal_variance: float
    mean_const: float
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float).ravel()
        object.__setattr__(self, "lengthscales", ls)
        if ls.size == 0 or np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
            raise ValueError("signal_variance must be positive and finite")
        if not np.isfinite(self.mean_const):
            raise ValueError("mean_const must be finite")
        if not (self.nugget > 0 and np.isfinite(self.nugget)):
            raise ValueError("nugget must be positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def _matern52_from_r(r: np.ndarray, r2: np.ndarray, signal_variance: float) -> np.ndarray:
    # overflow with extreme hyper-parameters is tolerated here; the
    # Cholesky wrapper turns non-finite kernels into NumericalError
    with np.errstate(over="ignore", invalid="ignore"):
        return signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r)


def matern52(a: np.ndarray, b: np.ndarray, hp: HyperParams) -> float:
    """Matern 5/2 covariance between two points under ARD scaling."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape or a.shape[0] != hp.dim:
        raise ValueError(
            f"dimension mismatch: a has {a.shape[0]}, b has {b.shape[0]}, "
            f"hyper-parameters expect {hp.dim}"
        )
    r2 = float(np.sum(((a - b) / hp.lengthscales) ** 2))
    r = np.sqrt(r2)
    return float(_matern52_from_r(r, r2, hp.signal_variance))


def _cross_kernel(x: np.ndarray, train: np.ndarray, hp: HyperParams) -> np.ndarray:
    """k(x_i, train_j) for a batch of query points; shape (n, t)."""
    diff = x[:, None, :] - train[None, :, :]
    with np.errstate(over="ignore", divide="ignore"):
        r2 = np.einsum("ntd,d->nt", diff * diff, 1.0 / hp.lengthscales**2)
    return _matern52_from_r(np.sqrt(r2), r2, hp.signal_variance)


def gram_matrix(x: np.ndarray, hp: HyperParams) -> np.ndarray:
    """Kernel Gram matrix of a point set (nugget not included)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return _cross_kernel(x, x, hp)


def _chol_with_escalation(gram: np.ndarray, nugget: float):
    """Cholesky of gram + nugget*I, escalating the nugget x10 up to MAX_NUGGET.

    Returns (L, nugget_used). Raises NumericalError carrying the final
    nugget tried if the whole schedule fails.
    """
    if not np.all(np.isfinite(gram)):
        raise NumericalError("kernel matrix contains non-finite entries", nugget=nugget)
    t = gram.shape[0]
    idx = np.arange(t)
    current = nugget
    while True:
        k = gram.copy()
        k[idx, idx] += current
        try:
            return np.linalg.cholesky(k), current
        except np.linalg.LinAlgError:
            if current >= MAX_NUGGET:
                raise NumericalError(
                    f"Cholesky factorization failed with nugget up to {current:g}",
                    nugget=current,
                ) from None
            current = min(current * NUGGET_ESCALATION, MAX_NUGGET)


class PosteriorSummary:
    """Exact GP posterior for one hyper-parameter vector.

    Caches the Cholesky factor of K + nugget*I and the solve against
    (y - mean_const); mean/stddev queries accept a single point or a
    batch of points.
    """

    def __init__(self, dataset: Dataset, hp: HyperParams):
        if dataset.dim != hp.dim:
            raise ValueError(
                f"dataset is {dataset.dim}-dimensional, hyper-parameters expect {hp.dim}"
            )
        self.dataset = dataset
        self.hp = hp
        if dataset.t == 0:
            self.chol = None
            self.alpha = None
            self.nugget_used = hp.nugget
        else:
            gram = gram_matrix(dataset.inputs, hp)
            self.chol, self.nugget_used = _chol_with_escalation(gram, hp.nugget)
            resid = dataset.outputs - hp.mean_const
            self.alpha = cho_solve((self.chol, True), resid, check_finite=False)

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        return np.atleast_2d(x), single

    def mean_and_var(self, x):
        """Posterior mean and variance (variance floored at 0)."""
        pts, single = self._as_batch(x)
        hp = self.hp
        if self.chol is None:
            mean = np.full(pts.shape[0], hp.mean_const)
            var = np.full(pts.shape[0], hp.signal_variance)
        else:
            k_star = _cross_kernel(pts, self.dataset.inputs, hp)
            mean = hp.mean_const + k_star @ self.alpha
            v = solve_triangular(self.chol, k_star.T, lower=True, check_finite=False)
            var = np.maximum(hp.signal_variance - np.einsum("tn,tn->n", v, v), 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def mean_and_std(self, x):
        mean, var = self.mean_and_var(x)
        return mean, np.sqrt(var)

    def mean(self, x):
        return self.mean_and_var(x)[0]

    def stddev(self, x):
        return self.mean_and_std(x)[1]


def posterior(dataset: Dataset, hp: HyperParams) -> PosteriorSummary:
    """Exact GP posterior summary with cached Cholesky factor."""
    return PosteriorSummary(dataset, hp)


def log_marginal_likelihood(dataset: Dataset, hp: HyperParams) -> float:
    """Gaussian-process log marginal likelihood, computed via Cholesky."""
    if dataset.t == 0:
        raise ValueError("log marginal likelihood requires at least one observation")
    gram = gram_matrix(dataset.inputs, hp)
    chol, _ = _chol_with_escalation(gram, hp.nugget)
    resid = dataset.outputs - hp.mean_const
    z = solve_triangular(chol, resid, lower=True, check_finite=False)
    return float(
        -0.5 * z @ z
        - np.log(np.diag(chol)).sum()
        - 0.5 * dataset.t * np.log(2.0 * np.pi)
    )


class GpFunctionSample:
    """One approximate draw from the GP posterior, evaluable anywhere.

    Built from a random-feature expansion of the Matern 5/2 kernel (its
    spectral density is a multivariate Student-t with 5 degrees of
    freedom) conditioned on the data through the exact weight-space
    posterior of the feature model. Deterministic in the seed;
    evaluation costs O(n_features) per query point.
    """

    def __init__(self, dataset: Dataset, hp: HyperParams, seed: int, n_features: int = 1024):
        if n_features < 1:
            raise ValueError("n_features must be >= 1")
        if dataset.dim != hp.dim:
            raise ValueError(
                f"dataset is {dataset.dim}-dimensional, hyper-parameters expect {hp.dim}"
            )
        rng = np.random.default_rng(seed)
        d, m = hp.dim, n_features
        normal = rng.standard_normal((m, d))
        chi2 = rng.chisquare(5.0, size=m)
        # t_5 frequencies, scaled per-dimension by the ARD lengthscales
        self._freq = normal * np.sqrt(5.0 / chi2)[:, None] / hp.lengthscales
        self._phase = rng.uniform(0.0, 2.0 * np.pi, size=m)
        self._scale = np.sqrt(2.0 * hp.signal_variance / m)
        self._mean_const = hp.mean_const

        prior_w = rng.standard_normal(m)
        if dataset.t == 0:
            self._weights = prior_w
        else:
            phi = self._features(dataset.inputs)  # (t, m)
            noise = rng.standard_normal(dataset.t)
            resid = (
                dataset.outputs
                - hp.mean_const
                - (phi @ prior_w + np.sqrt(hp.nugget) * noise)
            )
            # A = phi phi^T + nugget I is PD by construction
            a = phi @ phi.T
            a[np.diag_indices_from(a)] += hp.nugget
            self._weights = prior_w + phi.T @ np.linalg.solve(a, resid)

    def _features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._scale * np.cos(x @ self._freq.T + self._phase)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        values = self._mean_const + self._features(x) @ self._weights
        return float(values[0]) if single else values


def sample_gp_function(
    dataset: Dataset, hp: HyperParams, seed: int, n_features: int = 1024
) -> GpFunctionSample:
    """Draw one approximate GP posterior function (see GpFunctionSample)."""
    return GpFunctionSample(dataset, hp, seed, n_features=n_features)
