"""Experiment harness.

Runs the outer optimization loop (random initial design, batch
proposals, model refresh via re-normalization after every batch),
records per-iteration metrics, aggregates repetitions, writes CSV/JSON
traces, and exposes a file-based ask/tell interface for external
objectives.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import benchmarks
from .errors import (
    ConfigError,
    InitializationError,
    NumericalError,
    StateFileError,
    StateMismatchError,
)
from .gp import Dataset, normalize
from .hyperposterior import McmcConfig
from .rng import derive_seed, generator
from .strategies import STRATEGIES, BatchConfig, propose_batch

REGRET_FLOOR = 1e-6
EXTERNAL = "external"

# harness-level seed tags (strategy tags live in strategies.py)
_TAG_INIT = 0
_TAG_ITER = 1


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment description; JSON-serializable, flat field names."""

    benchmark: str
    strategy: str = "ATS"
    acquisition_kind: str = "EI"
    batch_size: int = 5
    n_iterations: int = 9
    n_repetitions: int = 10
    n_init: int = 5
    s: int = 10
    enhance_p: float = 0.5
    root_seed: int = 0
    out_dir: str | None = None
    domain: tuple[tuple[float, float], ...] | None = None
    n_probes: int | None = None
    mcmc_walkers: int = 32
    mcmc_burn_in: int = 300
    ts_features: int = 1024

    def __post_init__(self):
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be >= 1")
        if self.n_repetitions < 1:
            raise ConfigError("n_repetitions must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.benchmark == EXTERNAL:
            if self.domain is None:
                raise ConfigError("external objectives require an explicit domain")
            object.__setattr__(
                self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain)
            )
        else:
            spec = benchmarks.get(self.benchmark)  # raises KeyError for unknown names
            object.__setattr__(self, "domain", spec.domain)

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def known_minimum(self) -> float | None:
        if self.benchmark == EXTERNAL:
            return None
        return benchmarks.min_value(self.benchmark)

    def to_batch_config(self, root_seed: int) -> BatchConfig:
        return BatchConfig(
            batch_size=self.batch_size,
            acquisition_kind=self.acquisition_kind,
            strategy=self.strategy,
            s=self.s,
            enhance_p=self.enhance_p,
            root_seed=root_seed,
            mcmc=McmcConfig(n_walkers=self.mcmc_walkers, burn_in=self.mcmc_burn_in),
            n_probes=self.n_probes,
            ts_features=self.ts_features,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain"] = [list(b) for b in self.domain]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        if "benchmark" not in data:
            raise ConfigError("config is missing required field 'benchmark'")
        data = dict(data)
        if data.get("domain") is not None:
            data["domain"] = tuple(tuple(b) for b in data["domain"])
        try:
            return cls(**data)
        except (TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc


def regret(best: float, benchmark: str | None) -> float | None:
    """Distance of the best value from the known minimum, clipped at 1e-6.

    Absent (None) for external objectives without a known minimum.
    """
    if benchmark is None or benchmark == EXTERNAL:
        return None
    return max(best - benchmarks.min_value(benchmark), REGRET_FLOOR)


def intra_batch_distance(points) -> float | None:
    """Mean over batch points of their mean l2 distance to the others.

    Computed in whatever coordinates the points are given (the harness
    passes normalized unit-cube coordinates). Absent for batches of one.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m = pts.shape[0]
    if m < 2:
        return None
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return float(dist.sum() / (m * (m - 1)))


@dataclass(frozen=True)
class IterationRecord:
    rep: int
    iteration: int
    evals: int
    best: float
    regret: float | None
    batch_diversity: float | None
    wallclock_ms: float
    points: tuple[tuple[float, ...], ...]
    provenance: tuple[dict, ...]


@dataclass(frozen=True)
class RepetitionResult:
    rep: int
    records: tuple[IterationRecord, ...]
    failed: bool = False
    error: str | None = None


@dataclass(frozen=True)
class ExperimentTrace:
    config: ExperimentConfig
    repetitions: tuple[RepetitionResult, ...]

    def records(self):
        for rep in self.repetitions:
            yield from rep.records

    def final_bests(self) -> list[float]:
        """Best value at the last iteration of every successful repetition."""
        return [
            rep.records[-1].best
            for rep in self.repetitions
            if not rep.failed and rep.records
        ]

    def aggregate(self) -> list[dict]:
        """Per-iteration mean and standard error of the best value across
        successful repetitions, with the contributing-repetition count."""
        ok = [rep for rep in self.repetitions if not rep.failed]
        out = []
        for it in range(self.config.n_iterations):
            bests = np.array([rep.records[it].best for rep in ok if it < len(rep.records)])
            n = bests.size
            if n == 0:
                out.append({"iteration": it, "mean_best": None, "se_best": None, "n_reps": 0})
                continue
            se = float(bests.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            out.append(
                {
                    "iteration": it,
                    "mean_best": float(bests.mean()),
                    "se_best": se,
                    "n_reps": int(n),
                }
            )
        return out

    def to_csv(self) -> str:
        lines = ["rep,iter,evals,best,regret,batch_diversity,wallclock_ms"]
        for r in self.records():
            reg = "" if r.regret is None else repr(r.regret)
            div = "" if r.batch_diversity is None else repr(r.batch_diversity)
            lines.append(
                f"{r.rep},{r.iteration},{r.evals},{r.best!r},{reg},{div},{r.wallclock_ms!r}"
            )
        return "\n".join(lines) + "\n"

    def save(self, out_dir: str) -> None:
        """Write trace.csv, aggregate.csv, and meta.json under out_dir."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.csv"), "w") as fh:
            fh.write(self.to_csv())
        agg_lines = ["iter,mean_best,se_best,n_reps"]
        for row in self.aggregate():
            mb = "" if row["mean_best"] is None else repr(row["mean_best"])
            se = "" if row["se_best"] is None else repr(row["se_best"])
            agg_lines.append(f"{row['iteration']},{mb},{se},{row['n_reps']}")
        with open(os.path.join(out_dir, "aggregate.csv"), "w") as fh:
            fh.write("\n".join(agg_lines) + "\n")
        meta = {
            "config": self.config.to_dict(),
            "failures": [
                {"rep": rep.rep, "error": rep.error}
                for rep in self.repetitions
                if rep.failed
            ],
            "repetitions": [
                {
                    "rep": rep.rep,
                    "failed": rep.failed,
                    "iterations": [
                        {
                            "iteration": r.iteration,
                            "points": [list(p) for p in r.points],
                            "provenance": list(r.provenance),
                        }
                        for r in rep.records
                    ],
                }
                for rep in self.repetitions
            ],
        }
        with open(os.path.join(out_dir, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _provenance_summary(prov) -> dict:
    out = {"theta_seed": prov.theta_seed, "jitter": prov.jitter}
    if prov.coin is not None:
        out["coin"] = prov.coin
    if prov.hallucination is not None:
        out["hallucination"] = prov.hallucination
    if prov.ts_seed is not None:
        out["ts_seed"] = prov.ts_seed
    return out


def _initial_design(cfg: ExperimentConfig, rep: int) -> np.ndarray:
    bounds = np.asarray(cfg.domain, dtype=float)
    rng = generator(cfg.root_seed, rep, _TAG_INIT)
    return bounds[:, 0] + rng.random((cfg.n_init, cfg.dim)) * (bounds[:, 1] - bounds[:, 0])


def _run_repetition(cfg: ExperimentConfig, rep: int, objective, clock) -> RepetitionResult:
    if clock is None:
        clock = time.perf_counter
    bounds = np.asarray(cfg.domain, dtype=float)
    records: list[IterationRecord] = []
    try:
        x0 = _initial_design(cfg, rep)
        y0 = [float(objective(x)) for x in x0]
        data = Dataset(inputs=x0, outputs=y0, domain=bounds)
        best = min(y0)
        evals = cfg.n_init
        for it in range(cfg.n_iterations):
            t0 = clock()
            normalized = normalize(data)
            bc = cfg.to_batch_config(derive_seed(cfg.root_seed, rep, _TAG_ITER, it))
            proposal = propose_batch(normalized, bc)
            raw_points = normalized.norm_state.x_to_original(proposal.points)
            ys = [float(objective(x)) for x in raw_points]
            data = data.extended(raw_points, ys)
            best = min(best, min(ys))
            evals += len(ys)
            records.append(
                IterationRecord(
                    rep=rep,
                    iteration=it,
                    evals=evals,
                    best=best,
                    regret=regret(best, cfg.benchmark),
                    batch_diversity=intra_batch_distance(proposal.points),
                    wallclock_ms=(clock() - t0) * 1000.0,
                    points=tuple(tuple(map(float, p)) for p in raw_points),
                    provenance=tuple(_provenance_summary(p) for p in proposal.provenance),
                )
            )
    except (NumericalError, InitializationError, np.linalg.LinAlgError) as exc:
        return RepetitionResult(
            rep=rep, records=tuple(records), failed=True, error=f"{type(exc).__name__}: {exc}"
        )
    return RepetitionResult(rep=rep, records=tuple(records))


def _run_repetition_by_name(args) -> RepetitionResult:
    cfg, rep = args
    return _run_repetition(cfg, rep, benchmarks.get(cfg.benchmark).evaluator, None)


def run_experiment(
    cfg: ExperimentConfig,
    objective=None,
    clock=None,
    n_workers: int = 1,
) -> ExperimentTrace:
    """Run all repetitions of an experiment.

    Deterministic in (cfg, cfg.root_seed) up to wall-clock timing; pass a
    fake `clock` for fully reproducible trace files. Repetitions of named
    benchmarks may run in parallel processes (results are identical, the
    per-repetition seeds do not depend on scheduling). A repetition that
    dies with a numerical error is recorded as failed; the others
    continue.
    """
    if cfg.benchmark == EXTERNAL:
        if objective is None:
            raise ConfigError("an objective callable is required for external experiments")
        fn = objective
    else:
        fn = benchmarks.get(cfg.benchmark).evaluator
        if objective is not None:
            fn = objective

    if n_workers > 1 and cfg.benchmark != EXTERNAL and objective is None and clock is None:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            reps = list(
                pool.map(_run_repetition_by_name, [(cfg, r) for r in range(cfg.n_repetitions)])
            )
    else:
        reps = [_run_repetition(cfg, r, fn, clock) for r in range(cfg.n_repetitions)]
    return ExperimentTrace(config=cfg, repetitions=tuple(reps))


# ---------------------------------------------------------------------------
# Ask/tell interface: a JSON state file holds the configuration, the
# evaluations collected so far, and the pending batch. `suggest` is
# idempotent until `update` consumes the pending points.
# ---------------------------------------------------------------------------

_COORD_TOL = 1e-9


def _read_state(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise StateFileError(f"cannot read state file {path!r}: {exc}") from exc
    try:
        state = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise StateFileError(
            f"state file {path!r} is not valid JSON "
            f"(line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from exc
    if not isinstance(state, dict):
        raise StateFileError(f"state file {path!r} must hold a JSON object")
    if "config" not in state:
        raise StateFileError(f"state file {path!r} is missing the 'config' field")
    try:
        config = ExperimentConfig.from_dict(state["config"])
    except (ConfigError, KeyError) as exc:
        raise StateFileError(f"state file {path!r} has an invalid 'config': {exc}") from exc
    state.setdefault("inputs", [])
    state.setdefault("outputs", [])
    state.setdefault("iteration", 0)
    state.setdefault("pending", None)
    state.setdefault("pending_is_init", False)
    if len(state["inputs"]) != len(state["outputs"]):
        raise StateFileError(
            f"state file {path!r}: 'inputs' and 'outputs' lengths differ "
            f"({len(state['inputs'])} vs {len(state['outputs'])})"
        )
    state["_config"] = config
    return state


def _write_state(path: str, state: dict) -> None:
    body = {k: v for k, v in state.items() if not k.startswith("_")}
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(body, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def new_state(cfg: ExperimentConfig) -> dict:
    """A fresh ask/tell state for the given configuration."""
    return {
        "config": cfg.to_dict(),
        "inputs": [],
        "outputs": [],
        "iteration": 0,
        "pending": None,
        "pending_is_init": False,
    }


def suggest(state_path: str) -> np.ndarray:
    """Propose the next batch (or the initial design) and persist it as
    pending. Repeated calls return the same points until `update`."""
    state = _read_state(state_path)
    cfg: ExperimentConfig = state["_config"]
    if state["pending"] is not None:
        return np.asarray(state["pending"], dtype=float)

    if len(state["outputs"]) < cfg.n_init:
        if state["outputs"]:
            raise StateFileError(
                "state holds fewer evaluations than the initial design; "
                "initial points must be evaluated in one update"
            )
        points = _initial_design(cfg, rep=0)
        state["pending_is_init"] = True
    else:
        data = Dataset(
            inputs=np.asarray(state["inputs"], dtype=float),
            outputs=np.asarray(state["outputs"], dtype=float),
            domain=np.asarray(cfg.domain, dtype=float),
        )
        normalized = normalize(data)
        bc = cfg.to_batch_config(
            derive_seed(cfg.root_seed, 0, _TAG_ITER, int(state["iteration"]))
        )
        proposal = propose_batch(normalized, bc)
        points = normalized.norm_state.x_to_original(proposal.points)
        state["pending_is_init"] = False
    state["pending"] = [list(map(float, p)) for p in np.atleast_2d(points)]
    _write_state(state_path, state)
    return np.asarray(state["pending"], dtype=float)


def update(state_path: str, evaluations) -> None:
    """Record results for the pending batch: a sequence of (x, y) pairs in
    the same order as suggested. On any mismatch the state is unchanged."""
    state = _read_state(state_path)
    if state["pending"] is None:
        raise StateMismatchError("no pending batch; call suggest first")
    pending = np.asarray(state["pending"], dtype=float)
    pairs = list(evaluations)
    if len(pairs) != pending.shape[0]:
        raise StateMismatchError(
            f"expected {pending.shape[0]} evaluations, got {len(pairs)}"
        )
    xs = np.atleast_2d(np.asarray([np.asarray(x, dtype=float).ravel() for x, _ in pairs]))
    ys = [float(y) for _, y in pairs]
    if xs.shape != pending.shape or not np.allclose(xs, pending, rtol=0.0, atol=_COORD_TOL):
        raise StateMismatchError("evaluated points do not match the pending batch")
    if not all(np.isfinite(ys)):
        raise StateMismatchError("evaluation results must be finite")
    state["inputs"].extend([list(map(float, x)) for x in xs])
    state["outputs"].extend(ys)
    if not state["pending_is_init"]:
        state["iteration"] = int(state["iteration"]) + 1
    state["pending"] = None
    state["pending_is_init"] = False
    _write_state(state_path, state)
