"""Finite-size sweeps and power-law scaling fits.

A sweep runs one realization per (dimension, hamiltonian seed, state
seed) triple, computes a single decoherence functional at the longest
grid, and derives every shorter-grid record from it by trailing
marginalization.  Records stream to a JSONL file as they finish, so an
interrupted sweep resumes without recomputing completed keys.
"""

from __future__ import annotations

import enum
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    GRID_STREAM,
    HAMILTONIAN_STREAM,
    STATE_STREAM,
    BlockHamiltonian,
    Coarsening,
    Ensemble,
    ModelConfig,
    Regime,
    Spacing,
    build_coarsening,
    build_hamiltonian,
    derive_coupling,
    derive_seed,
)
from .spectral import (
    SpectralDecomposition,
    eigendecompose,
    sample_haar_state,
    select_eigenstate,
)
from .histories import HistoryGrid, MAX_LENGTH, compute_branch_states, compute_df
from .metrics import (
    arrow_classification,
    branch_histogram,
    delta_max,
    epsilon_average,
    epsilon_by_distance,
    marginalize,
)

__all__ = [
    "InitFamily",
    "RandomSpacing",
    "SweepSpec",
    "PerLengthMetrics",
    "RealizationResult",
    "ScalingFit",
    "compute_realization_df",
    "run_realization",
    "run_sweep",
    "fit_scaling",
    "FIT_METRICS",
]

FIT_METRICS = ("epsilon", "delta")

RECORDS_FILENAME = "realizations.jsonl"
SPEC_FILENAME = "sweep_spec.json"


class InitFamily(enum.Enum):
    HAAR_EQUILIBRIUM = "haar_equilibrium"
    HAAR_NONEQUILIBRIUM = "haar_nonequilibrium"
    EIGENSTATE = "eigenstate"


@dataclass(frozen=True)
class RandomSpacing:
    """Uniform random grid spacings, bounds in units of tau."""

    lo_tau: float
    hi_tau: float


@dataclass(frozen=True)
class SweepSpec:
    """Full description of a scaling sweep.

    step_mode is either the string 'tau' (grid step equal to the
    relaxation time), an explicit positive step in absolute time units,
    or a RandomSpacing instance.
    """

    d_grid: tuple[int, ...]
    num_hamiltonian_seeds: int = 3
    num_state_seeds: int = 3
    base_seed: int = 0
    regime: Regime = Regime.WEAK
    init_family: InitFamily = InitFamily.HAAR_EQUILIBRIUM
    weights: tuple[float, float, float] | None = None
    num_steps: int = 4
    step_mode: object = "tau"
    ensemble: Ensemble = Ensemble.GOE
    diagonal_spacing: Spacing = Spacing.EQUAL
    delta_e: float = 1.0
    smallness_target: float = 0.01

    def __post_init__(self) -> None:
        if not self.d_grid:
            raise ValueError("d_grid must not be empty")
        for d in self.d_grid:
            if d < 5 or d % 5:
                raise ValueError(f"each dimension must be a positive multiple of 5, got {d}")
        if any(a >= b for a, b in zip(self.d_grid, self.d_grid[1:])):
            raise ValueError("d_grid must be strictly ascending")
        if self.num_hamiltonian_seeds < 1 or self.num_state_seeds < 1:
            raise ValueError("seed counts must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be non-negative")
        if not 1 <= self.num_steps <= MAX_LENGTH - 1:
            raise ValueError(
                f"num_steps must lie in [1, {MAX_LENGTH - 1}], got {self.num_steps}"
            )
        if isinstance(self.step_mode, str):
            if self.step_mode != "tau":
                raise ValueError(f"unknown step mode {self.step_mode!r}")
        elif isinstance(self.step_mode, (int, float)):
            if self.step_mode <= 0:
                raise ValueError("explicit grid step must be positive")
        elif not isinstance(self.step_mode, RandomSpacing):
            raise ValueError(f"unsupported step mode {self.step_mode!r}")

    @property
    def l_max(self) -> int:
        return self.num_steps + 1

    def hamiltonian_seed(self, h_index: int) -> int:
        return derive_seed(self.base_seed, HAMILTONIAN_STREAM, h_index)

    def state_seed(self, h_index: int, s_index: int) -> int:
        return derive_seed(self.base_seed, STATE_STREAM, h_index, s_index)

    def grid_seed(self, h_index: int, s_index: int) -> int:
        return derive_seed(self.base_seed, GRID_STREAM, h_index, s_index)

    def model_config(self, d: int, h_index: int) -> ModelConfig:
        return ModelConfig(
            v_minus=d // 5,
            delta_e=self.delta_e,
            regime=self.regime,
            ensemble=self.ensemble,
            diagonal_spacing=self.diagonal_spacing,
            hamiltonian_seed=self.hamiltonian_seed(h_index),
            smallness_target=self.smallness_target,
        )


@dataclass(frozen=True)
class PerLengthMetrics:
    """Metrics of the marginalized functional at one grid length."""

    epsilon_avg: float
    pair_count: int
    skipped_pairs: int
    delta_max: float
    argmax_subset: int
    p_forward: float
    p_noarrow: float
    p_backward: float
    histogram: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RealizationResult:
    """Everything recorded for one (d, h_index, s_index) realization."""

    d: int
    h_index: int
    s_index: int
    hamiltonian_seed: int
    state_seed: int
    regime: str
    init_family: str
    eigenstate_index: int | None
    per_length: dict[int, PerLengthMetrics]
    distance_bins: dict[int, tuple[float, int]]
    wall_time_s: float
    error: str | None = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.d, self.h_index, self.s_index)

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares power law metric ~ D^(-alpha) in log10-log10 space."""

    length: int
    metric: str
    alpha: float
    intercept: float
    r_squared: float
    points: tuple[tuple[int, float], ...]


def _initial_weights(spec: SweepSpec, config: ModelConfig) -> tuple[float, float, float]:
    if spec.weights is not None:
        return spec.weights
    if spec.init_family is InitFamily.HAAR_EQUILIBRIUM:
        d = config.dimension
        return tuple(v / d for v in config.volumes)
    return (1.0, 0.0, 0.0)


def _make_grid(spec: SweepSpec, tau: float, h_index: int, s_index: int) -> HistoryGrid:
    if spec.step_mode == "tau":
        return HistoryGrid.constant(spec.num_steps, tau)
    if isinstance(spec.step_mode, RandomSpacing):
        return HistoryGrid.random_uniform(
            spec.num_steps,
            spec.step_mode.lo_tau * tau,
            spec.step_mode.hi_tau * tau,
            spec.grid_seed(h_index, s_index),
        )
    return HistoryGrid.constant(spec.num_steps, float(spec.step_mode))


def compute_realization_df(
    spec: SweepSpec,
    d: int,
    h_index: int,
    s_index: int,
    hamiltonian: BlockHamiltonian | None = None,
    sd: SpectralDecomposition | None = None,
):
    """Decoherence functional of one realization at the full grid.

    Returns (df, coarsening, eigenstate_index).  A prebuilt Hamiltonian
    or decomposition may be passed in when several state seeds share one
    matrix.
    """
    config = spec.model_config(d, h_index)
    coupling = derive_coupling(config)
    if hamiltonian is None:
        hamiltonian = build_hamiltonian(config)
    if sd is None:
        sd = eigendecompose(hamiltonian)
    coarsening = build_coarsening(config)

    state_seed = spec.state_seed(h_index, s_index)
    eigenstate_index: int | None = None
    if spec.init_family is InitFamily.EIGENSTATE:
        psi0, eigenstate_index = select_eigenstate(sd, state_seed)
    else:
        psi0 = sample_haar_state(coarsening, _initial_weights(spec, config), state_seed)

    grid = _make_grid(spec, coupling.tau, h_index, s_index)
    branches = compute_branch_states(sd, coarsening, psi0, grid)
    return compute_df(branches), coarsening, eigenstate_index


def run_realization(
    spec: SweepSpec,
    d: int,
    h_index: int,
    s_index: int,
    hamiltonian: BlockHamiltonian | None = None,
    sd: SpectralDecomposition | None = None,
    shared_time: float = 0.0,
) -> RealizationResult:
    """Run one realization end to end.

    A prebuilt Hamiltonian/decomposition may be passed in when several
    state seeds share one matrix; `shared_time` is the amortized share
    of that setup charged to this realization's wall time.
    """
    start = time.perf_counter()
    df, coarsening, eigenstate_index = compute_realization_df(
        spec, d, h_index, s_index, hamiltonian=hamiltonian, sd=sd
    )

    per_length: dict[int, PerLengthMetrics] = {}
    for length in range(2, spec.l_max + 1):
        sub = marginalize(df, range(length))
        eps = epsilon_average(sub)
        dist = delta_max(sub)
        arrow = arrow_classification(sub, coarsening)
        per_length[length] = PerLengthMetrics(
            epsilon_avg=eps.epsilon_avg,
            pair_count=eps.pair_count,
            skipped_pairs=eps.skipped_pairs,
            delta_max=dist.delta_max,
            argmax_subset=dist.argmax_subset,
            p_forward=arrow.p_forward,
            p_noarrow=arrow.p_noarrow,
            p_backward=arrow.p_backward,
            histogram=branch_histogram(sub),
        )
    bins = {d_h: (mean, count) for d_h, (mean, count) in epsilon_by_distance(df).items()}
    wall = shared_time + (time.perf_counter() - start)
    return RealizationResult(
        d=d,
        h_index=h_index,
        s_index=s_index,
        hamiltonian_seed=spec.hamiltonian_seed(h_index),
        state_seed=spec.state_seed(h_index, s_index),
        regime=spec.regime.value,
        init_family=spec.init_family.value,
        eigenstate_index=eigenstate_index,
        per_length=per_length,
        distance_bins=bins,
        wall_time_s=wall,
    )


def _error_result(
    spec: SweepSpec, d: int, h_index: int, s_index: int, exc: Exception
) -> RealizationResult:
    return RealizationResult(
        d=d,
        h_index=h_index,
        s_index=s_index,
        hamiltonian_seed=spec.hamiltonian_seed(h_index),
        state_seed=spec.state_seed(h_index, s_index),
        regime=spec.regime.value,
        init_family=spec.init_family.value,
        eigenstate_index=None,
        per_length={},
        distance_bins={},
        wall_time_s=0.0,
        error=f"{type(exc).__name__}: {exc}",
    )


def _run_group(
    spec: SweepSpec, d: int, h_index: int, s_indices: tuple[int, ...]
) -> list[RealizationResult]:
    """All state seeds for one (d, h_index): one eigensolve, many states."""
    start = time.perf_counter()
    try:
        config = spec.model_config(d, h_index)
        hamiltonian = build_hamiltonian(config)
        sd = eigendecompose(hamiltonian)
    except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
        return [_error_result(spec, d, h_index, s, exc) for s in s_indices]
    shared = (time.perf_counter() - start) / max(len(s_indices), 1)
    results = []
    for s_index in s_indices:
        try:
            results.append(
                run_realization(
                    spec, d, h_index, s_index,
                    hamiltonian=hamiltonian, sd=sd, shared_time=shared,
                )
            )
        except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
            results.append(_error_result(spec, d, h_index, s_index, exc))
    return results


def result_to_dict(result: RealizationResult) -> dict:
    out = {
        "d": result.d,
        "h_index": result.h_index,
        "s_index": result.s_index,
        "hamiltonian_seed": result.hamiltonian_seed,
        "state_seed": result.state_seed,
        "regime": result.regime,
        "init_family": result.init_family,
        "eigenstate_index": result.eigenstate_index,
        "per_length": {
            str(l): {
                "epsilon_avg": m.epsilon_avg,
                "pair_count": m.pair_count,
                "skipped_pairs": m.skipped_pairs,
                "delta_max": m.delta_max,
                "argmax_subset": m.argmax_subset,
                "p_forward": m.p_forward,
                "p_noarrow": m.p_noarrow,
                "p_backward": m.p_backward,
                "histogram": m.histogram,
            }
            for l, m in result.per_length.items()
        },
        "distance_bins": {
            str(k): [mean, count] for k, (mean, count) in result.distance_bins.items()
        },
        "wall_time_s": result.wall_time_s,
    }
    if result.error is not None:
        out["error"] = result.error
    return out


def result_from_dict(data: dict) -> RealizationResult:
    per_length = {
        int(l): PerLengthMetrics(
            epsilon_avg=m["epsilon_avg"],
            pair_count=m["pair_count"],
            skipped_pairs=m["skipped_pairs"],
            delta_max=m["delta_max"],
            argmax_subset=m["argmax_subset"],
            p_forward=m["p_forward"],
            p_noarrow=m["p_noarrow"],
            p_backward=m["p_backward"],
            histogram=dict(m.get("histogram", {})),
        )
        for l, m in data.get("per_length", {}).items()
    }
    bins = {
        int(k): (float(v[0]), int(v[1]))
        for k, v in data.get("distance_bins", {}).items()
    }
    return RealizationResult(
        d=data["d"],
        h_index=data["h_index"],
        s_index=data["s_index"],
        hamiltonian_seed=data["hamiltonian_seed"],
        state_seed=data["state_seed"],
        regime=data["regime"],
        init_family=data["init_family"],
        eigenstate_index=data.get("eigenstate_index"),
        per_length=per_length,
        distance_bins=bins,
        wall_time_s=data.get("wall_time_s", 0.0),
        error=data.get("error"),
    )


def _spec_to_dict(spec: SweepSpec) -> dict:
    step: object
    if isinstance(spec.step_mode, RandomSpacing):
        step = {"random_uniform": [spec.step_mode.lo_tau, spec.step_mode.hi_tau]}
    else:
        step = spec.step_mode
    return {
        "d_grid": list(spec.d_grid),
        "num_hamiltonian_seeds": spec.num_hamiltonian_seeds,
        "num_state_seeds": spec.num_state_seeds,
        "base_seed": spec.base_seed,
        "regime": spec.regime.value,
        "init_family": spec.init_family.value,
        "weights": list(spec.weights) if spec.weights is not None else None,
        "num_steps": spec.num_steps,
        "step_mode": step,
        "ensemble": spec.ensemble.value,
        "diagonal_spacing": spec.diagonal_spacing.value,
        "delta_e": spec.delta_e,
        "smallness_target": spec.smallness_target,
    }


def _load_records(path: Path) -> dict[tuple[int, int, int], dict]:
    records: dict[tuple[int, int, int], dict] = {}
    if not path.exists():
        return records
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            records[(data["d"], data["h_index"], data["s_index"])] = data
    return records


def run_sweep(
    spec: SweepSpec,
    output_dir: str | Path | None = None,
    workers: int = 1,
) -> list[RealizationResult]:
    """Run (or resume) every realization of a sweep.

    With an output directory, finished realizations append to
    realizations.jsonl immediately and existing records are skipped on
    rerun, so a completed directory costs no recomputation.  Results
    come back sorted by (d, h_index, s_index) regardless of worker
    count or completion order.
    """
    records: dict[tuple[int, int, int], dict] = {}
    records_path = None
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        spec_path = out / SPEC_FILENAME
        spec_dict = _spec_to_dict(spec)
        if spec_path.exists():
            stored = json.loads(spec_path.read_text())
            if stored != spec_dict:
                raise ValueError(
                    f"output directory {out} holds records for a different sweep spec"
                )
        else:
            spec_path.write_text(json.dumps(spec_dict, indent=2, sort_keys=True) + "\n")
        records_path = out / RECORDS_FILENAME
        records = _load_records(records_path)

    groups: list[tuple[int, int, tuple[int, ...]]] = []
    for d in spec.d_grid:
        for h_index in range(spec.num_hamiltonian_seeds):
            pending = tuple(
                s for s in range(spec.num_state_seeds) if (d, h_index, s) not in records
            )
            if pending:
                groups.append((d, h_index, pending))

    def _store(batch: list[RealizationResult]) -> None:
        for result in batch:
            data = result_to_dict(result)
            records[result.key] = data
            if records_path is not None:
                with records_path.open("a") as fh:
                    fh.write(json.dumps(data, sort_keys=True) + "\n")

    if workers > 1 and groups:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_group, spec, d, h_index, pending)
                for d, h_index, pending in groups
            ]
            for future in futures:
                _store(future.result())
    else:
        for d, h_index, pending in groups:
            _store(_run_group(spec, d, h_index, pending))

    results = [result_from_dict(records[key]) for key in sorted(records)]
    return results


def fit_scaling(
    results: Sequence[RealizationResult], metric: str, length: int
) -> ScalingFit:
    """Fit metric(D) ~ D^(-alpha) through per-dimension means.

    Raw metric values are averaged over the successful realizations of
    each dimension; the fit is ordinary least squares on (log10 D,
    log10 mean).  Requires at least three distinct dimensions and
    strictly positive means.
    """
    if metric not in FIT_METRICS:
        raise ValueError(f"metric must be one of {FIT_METRICS}, got {metric!r}")
    by_d: dict[int, list[float]] = {}
    for result in results:
        if result.failed:
            continue
        if length not in result.per_length:
            raise ValueError(
                f"realization {result.key} has no grid length {length}"
            )
        m = result.per_length[length]
        value = m.epsilon_avg if metric == "epsilon" else m.delta_max
        by_d.setdefault(result.d, []).append(value)
    if len(by_d) < 3:
        raise ValueError(
            f"need at least 3 distinct dimensions with successful realizations, "
            f"got {sorted(by_d)}"
        )
    points = tuple(
        (d, float(np.mean(values))) for d, values in sorted(by_d.items())
    )
    means = np.array([mean for _, mean in points])
    if np.any(means <= 0):
        raise ValueError("per-dimension means must be positive for a log-log fit")
    x = np.log10([d for d, _ in points])
    y = np.log10(means)
    xc = x - x.mean()
    yc = y - y.mean()
    slope = float((xc * yc).sum() / (xc * xc).sum())
    intercept = float(y.mean() - slope * x.mean())
    residual = y - (slope * x + intercept)
    ss_res = float((residual * residual).sum())
    ss_tot = float((yc * yc).sum())
    if ss_tot > 0.0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res == 0.0 else 0.0
    return ScalingFit(
        length=length,
        metric=metric,
        # The +0.0 keeps a flat fit from reporting alpha as -0.0.
        alpha=-slope + 0.0,
        intercept=intercept,
        r_squared=r_squared,
        points=points,
    )
