"""
Toy process-based watershed generator.

Synthetic climate drives a per-grid soil bucket whose runoff is delayed by
the grid's distance to the river and summed at the gauge. The output is a
regular WatershedDataset, so generated watersheds go through exactly the
same CSV layout and pipeline as user-supplied ones.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..nn.tensor import ArrayLike, ShapeError, Tensor
from ..utils import spawn_seeds
from .watershed import GridCell, WatershedDataset

LOG = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0

# mm x grid -> m3/s. NSE is scale-free, so this only affects reporting.
UNIT_CONSTANT = 1.0

ROLES = ("source", "related", "distant")

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class ClimateParams:
    """
    Seasonal mean precipitation plus Bernoulli storms with exponential
    magnitudes. The seasonal part carries the mean minus the expected storm
    contribution, so the long-run mean of the series stays `mean_precip`.
    """

    mean_precip: float = 2.5
    amplitude: float = 0.4
    phase: float = 100.0
    storm_rate: float = 0.08
    storm_scale: float = 15.0

    def __post_init__(self) -> None:
        if self.mean_precip < 0:
            raise ValueError(f"mean_precip must be >= 0, got {self.mean_precip}")
        if not 0 <= self.amplitude <= 1:
            raise ValueError(f"amplitude must be in [0, 1], got {self.amplitude}")
        if not 0 <= self.storm_rate <= 1:
            raise ValueError(f"storm_rate must be in [0, 1], got {self.storm_rate}")
        if self.storm_scale < 0:
            raise ValueError(f"storm_scale must be >= 0, got {self.storm_scale}")
        if self.storm_rate * self.storm_scale > self.mean_precip:
            raise ValueError(
                f"expected storm precipitation {self.storm_rate * self.storm_scale} "
                f"exceeds mean_precip {self.mean_precip}"
            )

    @property
    def seasonal_mean(self) -> float:
        """
        Mean of the seasonal component.
        """
        return self.mean_precip - self.storm_rate * self.storm_scale


@dataclass(frozen=True)
class SoilParams:
    """
    Bucket capacity S_cap (mm), threshold fraction, quickflow and baseflow
    coefficients.
    """

    capacity: float = 150.0
    threshold: float = 0.5
    quickflow: float = 0.3
    baseflow: float = 0.02

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError(f"capacity must be > 0, got {self.capacity}")
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must be in (0, 1), got {self.threshold}")
        if not 0 < self.quickflow <= 1:
            raise ValueError(f"quickflow must be in (0, 1], got {self.quickflow}")
        if not 0 <= self.baseflow < 1:
            raise ValueError(f"baseflow must be in [0, 1), got {self.baseflow}")

    @property
    def threshold_storage(self) -> float:
        """
        theta * S_cap, the storage above which quickflow starts.
        """
        return self.threshold * self.capacity


@dataclass(frozen=True)
class RoutingParams:
    """
    Delay in days per distance unit and the gauge noise stddev fraction.
    """

    delay_per_unit: float = 0.3
    noise: float = 0.05
    unit_constant: float = UNIT_CONSTANT

    def __post_init__(self) -> None:
        if self.delay_per_unit < 0:
            raise ValueError(f"delay_per_unit must be >= 0, got {self.delay_per_unit}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if self.unit_constant <= 0:
            raise ValueError(f"unit_constant must be > 0, got {self.unit_constant}")


@dataclass(frozen=True)
class SynthSpec:
    """
    Everything needed to generate one watershed; generation is a pure
    function of this object.
    """

    name: str
    n_grids: int
    seed: int
    days: int = 6200
    climate: ClimateParams = field(default_factory=ClimateParams)
    soil: SoilParams = field(default_factory=SoilParams)
    routing: RoutingParams = field(default_factory=RoutingParams)
    start: date = date(2000, 1, 1)

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("a synthetic watershed needs a name")
        if self.n_grids < 1:
            raise ValueError(f"{self.name}: n_grids must be >= 1, got {self.n_grids}")
        if self.days < 30:
            raise ValueError(f"{self.name}: days must be >= 30, got {self.days}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"{self.name}: seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class BucketState:
    """
    Soil storage S (mm), one entry per grid.
    """

    storage: Tensor

    def __post_init__(self) -> None:
        if np.any(self.storage < 0):
            raise ValueError("bucket storage must be >= 0")


def seasonal_precip(climate: ClimateParams, days: int) -> Tensor:
    """
    Seasonal component of the precipitation series for days 0 .. days-1.
    """
    steps = np.arange(days, dtype=np.float64)
    cycle = np.sin(2.0 * np.pi * (steps - climate.phase) / DAYS_PER_YEAR)
    return climate.seasonal_mean * (1.0 + climate.amplitude * cycle)


def gen_precip(spec: SynthSpec, grid: GridCell, rng: np.random.Generator) -> Tensor:
    """
    Daily precipitation of one grid: the seasonal component plus storms
    scaled by a per-grid factor in [0.9, 1.1], clamped at 0.
    """
    climate = spec.climate
    factor = rng.uniform(0.9, 1.1)
    arrivals = rng.random(spec.days) < climate.storm_rate
    magnitudes = rng.exponential(climate.storm_scale, spec.days)
    LOG.debug("%s grid %d: storm factor %.4f", spec.name, grid.grid_id, factor)
    storms = np.where(arrivals, magnitudes, 0.0) * factor
    return np.maximum(0.0, seasonal_precip(climate, spec.days) + storms)


def bucket_step(
    storage: ArrayLike, precip: ArrayLike, soil: SoilParams
) -> Tuple[Tensor, Tensor]:
    """
    One daily update of the soil bucket, elementwise over grids.

    quick = k * max(0, S + p - theta S_cap)
    base  = b * min(S + p, theta S_cap)
    S'    = min(S_cap, S + p - quick - base)

    Returns (S', runoff).
    """
    water = np.asarray(storage, dtype=np.float64) + np.asarray(precip, dtype=np.float64)
    quick = soil.quickflow * np.maximum(0.0, water - soil.threshold_storage)
    base = soil.baseflow * np.minimum(water, soil.threshold_storage)
    runoff = quick + base
    return np.minimum(soil.capacity, water - runoff), runoff


def simulate_runoff(
    precip: ArrayLike, soil: SoilParams, state: Optional[BucketState] = None
) -> Tuple[Tensor, BucketState]:
    """
    Run the bucket over precip [L x T] from `state` (empty buckets by
    default). Returns runoff [L x T] and the final state.
    """
    values = np.asarray(precip, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"precip must be [L x T], got shape {values.shape}")
    storage = np.zeros(values.shape[0]) if state is None else np.array(state.storage)
    if storage.shape != (values.shape[0],):
        raise ShapeError(f"bucket state has {storage.shape} entries for L={values.shape[0]}")
    runoff = np.empty_like(values)
    for day in range(values.shape[1]):
        storage, runoff[:, day] = bucket_step(storage, values[:, day], soil)
    return runoff, BucketState(storage)


def grid_delays(grids: Sequence[GridCell], routing: RoutingParams) -> np.ndarray:
    """
    Per-grid routing delay in whole days, round-half-up of delay * distance.
    """
    distances = np.array([grid.dist_to_river for grid in grids], dtype=np.float64)
    return np.floor(routing.delay_per_unit * distances + 0.5).astype(np.int64)


def route_discharge(
    runoff: ArrayLike,
    grids: Sequence[GridCell],
    routing: RoutingParams,
    rng: np.random.Generator,
) -> Tensor:
    """
    Delay each grid's runoff by its routing delay, sum at the gauge, convert
    units and apply mean-one log-normal gauge noise. Days before a grid's
    first delayed arrival receive nothing from it; runoff delayed past the
    last day is lost.
    """
    values = np.asarray(runoff, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(grids):
        raise ShapeError(
            f"runoff must be [L x T] with L={len(grids)} grids, got shape {values.shape}"
        )
    days = values.shape[1]
    delays = grid_delays(grids, routing)
    discharge = np.zeros(days)
    for delay in np.unique(delays):
        if delay >= days:
            continue
        rows = delays == delay
        discharge[delay:] += values[rows, : days - delay].sum(axis=0)
    discharge *= routing.unit_constant
    sigma = routing.noise
    discharge *= np.exp(sigma * rng.standard_normal(days) - sigma**2 / 2.0)
    return discharge


def place_grids(n_grids: int, rng: np.random.Generator) -> Tuple[GridCell, ...]:
    """
    Jittered square lattice; distance to river uniform in [0.5, 10].
    """
    side = math.ceil(math.sqrt(n_grids))
    jitter = rng.uniform(-0.25, 0.25, (n_grids, 2))
    distances = rng.uniform(0.5, 10.0, n_grids)
    return tuple(
        GridCell(
            grid_id=index,
            x=float(index % side + jitter[index, 0]),
            y=float(index // side + jitter[index, 1]),
            dist_to_river=float(distances[index]),
        )
        for index in range(n_grids)
    )


def generate_watershed(spec: SynthSpec) -> WatershedDataset:
    """
    Generate the dataset of `spec`: grids, precipitation, bucket runoff and
    routed discharge. The same spec always yields bit-identical data.
    """
    layout_seq, noise_seq, *grid_seqs = np.random.SeedSequence(spec.seed).spawn(
        spec.n_grids + 2
    )
    grids = place_grids(spec.n_grids, np.random.default_rng(layout_seq))
    precip = np.stack(
        [
            gen_precip(spec, grid, np.random.default_rng(stream))
            for grid, stream in zip(grids, grid_seqs)
        ]
    )
    runoff, _ = simulate_runoff(precip, spec.soil)
    discharge = route_discharge(runoff, grids, spec.routing, np.random.default_rng(noise_seq))
    dates = tuple(spec.start + timedelta(days=offset) for offset in range(spec.days))
    LOG.info("generated watershed %s: L=%d, T=%d", spec.name, spec.n_grids, spec.days)
    return WatershedDataset(
        name=spec.name,
        grids=grids,
        dates=dates,
        precip=precip,
        runoff=runoff,
        discharge=discharge,
    )


def related_spec(base: SynthSpec, name: str, n_grids: int, seed: int) -> SynthSpec:
    """
    A neighbouring watershed: same soil and routing, climate phase shifted by
    at most 15 days, its own grid count and seed.
    """
    rng = np.random.default_rng(seed)
    climate = replace(base.climate, phase=base.climate.phase + rng.uniform(-15.0, 15.0))
    return replace(base, name=name, n_grids=n_grids, seed=seed, climate=climate)


def distant_spec(base: SynthSpec, name: str, n_grids: int, seed: int) -> SynthSpec:
    """
    A far-away watershed: soil threshold and quickflow coefficient redrawn,
    seasonal amplitude and phase redrawn.
    """
    rng = np.random.default_rng(seed)
    soil = replace(
        base.soil, threshold=rng.uniform(0.2, 0.8), quickflow=rng.uniform(0.1, 0.6)
    )
    climate = replace(
        base.climate,
        amplitude=rng.uniform(0.1, 0.8),
        phase=rng.uniform(0.0, DAYS_PER_YEAR),
    )
    return replace(base, name=name, n_grids=n_grids, seed=seed, soil=soil, climate=climate)


@dataclass(frozen=True)
class WatershedDecl:
    """
    A declared watershed of an experiment, written `name:grids[:role]`.
    """

    name: str
    n_grids: int
    role: str = "source"

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"watershed {self.name}: role must be one of {ROLES}")
        if self.n_grids < 1:
            raise ValueError(f"watershed {self.name}: grids must be >= 1")

    @classmethod
    def parse(cls, text: str, role: Optional[str] = None) -> WatershedDecl:
        """
        Parse `name:grids` or `name:grids:role`.
        """
        parts = [part.strip() for part in text.split(":")]
        if len(parts) not in (2, 3) or not parts[0]:
            raise ValueError(f"watershed declaration must be name:grids[:role], got {text!r}")
        try:
            n_grids = int(parts[1])
        except ValueError as exc:
            raise ValueError(f"watershed declaration {text!r}: grids must be an integer") from exc
        if len(parts) == 3:
            role = parts[2]
        return cls(parts[0], n_grids, role or "source")

    def __str__(self) -> str:
        return f"{self.name}:{self.n_grids}:{self.role}"


@dataclass(frozen=True, eq=False)
class GeneratedWatershed:
    """
    A generated dataset with the declaration and spec it came from.
    """

    decl: WatershedDecl
    spec: SynthSpec
    dataset: WatershedDataset


def generate_experiment(
    base: SynthSpec, source: WatershedDecl, targets: Sequence[WatershedDecl]
) -> List[GeneratedWatershed]:
    """
    Generate the source watershed and every target. Per-watershed seeds are
    pre-split from base.seed in declaration order; related and distant
    targets are perturbations of the source spec.
    """
    if source.role != "source":
        raise ValueError(f"{source.name} is declared as {source.role}, not as the source")
    names = [source.name] + [target.name for target in targets]
    if len(set(names)) != len(names):
        raise ValueError(f"watershed names must be unique, got {names}")
    seeds = spawn_seeds(base.seed, len(names))
    source_spec = replace(base, name=source.name, n_grids=source.n_grids, seed=seeds[0])
    generated = [GeneratedWatershed(source, source_spec, generate_watershed(source_spec))]
    for target, seed in zip(targets, seeds[1:]):
        if target.role == "related":
            spec = related_spec(source_spec, target.name, target.n_grids, seed)
        elif target.role == "distant":
            spec = distant_spec(source_spec, target.name, target.n_grids, seed)
        else:
            raise ValueError(f"target {target.name} must be related or distant, not {target.role}")
        generated.append(GeneratedWatershed(target, spec, generate_watershed(spec)))
    return generated
