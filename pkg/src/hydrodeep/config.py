"""
Run configuration: a flat `key = value` file.

Keys are grouped by prefix (synth., arch., train., transfer., search.,
paths.). Every key except the seeds has a default in DEFAULTS; seeds must be
given explicitly, in the file or with --seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .data.synth import ClimateParams, RoutingParams, SoilParams, SynthSpec, WatershedDecl
from .network.arch import ARCH_KEYS, ArchError, ArchSpec
from .training import TrainConfig
from .training.search import SearchSpace
from .transfer import TransferMode
from .utils import text_hash

PathLike = Union[str, Path]

SECTIONS = ("synth", "arch", "train", "transfer", "search", "paths")

SEED_KEYS = ("synth.seed", "arch.seed", "train.seed")

DEFAULTS: Dict[str, str] = {
    "synth.days": "6200",
    "synth.source": "w13:29",
    "synth.targets": (
        "w14:34:related,w15:39:related,w4:61:distant,w10:65:distant,w23:32:distant"
    ),
    "synth.mean_precip": "2.5",
    "synth.amplitude": "0.4",
    "synth.phase": "100",
    "synth.storm_rate": "0.08",
    "synth.storm_scale": "15.0",
    "synth.capacity": "150.0",
    "synth.threshold": "0.5",
    "synth.quickflow": "0.3",
    "synth.baseflow": "0.02",
    "synth.delay_per_unit": "0.3",
    "synth.noise": "0.05",
    "arch.conv": "16:3,32:3",
    "arch.lstm": "32",
    "arch.target_units": "8",
    "arch.head": "32,1",
    "arch.variant": "hydrodeep",
    "train.iterations": "300",
    "train.batch_size": "32",
    "train.lr": "0.001",
    "train.beta1": "0.9",
    "train.beta2": "0.999",
    "train.eps": "1e-08",
    "train.train_fraction": "0.7",
    "train.validation_fraction": "0.15",
    "transfer.iterations": "20",
    "transfer.modes": "T-HD-1,T-HD-2,T-HD-3,T-HD-4",
    "transfer.workers": "1",
    "transfer.replicates": "1",
    "search.trials": "20",
    "search.iterations": "30",
    "search.seed": "0",
    "search.lr_min": "0.0001",
    "search.lr_max": "0.01",
    "search.batch_sizes": "16,32,64",
    "search.workers": "1",
    "paths.run_dir": "runs",
    "paths.data_dir": "data",
}

KNOWN_KEYS = frozenset(DEFAULTS) | frozenset(SEED_KEYS)


class ConfigError(ValueError):
    """
    Invalid run configuration. The message names the file, line and key
    when they are known.
    """

    def __init__(
        self,
        message: str,
        path: Optional[PathLike] = None,
        line: Optional[int] = None,
        key: Optional[str] = None,
    ):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(location + (f"{key}: " if key else "") + message)
        self.path = path
        self.line = line
        self.key = key


@dataclass
class RunConfig:
    """
    Explicitly set configuration values. Lookups fall back to DEFAULTS.
    """

    values: Dict[str, str] = field(default_factory=dict)
    path: Optional[Path] = None

    @classmethod
    def parse(cls, text: str, path: Optional[PathLike] = None) -> RunConfig:
        """
        Parse configuration text. Blank lines and `#` comments are skipped.
        """
        values: Dict[str, str] = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"expected key = value, got {raw!r}", path, number)
            if key not in KNOWN_KEYS:
                raise ConfigError("unknown key", path, number, key)
            if key in values:
                raise ConfigError("key set twice", path, number, key)
            values[key] = value.strip()
        return cls(values, Path(path) if path is not None else None)

    @classmethod
    def load(cls, path: PathLike) -> RunConfig:
        """
        Read and parse a configuration file.
        """
        source = Path(path)
        try:
            text = source.read_text(encoding="utf8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration ({exc.strerror})", source) from exc
        return cls.parse(text, source)

    def dumps(self) -> str:
        """
        Canonical text: explicit values, sorted by key.
        """
        return "".join(f"{key} = {self.values[key]}\n" for key in sorted(self.values))

    def resolved(self) -> Dict[str, str]:
        """
        Every known key with its effective value; unset seeds are omitted.
        """
        merged = dict(DEFAULTS)
        merged.update(self.values)
        return dict(sorted(merged.items()))

    @property
    def config_hash(self) -> str:
        """
        SHA-256 of the canonical resolved configuration.
        """
        return text_hash("".join(f"{key} = {value}\n" for key, value in self.resolved().items()))

    def with_seed(self, seed: int) -> RunConfig:
        """
        A copy with every seed key, search.seed included, set to `seed`.
        """
        values = dict(self.values)
        for key in SEED_KEYS + ("search.seed",):
            values[key] = str(seed)
        return RunConfig(values, self.path)

    def get(self, key: str) -> str:
        """
        Effective value of a key.
        """
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", self.path, key=key)
        if key in self.values:
            return self.values[key]
        if key in DEFAULTS:
            return DEFAULTS[key]
        raise ConfigError("required key is missing (seeds have no default)", self.path, key=key)

    def get_int(self, key: str) -> int:
        """
        Effective value of an integer key.
        """
        value = self.get(key)
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"expected an integer, got {value!r}", self.path, key=key) from exc

    def get_float(self, key: str) -> float:
        """
        Effective value of a float key.
        """
        value = self.get(key)
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"expected a number, got {value!r}", self.path, key=key) from exc

    def get_list(self, key: str) -> List[str]:
        """
        Effective value of a comma-separated key.
        """
        return [item.strip() for item in self.get(key).split(",") if item.strip()]

    def synth_base(self) -> SynthSpec:
        """
        Base synthetic spec; name and grid count come from the declarations.
        """
        try:
            return SynthSpec(
                name="base",
                n_grids=1,
                seed=self.get_int("synth.seed"),
                days=self.get_int("synth.days"),
                climate=ClimateParams(
                    mean_precip=self.get_float("synth.mean_precip"),
                    amplitude=self.get_float("synth.amplitude"),
                    phase=self.get_float("synth.phase"),
                    storm_rate=self.get_float("synth.storm_rate"),
                    storm_scale=self.get_float("synth.storm_scale"),
                ),
                soil=SoilParams(
                    capacity=self.get_float("synth.capacity"),
                    threshold=self.get_float("synth.threshold"),
                    quickflow=self.get_float("synth.quickflow"),
                    baseflow=self.get_float("synth.baseflow"),
                ),
                routing=RoutingParams(
                    delay_per_unit=self.get_float("synth.delay_per_unit"),
                    noise=self.get_float("synth.noise"),
                ),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), self.path, key="synth") from exc

    def watersheds(self) -> Tuple[WatershedDecl, List[WatershedDecl]]:
        """
        The source declaration and the target declarations.
        """
        try:
            source = WatershedDecl.parse(self.get("synth.source"), "source")
            targets = [WatershedDecl.parse(item) for item in self.get_list("synth.targets")]
        except ValueError as exc:
            raise ConfigError(str(exc), self.path, key="synth.targets") from exc
        for target in targets:
            if target.role == "source":
                raise ConfigError(
                    f"target {target.name} needs a related or distant role",
                    self.path,
                    key="synth.targets",
                )
        return source, targets

    def arch_spec(self) -> ArchSpec:
        """
        Architecture from the arch.* keys.
        """
        fields = {key: self.get(f"arch.{key}") for key in ARCH_KEYS}
        try:
            return ArchSpec.from_fields(fields)
        except ArchError as exc:
            raise ConfigError(str(exc), self.path, key="arch") from exc

    def train_config(self, iterations: Optional[int] = None) -> TrainConfig:
        """
        Training settings from the train.* keys.
        """
        try:
            return TrainConfig(
                iterations=self.get_int("train.iterations") if iterations is None else iterations,
                batch_size=self.get_int("train.batch_size"),
                lr=self.get_float("train.lr"),
                beta1=self.get_float("train.beta1"),
                beta2=self.get_float("train.beta2"),
                eps=self.get_float("train.eps"),
                seed=self.get_int("train.seed"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), self.path, key="train") from exc

    def split_fractions(self) -> Tuple[float, float]:
        """
        (train_fraction, validation_fraction).
        """
        return self.get_float("train.train_fraction"), self.get_float("train.validation_fraction")

    def transfer_modes(self) -> List[TransferMode]:
        """
        Transfer modes to run, in order.
        """
        try:
            return [TransferMode.parse(item) for item in self.get_list("transfer.modes")]
        except ValueError as exc:
            raise ConfigError(str(exc), self.path, key="transfer.modes") from exc

    def search_space(self) -> SearchSpace:
        """
        Random search settings from the search.* keys.
        """
        try:
            return SearchSpace(
                lr_range=(self.get_float("search.lr_min"), self.get_float("search.lr_max")),
                batch_sizes=tuple(int(item) for item in self.get_list("search.batch_sizes")),
                trials=self.get_int("search.trials"),
                iterations=self.get_int("search.iterations"),
                seed=self.get_int("search.seed"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), self.path, key="search") from exc
