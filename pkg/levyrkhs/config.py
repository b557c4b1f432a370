"""Run configuration: JSON file, voluptuous schema and typed accessors."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Any, cast

import numpy as np
import voluptuous as vol
from numpy.typing import NDArray

from .assembly import SplitPolicy
from .const import (
    DEFAULT_BANDWIDTH_CONSTANT,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_EPS_GAMMA,
    DEFAULT_EPS_LOSS,
    DEFAULT_ETA0,
    DEFAULT_GAMMA0,
    DEFAULT_GRAD_EPS,
    DEFAULT_IC_STD,
    DEFAULT_IOTA,
    DEFAULT_LAMBDA_MAX_EXP,
    DEFAULT_LAMBDA_MIN_EXP,
    DEFAULT_LAMBDA_NUM,
    DEFAULT_MAX_ITERS,
    DEFAULT_SAVGOL_ORDER,
    DEFAULT_SAVGOL_WINDOW,
    DEFAULT_SIGMA,
    DEFAULT_STOP_WINDOW,
    DEFAULT_V0,
    DEFAULT_STUDY_BANDWIDTH_CONSTANTS,
    DEFAULT_STUDY_MESHES,
    RUN_ID_LENGTH,
)
from .ensemble_datagen import EnsembleConfig, KdeConfig, KdeMethod
from .exceptions import ConfigurationError, LevyRkhsError
from .fpe_datagen import DifferenceSpacing, FpeConfig
from .hyperselect import BilevelConfig, PenaltyNorm, SelectionMethod, default_lambda_grid
from .model import (
    DriftKind,
    DriftSpec,
    JumpLaw,
    LevyDensitySpec,
    LevyKind,
    ProblemDomain,
    SamplerKind,
)

_LOGGER = logging.getLogger(__name__)


class Experiment(StrEnum):
    """Pipelines the runner can execute."""

    FPE_GENERATE = "fpe-generate"
    ENSEMBLE_GENERATE = "ensemble-generate"
    ASSEMBLE = "assemble"
    ESTIMATE = "estimate"
    CONVERGENCE_STUDY = "convergence-study"
    NORM_COMPARISON = "norm-comparison"
    METHOD_COMPARISON = "method-comparison"
    BANDWIDTH_STUDY = "bandwidth-study"


class DataSourceKind(StrEnum):
    """Where the density data of a run come from."""

    FPE = "fpe"
    ENSEMBLE = "ensemble"
    DATASET = "dataset"
    SYSTEM = "system"


def _positive(kind: type = float) -> vol.All:
    return vol.All(vol.Coerce(kind), vol.Range(min=0, min_included=False))


def _nonnegative(kind: type = float) -> vol.All:
    return vol.All(vol.Coerce(kind), vol.Range(min=0))


_REALS = [vol.Coerce(float)]

DOMAIN_SCHEMA = vol.Schema(
    {
        vol.Optional("L", default=5.0): _positive(),
        vol.Optional("R0", default=2.0): _positive(),
        vol.Optional("dx", default=0.01): _positive(),
    }
)

DRIFT_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=DriftKind.LINEAR.value): vol.In([k.value for k in DriftKind]),
        vol.Optional("slope", default=-0.5): vol.Coerce(float),
        vol.Optional("grid"): _REALS,
        vol.Optional("values"): _REALS,
    }
)

LEVY_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=LevyKind.GAUSSIAN_DECAY.value): vol.In(
            [k.value for k in LevyKind]
        ),
        vol.Optional("grid"): _REALS,
        vol.Optional("values"): _REALS,
    }
)

DATA_SCHEMA = vol.Schema(
    {
        vol.Optional("source", default=DataSourceKind.FPE.value): vol.In(
            [k.value for k in DataSourceKind]
        ),
        vol.Optional("path"): str,
    }
)

FPE_SCHEMA = vol.Schema(
    {
        vol.Optional("solver_dx", default=0.005): _positive(),
        vol.Optional("solver_dt", default=2.5e-5): _positive(),
        vol.Optional("horizon", default=1.0): _positive(),
        vol.Optional("n_snapshots", default=30): _positive(int),
        vol.Optional("ic_std", default=DEFAULT_IC_STD): _positive(),
        vol.Optional("difference_spacing", default=DifferenceSpacing.OBSERVATION.value): vol.In(
            [k.value for k in DifferenceSpacing]
        ),
    }
)

JUMP_SCHEMA = vol.Schema(
    {
        vol.Required("rate"): _nonnegative(),
        vol.Required("sampler"): vol.In([k.value for k in SamplerKind]),
        vol.Optional("loc", default=0.0): vol.Coerce(float),
        vol.Optional("scale", default=1.0): _positive(),
    }
)

ENSEMBLE_SCHEMA = vol.Schema(
    {
        vol.Optional("n_paths", default=1_000_000): _positive(int),
        vol.Optional("dt", default=0.05): _positive(),
        vol.Optional("horizon", default=5.0): _positive(),
        vol.Optional("x0", default=0.0): vol.Coerce(float),
        vol.Optional("chunk_size", default=DEFAULT_CHUNK_SIZE): _positive(int),
        vol.Optional("dump_samples", default=False): bool,
        vol.Optional("jump"): JUMP_SCHEMA,
    }
)

KDE_SCHEMA = vol.Schema(
    {
        vol.Optional("bandwidth_constant", default=DEFAULT_BANDWIDTH_CONSTANT): _positive(),
        vol.Optional("bandwidth"): _positive(),
        vol.Optional("window", default=DEFAULT_SAVGOL_WINDOW): _positive(int),
        vol.Optional("order", default=DEFAULT_SAVGOL_ORDER): _nonnegative(int),
        vol.Optional("method", default="auto"): vol.In(["auto", "exact", "binned"]),
    }
)

ASSEMBLY_SCHEMA = vol.Schema(
    {
        vol.Optional("sigma"): _nonnegative(),
        vol.Optional("split", default=SplitPolicy.INTERLEAVE.value): vol.In(
            [k.value for k in SplitPolicy]
        ),
        vol.Optional("skip_snapshots", default=0): _nonnegative(int),
    }
)

BILEVEL_SCHEMA = vol.Schema(
    {
        vol.Optional("eta0", default=DEFAULT_ETA0): _positive(),
        vol.Optional("iota", default=DEFAULT_IOTA): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional("max_iters", default=DEFAULT_MAX_ITERS): _positive(int),
        vol.Optional("grad_eps", default=DEFAULT_GRAD_EPS): _positive(),
        vol.Optional("stop_window", default=DEFAULT_STOP_WINDOW): _positive(int),
        vol.Optional("eps_gamma", default=DEFAULT_EPS_GAMMA): _positive(),
        vol.Optional("eps_loss", default=DEFAULT_EPS_LOSS): _positive(),
        vol.Optional("gamma0", default=DEFAULT_GAMMA0): vol.Coerce(float),
        vol.Optional("v0", default=DEFAULT_V0): vol.Coerce(float),
    }
)

LAMBDA_GRID_SCHEMA = vol.Schema(
    {
        vol.Optional("min_exponent", default=DEFAULT_LAMBDA_MIN_EXP): vol.Coerce(float),
        vol.Optional("max_exponent", default=DEFAULT_LAMBDA_MAX_EXP): vol.Coerce(float),
        vol.Optional("num", default=DEFAULT_LAMBDA_NUM): _positive(int),
    }
)

SELECTION_SCHEMA = vol.Schema(
    {
        vol.Optional("method", default=SelectionMethod.BILEVEL.value): vol.In(
            [k.value for k in SelectionMethod]
        ),
        vol.Optional("norm", default=PenaltyNorm.RKHS.value): vol.In(
            [k.value for k in PenaltyNorm]
        ),
        vol.Optional("bilevel", default={}): BILEVEL_SCHEMA,
        vol.Optional("lambda_grid", default={}): LAMBDA_GRID_SCHEMA,
    }
)

STUDY_SCHEMA = vol.Schema(
    {
        vol.Optional("meshes", default=list(DEFAULT_STUDY_MESHES)): vol.All(
            [_positive()], vol.Length(min=1)
        ),
        vol.Optional("methods", default=[m.value for m in SelectionMethod]): vol.All(
            [vol.In([m.value for m in SelectionMethod])], vol.Length(min=1)
        ),
        vol.Optional("norms", default=[n.value for n in PenaltyNorm]): vol.All(
            [vol.In([n.value for n in PenaltyNorm])], vol.Length(min=1)
        ),
        vol.Optional(
            "bandwidth_constants", default=list(DEFAULT_STUDY_BANDWIDTH_CONSTANTS)
        ): vol.All([_positive()], vol.Length(min=1), vol.Unique()),
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Required("experiment"): vol.In([e.value for e in Experiment]),
        vol.Optional("seed", default=0): vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)),
        vol.Optional("output_dir", default="runs"): str,
        vol.Optional("run_id"): vol.All(str, vol.Match(r"^[A-Za-z0-9_.-]+$")),
        vol.Optional("workers", default=1): _positive(int),
        vol.Optional("domain", default={}): DOMAIN_SCHEMA,
        vol.Optional("drift", default={}): DRIFT_SCHEMA,
        vol.Optional("levy", default={}): LEVY_SCHEMA,
        vol.Optional("data", default={}): DATA_SCHEMA,
        vol.Optional("fpe", default={}): FPE_SCHEMA,
        vol.Optional("ensemble", default={}): ENSEMBLE_SCHEMA,
        vol.Optional("kde", default={}): KDE_SCHEMA,
        vol.Optional("assembly", default={}): ASSEMBLY_SCHEMA,
        vol.Optional("selection", default={}): SELECTION_SCHEMA,
        vol.Optional("study", default={}): STUDY_SCHEMA,
    }
)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A validated run configuration with typed views of its blocks."""

    data: dict[str, Any]
    source_path: Path | None = None

    @property
    def experiment(self) -> Experiment:
        """Requested pipeline."""
        return Experiment(self.data["experiment"])

    @property
    def seed(self) -> int:
        """Seed of every random stream in the run."""
        return int(self.data["seed"])

    @property
    def workers(self) -> int:
        """Worker threads for concurrent runs and ensemble chunks."""
        return int(self.data["workers"])

    @property
    def data_source(self) -> DataSourceKind:
        """Origin of the density data."""
        return DataSourceKind(self.data["data"]["source"])

    @property
    def data_path(self) -> Path | None:
        """Input dataset or system path, resolved against the config file."""
        raw = self.data["data"].get("path")
        if raw is None:
            return None
        path = Path(raw)
        if not path.is_absolute() and self.source_path is not None:
            path = self.source_path.parent / path
        return path

    @property
    def output_root(self) -> Path:
        """Base output directory."""
        return Path(self.data["output_dir"])

    @property
    def run_id(self) -> str:
        """Explicit run id, or a hash of the canonical configuration."""
        explicit = self.data.get("run_id")
        if explicit:
            return str(explicit)
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:RUN_ID_LENGTH]

    @property
    def output_dir(self) -> Path:
        """<output_dir>/<experiment>/<run-id>."""
        return self.output_root / self.experiment.value / self.run_id

    def canonical_json(self) -> str:
        """Sorted, compact JSON of the resolved configuration."""
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def domain(self) -> ProblemDomain:
        """Problem domain at the configured observation mesh."""
        block = self.data["domain"]
        return ProblemDomain(L=block["L"], R0=block["R0"], dx=block["dx"])

    @property
    def drift(self) -> DriftSpec:
        """Drift of the model."""
        block = self.data["drift"]
        kind = DriftKind(block["kind"])
        if kind is DriftKind.LINEAR:
            return DriftSpec.linear(block["slope"])
        if kind is DriftKind.SINE:
            return DriftSpec.sine()
        return DriftSpec.tabulated(block.get("grid", []), block.get("values", []))

    @property
    def levy(self) -> LevyDensitySpec:
        """True Levy density of the model."""
        block = self.data["levy"]
        kind = LevyKind(block["kind"])
        if kind is LevyKind.GAUSSIAN_DECAY:
            return LevyDensitySpec.gaussian_decay()
        if kind is LevyKind.EXPONENTIAL_DECAY:
            return LevyDensitySpec.exponential_decay()
        return LevyDensitySpec.tabulated(block.get("grid", []), block.get("values", []))

    def fpe_config(self, domain: ProblemDomain | None = None) -> FpeConfig:
        """FPE solver setup, optionally for another observation domain."""
        block = self.data["fpe"]
        return FpeConfig(
            domain=domain or self.domain,
            solver_dx=block["solver_dx"],
            solver_dt=block["solver_dt"],
            horizon=block["horizon"],
            n_snapshots=block["n_snapshots"],
            ic_std=block["ic_std"],
            difference_spacing=DifferenceSpacing(block["difference_spacing"]),
        )

    def jump_law(self) -> JumpLaw:
        """Explicit ensemble jump law, or the one paired with the Levy density."""
        block = self.data["ensemble"].get("jump")
        if block is None:
            return self.levy.jump_law()
        return JumpLaw(
            rate=block["rate"],
            sampler=SamplerKind(block["sampler"]),
            loc=block["loc"],
            scale=block["scale"],
        )

    def ensemble_config(self) -> EnsembleConfig:
        """Monte-Carlo setup."""
        block = self.data["ensemble"]
        return EnsembleConfig(
            n_paths=block["n_paths"],
            dt=block["dt"],
            horizon=block["horizon"],
            seed=self.seed,
            jump=self.jump_law(),
            drift=self.drift,
            x0=block["x0"],
            chunk_size=block["chunk_size"],
            workers=self.workers,
        )

    def kde_config(
        self, domain: ProblemDomain | None = None, bandwidth_constant: float | None = None
    ) -> KdeConfig:
        """KDE setup on the observation grid, optionally with another constant c."""
        block = self.data["kde"]
        return KdeConfig(
            grid=(domain or self.domain).x_grid,
            bandwidth_constant=(
                block["bandwidth_constant"] if bandwidth_constant is None else bandwidth_constant
            ),
            window=block["window"],
            order=block["order"],
            bandwidth=block.get("bandwidth"),
        )

    @property
    def kde_method(self) -> KdeMethod:
        """KDE evaluation method."""
        return cast(KdeMethod, self.data["kde"]["method"])

    @property
    def dump_samples(self) -> bool:
        """Whether ensemble runs dump raw samples."""
        return bool(self.data["ensemble"]["dump_samples"])

    def sigma(self) -> float:
        """Diffusion constant used by f~; ensemble data default to pure jumps."""
        explicit = self.data["assembly"].get("sigma")
        if explicit is not None:
            return float(explicit)
        return 0.0 if self.data_source is DataSourceKind.ENSEMBLE else DEFAULT_SIGMA

    @property
    def split_policy(self) -> SplitPolicy:
        """Train/validation split policy."""
        return SplitPolicy(self.data["assembly"]["split"])

    @property
    def skip_snapshots(self) -> int:
        """Leading snapshots excluded from assembly."""
        return int(self.data["assembly"]["skip_snapshots"])

    @property
    def method(self) -> SelectionMethod:
        """Selector of single-estimate runs."""
        return SelectionMethod(self.data["selection"]["method"])

    @property
    def norm(self) -> PenaltyNorm:
        """Penalty norm of single-estimate runs."""
        return PenaltyNorm(self.data["selection"]["norm"])

    @property
    def bilevel(self) -> BilevelConfig:
        """Bilevel optimizer settings."""
        return BilevelConfig(**self.data["selection"]["bilevel"])

    @property
    def lambda_grid(self) -> NDArray[np.float64]:
        """Grid for the L-curve and GCV selectors."""
        block = self.data["selection"]["lambda_grid"]
        return default_lambda_grid(block["min_exponent"], block["max_exponent"], block["num"])

    @property
    def meshes(self) -> list[float]:
        """Observation meshes of a study."""
        return [float(v) for v in self.data["study"]["meshes"]]

    @property
    def study_methods(self) -> list[SelectionMethod]:
        """Selectors compared by a method study."""
        return [SelectionMethod(m) for m in self.data["study"]["methods"]]

    @property
    def study_norms(self) -> list[PenaltyNorm]:
        """Norms compared by a norm study."""
        return [PenaltyNorm(n) for n in self.data["study"]["norms"]]

    @property
    def bandwidth_constants(self) -> list[float]:
        """Constants c of h = c (J dt^2)^(-1/5) swept by a bandwidth study."""
        return [float(v) for v in self.data["study"]["bandwidth_constants"]]


def parse_config(data: Any, text: str = "", origin: str = "<config>") -> RunConfig:
    """Validate a decoded configuration object."""
    try:
        resolved = CONFIG_SCHEMA(data)
    except vol.MultipleInvalid as err:
        messages = [_describe_invalid(inner, text, origin) for inner in err.errors]
        raise ConfigurationError("; ".join(messages)) from err
    except vol.Invalid as err:
        raise ConfigurationError(_describe_invalid(err, text, origin)) from err

    source_path = None if origin == "<config>" else Path(origin)
    config = RunConfig(data=resolved, source_path=source_path)
    _check_semantics(config, text, origin)
    return config


def load_config(path: str | Path) -> RunConfig:
    """Read, parse and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err
    config = parse_config(data, text, str(path))
    _LOGGER.debug("Loaded %s config from %s", config.experiment, path)
    return config


def _check_semantics(config: RunConfig, text: str, origin: str) -> None:
    """Build every typed block once so invalid combinations fail at load time."""
    checks: list[tuple[list[str], Any]] = [
        (["domain"], lambda: config.domain),
        (["drift"], lambda: config.drift),
        (["levy"], lambda: config.levy),
        (["selection", "bilevel"], lambda: config.bilevel),
        (["selection", "lambda_grid"], lambda: config.lambda_grid),
        (["kde"], config.kde_config),
    ]
    source = config.data_source
    if source is DataSourceKind.FPE or config.experiment is Experiment.FPE_GENERATE:
        checks.append((["fpe"], config.fpe_config))
    if source is DataSourceKind.ENSEMBLE or config.experiment is Experiment.ENSEMBLE_GENERATE:
        checks.append((["ensemble"], config.ensemble_config))
    for key_path, build in checks:
        try:
            build()
        except LevyRkhsError as err:
            raise ConfigurationError(
                f"{_location(text, origin, key_path)}: {'.'.join(key_path)}: {err}"
            ) from err

    if source in (DataSourceKind.DATASET, DataSourceKind.SYSTEM):
        path = config.data_path
        where = _location(text, origin, ["data", "path"])
        if path is None:
            raise ConfigurationError(f"{where}: data.path is required for source {source}")
        if not path.exists():
            raise ConfigurationError(f"{where}: data.path {path} does not exist")
        if source is DataSourceKind.SYSTEM and config.experiment not in (
            Experiment.ESTIMATE,
            Experiment.NORM_COMPARISON,
        ):
            raise ConfigurationError(
                f"{where}: a stored system can only feed estimate or norm-comparison runs"
            )

    if config.experiment is Experiment.BANDWIDTH_STUDY:
        if source is not DataSourceKind.ENSEMBLE:
            where = _location(text, origin, ["data", "source"])
            raise ConfigurationError(f"{where}: a bandwidth study needs data.source ensemble")
        if config.data["kde"].get("bandwidth") is not None:
            where = _location(text, origin, ["kde", "bandwidth"])
            raise ConfigurationError(
                f"{where}: kde.bandwidth fixes h; a bandwidth study sweeps study.bandwidth_constants"
            )


def _describe_invalid(err: vol.Invalid, text: str, origin: str) -> str:
    keys = [str(p) for p in err.path]
    dotted = ".".join(keys) or "<root>"
    return f"{_location(text, origin, keys)}: {dotted}: {err.error_message}"


def _location(text: str, origin: str, keys: list[str]) -> str:
    """Return origin:line for the innermost key of a path found in text."""
    line = _key_line(text, keys)
    return f"{origin}:{line}" if line else origin


def _key_line(text: str, keys: list[str]) -> int | None:
    pos, found = 0, None
    for key in keys:
        if key.isdigit():
            continue
        idx = text.find(json.dumps(key), pos)
        if idx < 0:
            break
        pos, found = idx, idx
    if found is None:
        return None
    return text.count("\n", 0, found) + 1
