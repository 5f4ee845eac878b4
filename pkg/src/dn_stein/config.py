"""Defaults, budgets and experiment configuration loading."""

import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict

from .errors import DomainError

# Randomness
DEFAULT_SEED = 20180101
MASK64 = (1 << 64) - 1

# Quadrature
DEFAULT_QUAD_TOL = 1e-10
DEFAULT_QUAD_REL_TOL = 1e-12
MAX_QUAD_EVALUATIONS = 1_000_000
GK21_POINTS = 21
# phi(x) = exp(-x^2/2) drops below 1e-16 here
GAUSSIAN_TRUNCATION = math.sqrt(2.0 * math.log(1e16))

# Box probabilities
DEFAULT_BOX_TOL = 1e-6
QMC_RANDOMIZATIONS = 16
QMC_INITIAL_POINTS = 1 << 10
QMC_MAX_POINTS = 1 << 17
DEFAULT_TABLE_TOL = 1e-5
QMC_CELL_CHUNK = 256
# ndtr underflows to 0 below this
BOUND_CLIP = 37.5
PD_RELATIVE_TOL = 1e-10
SYMMETRY_TOL = 1e-12

# Total variation
DEFAULT_EPSILON_TAIL = 1e-9
DEFAULT_BOOTSTRAP = 200
MIN_EMPIRICAL_SAMPLES = 1_000
MIN_SHIFT_SAMPLES = 10_000

# Oracles and Monte Carlo
COLORING_ENUMERATION_BUDGET = 2_000_000
MARKOV_DP_BUDGET = 50_000_000
MIN_MOMENT_REPLICATES = 100
MOMENT_BATCHES = 10
DEFAULT_MARKOV_TOL = 1e-12
REPLICATE_CHUNK = 1_000


def load_config(path: Path) -> Any:
    """Load an experiment configuration from a TOML or JSON file."""
    from .models import ExperimentConfig

    raw = read_config_mapping(path)
    return ExperimentConfig.model_validate(raw)


def read_config_mapping(path: Path) -> Dict[str, Any]:
    """Read the raw key-value mapping of a configuration file."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as e:
        raise DomainError(f"Cannot read config '{path}': {e}") from e

    if path.suffix == ".json":
        return json.loads(text)
    if path.suffix == ".toml":
        return tomllib.loads(text.decode("utf-8"))
    raise DomainError(f"Unsupported config format '{path.suffix}' for '{path}'")


def serialize_report(report: Dict[str, Any]) -> str:
    """Serialize a report mapping to a JSON string."""
    return json.dumps(report, indent=2)
