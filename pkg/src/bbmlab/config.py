"""Flat key=value configuration for the experiment runner.

The format is deliberately minimal: one `key = value` pair per line, `#`
comments, no sections, no includes. Every key must be known to the chosen
recipe and every required key must be present, so a config file is a
complete, reproducible description of a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ModelParams, RadiusSchedule, default_dt

__all__ = ["ConfigError", "ExperimentSpec", "RECIPES", "parse_config", "experiment_from_config"]

RECIPES = (
    "theorem1_rate_curve",
    "theorem2_lln_trend",
    "propa_check",
    "expectation_check",
    "confinement_table",
    "eigen_table",
)

_THEOREM_RECIPES = ("theorem1_rate_curve", "theorem2_lln_trend")

_MODEL_KEYS = frozenset(
    {
        "dimension",
        "beta",
        "kappa",
        "t_max",
        "dt",
        "radius.kind",
        "radius.coefficient",
        "radius.exponent",
        "bridge_correction",
        "seed",
        "replicates",
    }
)
_EXPERIMENT_KEYS = _MODEL_KEYS | {
    "recipe",
    "out",
    "grid.kappa",
    "grid.t",
    "grid.d",
    "epsilon",
    "b",
    "t",
}

_RADIUS_KEYS = ("radius.kind", "radius.coefficient", "radius.exponent")

# keys each recipe accepts beyond those it requires
_RECIPE_KEYS = {
    "theorem1_rate_curve": {
        "required": {"beta", "radius.kind", "radius.coefficient", "grid.kappa", "grid.t", "replicates"},
        "optional": {"dimension", "t_max", "dt", "bridge_correction", "seed", "out", "radius.exponent"},
    },
    "theorem2_lln_trend": {
        "required": {"beta", "radius.kind", "radius.coefficient", "grid.t", "replicates"},
        "optional": {"dimension", "t_max", "dt", "bridge_correction", "seed", "out", "radius.exponent", "epsilon"},
    },
    "propa_check": {
        "required": {"beta", "t", "replicates"},
        "optional": {"seed", "out"},
    },
    "expectation_check": {
        "required": {"dimension", "beta", "radius.kind", "radius.coefficient", "t", "replicates"},
        "optional": {"t_max", "dt", "bridge_correction", "seed", "out", "radius.exponent"},
    },
    "confinement_table": {
        "required": {"dimension", "b", "grid.t", "replicates"},
        "optional": {"dt", "bridge_correction", "seed", "out"},
    },
    "eigen_table": {
        "required": set(),
        "optional": {"grid.d", "out"},
    },
}


class ConfigError(ValueError):
    """Validation failure with a machine-parseable code."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


def parse_config(text: str) -> dict[str, str]:
    """Parse flat `key = value` lines into a string map.

    Blank lines and `#` comments are skipped; duplicate and unknown keys
    are errors (unknown keys are checked per recipe downstream, here only
    the global vocabulary is enforced).
    """
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("E_CONFIG_KEY", f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError("E_CONFIG_KEY", f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError("E_CONFIG_KEY", f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError("E_CONFIG_VALUE", f"line {lineno}: empty value for {key!r}")
        out[key] = value
    return out


def _as_float(cfg: dict[str, str], key: str) -> float:
    try:
        value = float(cfg[key])
    except ValueError:
        raise ConfigError("E_CONFIG_VALUE", f"{key} is not a number: {cfg[key]!r}") from None
    if not math.isfinite(value):
        raise ConfigError("E_CONFIG_VALUE", f"{key} must be finite")
    return value


def _as_int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key], 10)
    except ValueError:
        raise ConfigError("E_CONFIG_VALUE", f"{key} is not an integer: {cfg[key]!r}") from None


def _as_bool(cfg: dict[str, str], key: str) -> bool:
    value = cfg[key]
    if value not in ("true", "false"):
        raise ConfigError("E_CONFIG_VALUE", f"{key} must be true or false, got {value!r}")
    return value == "true"


def _as_grid(cfg: dict[str, str], key: str, *, integers: bool = False) -> tuple:
    items = [item.strip() for item in cfg[key].split(",") if item.strip()]
    if not items:
        raise ConfigError("E_CONFIG_VALUE", f"{key} must list at least one value")
    try:
        values = tuple(int(s, 10) if integers else float(s) for s in items)
    except ValueError:
        raise ConfigError("E_CONFIG_VALUE", f"{key} has a non-numeric entry") from None
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("E_CONFIG_VALUE", f"{key} must be strictly increasing")
    return values


def _radius_schedule(cfg: dict[str, str], *, allow_fixed: bool) -> RadiusSchedule:
    kind = cfg["radius.kind"]
    if kind not in ("power", "logarithmic", "fixed"):
        raise ConfigError("E_CONFIG_VALUE", f"radius.kind must be power, logarithmic or fixed, got {kind!r}")
    coefficient = _as_float(cfg, "radius.coefficient")
    if coefficient <= 0:
        raise ConfigError("E_CONFIG_VALUE", "radius.coefficient must be positive")
    if kind == "power":
        if "radius.exponent" not in cfg:
            raise ConfigError("E_CONFIG_KEY", "power schedule needs radius.exponent")
        exponent = _as_float(cfg, "radius.exponent")
        if not (0.0 < exponent < 0.5):
            raise ConfigError(
                "E_SUBDIFFUSIVITY",
                f"subdiffusivity violated: radius.exponent must lie in (0, 1/2), got {exponent}",
            )
        return RadiusSchedule.power(coefficient, exponent)
    if "radius.exponent" in cfg:
        raise ConfigError("E_CONFIG_KEY", f"{kind} schedule takes no radius.exponent")
    if kind == "logarithmic":
        return RadiusSchedule.logarithmic(coefficient)
    if not allow_fixed:
        raise ConfigError("E_FIXED_RADIUS", "this recipe needs a growing radius schedule")
    return RadiusSchedule.fixed(coefficient)


@dataclass(frozen=True)
class ExperimentSpec:
    """One fully resolved experiment: recipe, model, grids, budget, output."""

    recipe: str
    params: ModelParams | None
    grid_kappa: tuple[float, ...]
    grid_t: tuple[float, ...]
    grid_d: tuple[int, ...]
    replicates: int
    seed: int
    output_path: str | None
    epsilon: float | None = None
    ball_radius: float | None = None
    t: float | None = None
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.recipe not in RECIPES:
            raise ConfigError("E_CONFIG_VALUE", f"unknown recipe {self.recipe!r}")
        if self.recipe in _THEOREM_RECIPES and self.params is not None:
            if not self.params.radius.unbounded:
                raise ConfigError("E_FIXED_RADIUS", "theorem recipes need a growing radius schedule")


def _check_keys(recipe: str, cfg: dict[str, str]) -> None:
    table = _RECIPE_KEYS[recipe]
    allowed = table["required"] | table["optional"] | {"recipe"}
    for key in cfg:
        if key not in allowed:
            raise ConfigError("E_CONFIG_KEY", f"key {key!r} is not used by recipe {recipe}")
    for key in sorted(table["required"]):
        if key not in cfg:
            raise ConfigError("E_CONFIG_KEY", f"recipe {recipe} requires key {key!r}")


def _positive(value: float, key: str) -> float:
    if not (value > 0):
        raise ConfigError("E_CONFIG_VALUE", f"{key} must be positive")
    return value


def experiment_from_config(cfg: dict[str, str]) -> ExperimentSpec:
    """Resolve a parsed config into an ExperimentSpec, validating per recipe."""
    if "recipe" not in cfg:
        raise ConfigError("E_CONFIG_KEY", "config needs a recipe key")
    recipe = cfg["recipe"]
    if recipe not in RECIPES:
        raise ConfigError("E_CONFIG_VALUE", f"unknown recipe {cfg['recipe']!r}")
    _check_keys(recipe, cfg)

    seed = _as_int(cfg, "seed") if "seed" in cfg else 0
    out = cfg.get("out")
    replicates = _as_int(cfg, "replicates") if "replicates" in cfg else 0
    if "replicates" in cfg and replicates < 1:
        raise ConfigError("E_CONFIG_VALUE", "replicates must be a positive integer")

    if recipe == "eigen_table":
        grid_d = _as_grid(cfg, "grid.d", integers=True) if "grid.d" in cfg else (1, 2, 3)
        if any(d < 1 for d in grid_d):
            raise ConfigError("E_CONFIG_VALUE", "grid.d entries must be >= 1")
        return ExperimentSpec(
            recipe=recipe,
            params=None,
            grid_kappa=(),
            grid_t=(),
            grid_d=grid_d,
            replicates=0,
            seed=seed,
            output_path=out,
        )

    if recipe == "propa_check":
        beta = _positive(_as_float(cfg, "beta"), "beta")
        t = _as_float(cfg, "t")
        if t < 0:
            raise ConfigError("E_CONFIG_VALUE", "t must be nonnegative")
        return ExperimentSpec(
            recipe=recipe,
            params=None,
            grid_kappa=(),
            grid_t=(),
            grid_d=(),
            replicates=replicates,
            seed=seed,
            output_path=out,
            t=t,
            beta=beta,
        )

    if recipe == "confinement_table":
        dimension = _as_int(cfg, "dimension")
        if dimension < 1:
            raise ConfigError("E_CONFIG_VALUE", "dimension must be >= 1")
        b = _positive(_as_float(cfg, "b"), "b")
        grid_t = _as_grid(cfg, "grid.t")
        if grid_t[0] <= 0:
            raise ConfigError("E_CONFIG_VALUE", "grid.t entries must be positive")
        t_max = grid_t[-1]
        dt = _positive(_as_float(cfg, "dt"), "dt") if "dt" in cfg else min(t_max / 16.0, 0.01 * b * b)
        bridge = _as_bool(cfg, "bridge_correction") if "bridge_correction" in cfg else True
        params = ModelParams(
            dimension=dimension,
            branching_rate=0.0,
            kappa=1.0,
            t_max=t_max,
            radius=RadiusSchedule.fixed(b),
            dt=dt,
            bridge_correction=bridge,
        )
        return ExperimentSpec(
            recipe=recipe,
            params=params,
            grid_kappa=(),
            grid_t=grid_t,
            grid_d=(),
            replicates=replicates,
            seed=seed,
            output_path=out,
            ball_radius=b,
        )

    # the three model-driven recipes
    beta = _positive(_as_float(cfg, "beta"), "beta")
    dimension = _as_int(cfg, "dimension") if "dimension" in cfg else 1
    if dimension < 1:
        raise ConfigError("E_CONFIG_VALUE", "dimension must be >= 1")
    bridge = _as_bool(cfg, "bridge_correction") if "bridge_correction" in cfg else True

    if recipe == "theorem1_rate_curve":
        schedule = _radius_schedule(cfg, allow_fixed=False)
        grid_kappa = _as_grid(cfg, "grid.kappa")
        if grid_kappa[0] <= 0:
            raise ConfigError("E_CONFIG_VALUE", "grid.kappa entries must be positive")
        grid_t = _as_grid(cfg, "grid.t")
        if grid_t[0] <= 0:
            raise ConfigError("E_CONFIG_VALUE", "grid.t entries must be positive")
        if len(grid_t) < 3:
            raise ConfigError("E_CONFIG_VALUE", "the rate fit needs at least three grid.t entries")
        t_max = _positive(_as_float(cfg, "t_max"), "t_max") if "t_max" in cfg else grid_t[-1]
        if grid_t[-1] > t_max:
            raise ConfigError("E_CONFIG_VALUE", "grid.t exceeds t_max")
        dt = (
            _positive(_as_float(cfg, "dt"), "dt")
            if "dt" in cfg
            else default_dt(schedule, grid_t[0], t_max)
        )
        params = ModelParams(
            dimension=dimension,
            branching_rate=beta,
            kappa=grid_kappa[0],
            t_max=t_max,
            radius=schedule,
            dt=dt,
            bridge_correction=bridge,
        )
        return ExperimentSpec(
            recipe=recipe,
            params=params,
            grid_kappa=grid_kappa,
            grid_t=grid_t,
            grid_d=(),
            replicates=replicates,
            seed=seed,
            output_path=out,
        )

    if recipe == "theorem2_lln_trend":
        schedule = _radius_schedule(cfg, allow_fixed=False)
        grid_t = _as_grid(cfg, "grid.t")
        if grid_t[0] <= 0:
            raise ConfigError("E_CONFIG_VALUE", "grid.t entries must be positive")
        t_max = _positive(_as_float(cfg, "t_max"), "t_max") if "t_max" in cfg else grid_t[-1]
        if grid_t[-1] > t_max:
            raise ConfigError("E_CONFIG_VALUE", "grid.t exceeds t_max")
        dt = (
            _positive(_as_float(cfg, "dt"), "dt")
            if "dt" in cfg
            else default_dt(schedule, grid_t[0], t_max)
        )
        epsilon = _positive(_as_float(cfg, "epsilon"), "epsilon") if "epsilon" in cfg else None
        params = ModelParams(
            dimension=dimension,
            branching_rate=beta,
            kappa=1.0,
            t_max=t_max,
            radius=schedule,
            dt=dt,
            bridge_correction=bridge,
        )
        return ExperimentSpec(
            recipe=recipe,
            params=params,
            grid_kappa=(),
            grid_t=grid_t,
            grid_d=(),
            replicates=replicates,
            seed=seed,
            output_path=out,
            epsilon=epsilon,
        )

    # expectation_check
    schedule = _radius_schedule(cfg, allow_fixed=True)
    t = _positive(_as_float(cfg, "t"), "t")
    t_max = _positive(_as_float(cfg, "t_max"), "t_max") if "t_max" in cfg else t
    if t > t_max:
        raise ConfigError("E_CONFIG_VALUE", "t exceeds t_max")
    dt = _positive(_as_float(cfg, "dt"), "dt") if "dt" in cfg else default_dt(schedule, t, t_max)
    params = ModelParams(
        dimension=dimension,
        branching_rate=beta,
        kappa=1.0,
        t_max=t_max,
        radius=schedule,
        dt=dt,
        bridge_correction=bridge,
    )
    return ExperimentSpec(
        recipe=recipe,
        params=params,
        grid_kappa=(),
        grid_t=(),
        grid_d=(),
        replicates=replicates,
        seed=seed,
        output_path=out,
        t=t,
    )
