"""Run configuration: flat key=value files with preset inheritance.

Grammar, one entry per line:

    # comment
    extends = synthetic
    pipeline.iterations = 3
    pipeline.p_naturalistic = gaussian(1.8,0.192)
    scenario.n_social = 2
    ego.lr = 0.5

Sections route keys to the owning dataclass: ``scenario.`` to ScenarioConfig,
``social.`` / ``meta.`` / ``ego.`` to the stage TrainConfigs, ``ce.`` to
CeConfig, ``pipeline.`` to PipelineConfig itself. ``extends`` names a shipped
preset (by bare name) or a path to another file; child values override parent
values. Precedence overall: command-line overrides > file > defaults.
"""

import os
from dataclasses import replace

from .ce_eval import CeConfig
from .distributions import parse_literal
from .errors import ConfigError, MissingArtifactError
from .pipeline import ABLATION_MEANS, ABLATION_SIGMAS, BENCHMARK_VARIANTS, PipelineConfig
from .simulator import ScenarioConfig
from .training import TrainConfig

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")
MAX_EXTENDS_DEPTH = 10


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_floats(text):
    inner = text.strip()
    if inner.startswith("(") and inner.endswith(")"):
        inner = inner[1:-1]
    parts = [p for p in (s.strip() for s in inner.split(",")) if p]
    if not parts:
        raise ConfigError(f"empty number list: {text!r}")
    return tuple(float(p) for p in parts)


def _parse_names(text):
    parts = [p for p in (s.strip() for s in text.split(",")) if p]
    if not parts:
        raise ConfigError(f"empty name list: {text!r}")
    return tuple(parts)


_SCENARIO_FIELDS = {
    "dt": float,
    "max_steps": int,
    "v_max": float,
    "accel_set": _parse_floats,
    "collision_radius": float,
    "n_social": int,
    "spawn_s": _parse_floats,
    "spawn_v": _parse_floats,
    "step_penalty": float,
    "success_reward": float,
    "collision_penalty": float,
    "progress_reward": float,
}

_TRAIN_FIELDS = {
    "batch": int,
    "updates": int,
    "lr": float,
    "gamma": float,
    "lambda_reg": float,
    "reg_batch": int,
    "cap": float,
    "baseline_eta": float,
    "jobs": int,
}

_CE_FIELDS = {
    "n_ce": int,
    "elite_quantile": float,
    "threshold": float,
    "max_iters": int,
    "repeats": int,
}

# pipeline.* keys: value parser plus the PipelineConfig field it lands in.
_PIPELINE_FIELDS = {
    "p_naturalistic": ("p_naturalistic", "literal"),
    "p0": ("p0", "literal"),
    "mu0": ("mu0", float),
    "sigma": ("sigma", float),
    "n_samples": ("n_samples", int),
    "iterations": ("n_iterations", int),
    "beta_min": ("beta_min", float),
    "beta_max": ("beta_max", float),
    "baseline_betas": ("baseline_betas", _parse_floats),
    "neighbor_radius": ("neighbor_radius", float),
    "warm_start": ("warm_start", _parse_bool),
    "episode_log_limit": ("episode_log_limit", int),
}

# harness keys consumed by the CLI rather than PipelineConfig
_HARNESS_FIELDS = {
    "benchmarks.variants": _parse_names,
    "ablation.means": _parse_floats,
    "ablation.sigmas": _parse_floats,
}


def resolve_preset(name: str) -> str:
    """Map a preset name or path to a readable file path."""
    if os.path.exists(name):
        return name
    if os.path.sep not in name:
        shipped = os.path.join(PRESET_DIR, name + ".preset")
        if os.path.exists(shipped):
            return shipped
    raise MissingArtifactError(f"no such preset or config file: {name}")


def read_config(path_or_name: str, _depth=0) -> dict:
    """Parse one file, resolving ``extends`` chains; returns raw key -> string."""
    if _depth >= MAX_EXTENDS_DEPTH:
        raise ConfigError("preset inheritance too deep (loop?)")
    path = resolve_preset(path_or_name)
    base = {}
    own = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key == "extends":
                parent = value
                if os.path.sep in parent:
                    parent = os.path.join(os.path.dirname(path), parent) \
                        if not os.path.isabs(parent) else parent
                base = read_config(parent, _depth + 1)
            else:
                own[key] = value
    base.update(own)
    return base


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply KEY=VALUE strings (highest precedence) onto a raw mapping."""
    merged = dict(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, _, value = item.partition("=")
        merged[key.strip()] = value.strip()
    return merged


def build_pipeline_config(raw: dict, seed: int = 0, out_dir: str = "",
                          base_dir: str = ".") -> PipelineConfig:
    """Materialize a PipelineConfig (and nested stage configs) from raw keys."""
    scenario_kw = {}
    train_kw = {"social": {}, "meta": {}, "ego": {}}
    ce_kw = {}
    pipeline_kw = {}
    beta_min, beta_max = -1.0, 3.0

    for key, value in raw.items():
        if key in _HARNESS_FIELDS:
            continue
        section, _, name = key.partition(".")
        try:
            if section == "scenario" and name in _SCENARIO_FIELDS:
                scenario_kw[name] = _SCENARIO_FIELDS[name](value)
            elif section in train_kw and name in _TRAIN_FIELDS:
                train_kw[section][name] = _TRAIN_FIELDS[name](value)
            elif section == "ce" and name in _CE_FIELDS:
                ce_kw[name] = _CE_FIELDS[name](value)
            elif section == "pipeline" and name in _PIPELINE_FIELDS:
                field, kind = _PIPELINE_FIELDS[name]
                if kind == "literal":
                    parsed = parse_literal(value, base_dir=base_dir)
                else:
                    parsed = kind(value)
                if field == "beta_min":
                    beta_min = parsed
                elif field == "beta_max":
                    beta_max = parsed
                else:
                    pipeline_kw[field] = parsed
            else:
                raise ConfigError(f"unknown config key '{key}'")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for '{key}': {value!r} ({exc})") from exc

    defaults = PipelineConfig.__dataclass_fields__
    scenario = ScenarioConfig(**scenario_kw)
    social_cfg = replace(defaults["social_cfg"].default_factory(), **train_kw["social"])
    meta_cfg = replace(defaults["meta_cfg"].default_factory(), **train_kw["meta"])
    ego_cfg = replace(defaults["ego_cfg"].default_factory(), **train_kw["ego"])
    ce_cfg = replace(defaults["ce_cfg"].default_factory(), **ce_kw)

    if "p_naturalistic" not in pipeline_kw:
        raise ConfigError("config must set pipeline.p_naturalistic")
    pipeline_kw.setdefault("p0", pipeline_kw["p_naturalistic"])
    return PipelineConfig(
        scenario=scenario, social_cfg=social_cfg, meta_cfg=meta_cfg,
        ego_cfg=ego_cfg, ce_cfg=ce_cfg, beta_range=(beta_min, beta_max),
        seed=seed, out_dir=out_dir, **pipeline_kw)


def harness_options(raw: dict) -> dict:
    """Extract the CLI-level sweep settings with defaults."""
    out = {
        "variants": BENCHMARK_VARIANTS,
        "means": ABLATION_MEANS,
        "sigmas": ABLATION_SIGMAS,
    }
    if "benchmarks.variants" in raw:
        out["variants"] = _HARNESS_FIELDS["benchmarks.variants"](raw["benchmarks.variants"])
    if "ablation.means" in raw:
        out["means"] = _HARNESS_FIELDS["ablation.means"](raw["ablation.means"])
    if "ablation.sigmas" in raw:
        out["sigmas"] = _HARNESS_FIELDS["ablation.sigmas"](raw["ablation.sigmas"])
    return out
