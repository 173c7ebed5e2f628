"""Flat ``section.key = value`` pipeline configuration.

Every key has a declared type and default; unknown keys, bad values and
values that violate a module's own invariants are all rejected at load time
with a :class:`ConfigError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .classification import ClassifyConfig
from .normals import NormalConfig
from .projection import ProjectionConfig
from .registration import RegistrationParams
from .scan_context import ScanContextConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


def _float(s: str) -> float:
    f = float(s)
    if not math.isfinite(f):
        raise ValueError(f"not a finite number: {s!r}")
    return f


def _opt_float(s: str):
    return None if s.strip().lower() in ("none", "") else _float(s)


# key -> (parser, default)
SCHEMA = {
    "proj.width": (_int, 1024),
    "proj.height": (_int, 64),
    "proj.fov_up_deg": (_float, 22.5),
    "proj.fov_down_deg": (_float, -22.5),
    "proj.range_min": (_float, 0.3),
    "proj.range_max": (_float, 100.0),
    "normals.discontinuity_abs": (_float, 0.3),
    "normals.discontinuity_rel": (_float, 0.05),
    "normals.crease_angle_deg": (_float, 1.5),
    "classify.edge_angle_rad": (_float, 0.26),
    "classify.majority_fraction": (_float, 2.0 / 3.0),
    "map.voxel_size": (_float, 0.5),
    "map.max_points_per_voxel": (_int, 20),
    "map.max_map_range": (_float, 100.0),
    "map.downsample_voxel": (_float, 0.25),
    "map.adaptive_downsample": (_bool, True),
    "icp.max_iterations": (_int, 50),
    "icp.convergence_eps": (_float, 1e-4),
    "icp.max_dist": (_float, 1.5),
    "icp.min_dist": (_float, 0.5),
    "icp.dist_decay": (_float, 0.8),
    "icp.alpha_min": (_float, 0.1),
    "icp.alpha_max": (_float, 0.9),
    "icp.lm_damping": (_float, 1e-6),
    "icp.degeneracy_weights": (_bool, True),
    "icp.fixed_alpha": (_opt_float, None),
    "sc.n_ring": (_int, 20),
    "sc.n_sector": (_int, 60),
    "sc.max_radius": (_float, 80.0),
    "sc.height_offset": (_float, 2.0),
    "sc.num_candidates": (_int, 10),
    "sc.accept_threshold": (_float, 0.2),
    "sc.exclusion_window": (_int, 50),
    "sc.keyframe_every": (_int, 10),
    "sc.keyframe_distance": (_float, 1.0),
    "graph.max_iters": (_int, 20),
    "graph.eps": (_float, 1e-9),
    "graph.damping": (_float, 1e-6),
    "graph.odom_min_step": (_float, 0.1),
    "graph.loop_max_rms": (_float, 0.1),
    "graph.loop_min_overlap": (_float, 0.5),
    "eval.max_dt": (_float, 0.01),
    "eval.rpe_delta": (_int, 1),
    "eval.align": (_bool, True),
    "loop_closure.enabled": (_bool, True),
    "pipeline.scan_period": (_float, 0.1),
    "pipeline.max_skip_fraction": (_float, 0.1),
}


@dataclass
class PipelineConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def projection(self) -> ProjectionConfig:
        s = self.section("proj")
        return ProjectionConfig.from_fov(s["width"], s["height"], s["fov_up_deg"], s["fov_down_deg"],
                                         s["range_min"], s["range_max"])

    def normals(self) -> NormalConfig:
        return NormalConfig(**self.section("normals"))

    def classify(self) -> ClassifyConfig:
        return ClassifyConfig(**self.section("classify"))

    def registration(self) -> RegistrationParams:
        return RegistrationParams(**self.section("icp"))

    def scan_context(self) -> ScanContextConfig:
        s = self.section("sc")
        s.pop("keyframe_every")
        s.pop("keyframe_distance")
        return ScanContextConfig(**s)

    def validate(self) -> None:
        try:
            self.projection()
            self.normals()
            self.classify()
            self.registration()
            self.scan_context()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        v = self.values
        checks = [
            (v["map.voxel_size"] > 0, "map.voxel_size must be positive"),
            (v["map.max_points_per_voxel"] >= 1, "map.max_points_per_voxel must be >= 1"),
            (v["map.max_map_range"] > 0, "map.max_map_range must be positive"),
            (v["map.downsample_voxel"] > 0, "map.downsample_voxel must be positive"),
            (v["sc.keyframe_every"] >= 1, "sc.keyframe_every must be >= 1"),
            (v["sc.keyframe_distance"] > 0, "sc.keyframe_distance must be positive"),
            (v["graph.max_iters"] >= 1, "graph.max_iters must be >= 1"),
            (v["graph.eps"] >= 0, "graph.eps must be >= 0"),
            (v["graph.damping"] > 0, "graph.damping must be positive"),
            (v["graph.odom_min_step"] > 0, "graph.odom_min_step must be positive"),
            (v["graph.loop_max_rms"] > 0, "graph.loop_max_rms must be positive"),
            (0 <= v["graph.loop_min_overlap"] <= 1, "graph.loop_min_overlap must be in [0, 1]"),
            (v["eval.max_dt"] >= 0, "eval.max_dt must be >= 0"),
            (v["eval.rpe_delta"] >= 1, "eval.rpe_delta must be >= 1"),
            (v["pipeline.scan_period"] > 0, "pipeline.scan_period must be positive"),
            (0 <= v["pipeline.max_skip_fraction"] <= 1, "pipeline.max_skip_fraction must be in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_text(self) -> str:
        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            return "none" if v is None else repr(v)
        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.values.items())


def _assign(values: dict, key: str, raw: str, where: str) -> None:
    key = key.strip()
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parser, _ = SCHEMA[key]
    try:
        values[key] = parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def default_config() -> PipelineConfig:
    return PipelineConfig({k: d for k, (_, d) in SCHEMA.items()})


def parse_config(text: str, overrides=(), source: str = "<config>") -> PipelineConfig:
    cfg = default_config()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, raw = s.split("=", 1)
        key = key.strip()
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        _assign(cfg.values, key, raw, f"{source}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        key, raw = item.split("=", 1)
        _assign(cfg.values, key, raw, f"--set {item!r}")
    cfg.validate()
    return cfg


def load_config(path=None, overrides=()) -> PipelineConfig:
    if path is None:
        return parse_config("", overrides)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides, str(path))
