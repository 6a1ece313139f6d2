"""Key-value run configuration: parsing, validation, canonical serialization.

The format is line oriented.  ``[section]`` opens a section, ``key = value``
assigns inside it, ``#`` starts a comment anywhere on a line.  Arrays are
comma separated.  Parsing never stops at the first mistake: every problem is
collected with its line number and reported in one ConfigError.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, replace

from .exceptions import ConfigError

MODES = ("run", "oracle", "stats", "estimate", "instance")
ERROR_KINDS = ("z", "loss")
KL_ESTIMATORS = ("rank",)   # histogram matching may join later

_SECTION = re.compile(r"^\[([a-z_]+)\]$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated settings of one invocation."""

    # [run]
    mode: str = "run"
    seed: int = 0
    threads: int = 1
    # [physics]
    L: int = 4
    parametrization: str = "A"
    instances: int = 1
    cycles: int = 12
    trajectories: int | None = None        # None -> 6 L^2
    cavity_cap: int = 2
    # [dynamics]
    dt: float = 0.02
    jump_tolerance: float = 1e-3
    # [errors]
    error_kind: str = "z"
    error_count: int = 0                   # 0 disables the error study
    error_samples: int = 48
    # [output]
    directory: str = "out"
    kl_estimator: str = "rank"
    figures: bool = True
    # [estimate]
    sites: tuple[int, ...] = (4, 5, 6, 7, 8, 9, 10, 11, 12)

    @property
    def n_trajectories(self) -> int:
        if self.trajectories is None:
            return 6 * self.L**2
        return self.trajectories


# section -> key -> (config attribute, value type)
# types: "int", "u64", "float", "str", "bool", "int_array"
SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "run": {
        "mode": ("mode", "str"),
        "seed": ("seed", "u64"),
        "threads": ("threads", "int"),
    },
    "physics": {
        "L": ("L", "int"),
        "parametrization": ("parametrization", "str"),
        "instances": ("instances", "int"),
        "cycles": ("cycles", "int"),
        "trajectories": ("trajectories", "int"),
        "cavity_cap": ("cavity_cap", "int"),
    },
    "dynamics": {
        "dt": ("dt", "float"),
        "jump_tolerance": ("jump_tolerance", "float"),
    },
    "errors": {
        "kind": ("error_kind", "str"),
        "count": ("error_count", "int"),
        "samples": ("error_samples", "int"),
    },
    "output": {
        "directory": ("directory", "str"),
        "kl_estimator": ("kl_estimator", "str"),
        "figures": ("figures", "bool"),
    },
    "estimate": {
        "sites": ("sites", "int_array"),
    },
}


def _convert(raw: str, kind: str):
    if kind == "str":
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "bool":
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise ValueError(f"expected true or false, got {raw!r}")
    if kind in ("int", "u64"):
        try:
            v = int(raw, 0)
        except ValueError:
            raise ValueError(f"expected an integer, got {raw!r}") from None
        if kind == "u64" and not 0 <= v < 2**64:
            raise ValueError(f"{v} does not fit an unsigned 64-bit seed")
        return v
    if kind == "float":
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"expected a number, got {raw!r}") from None
        if not math.isfinite(v):
            raise ValueError(f"{raw!r} is not finite")
        return v
    if kind == "int_array":
        parts = [p.strip() for p in raw.split(",")]
        if parts == [""]:
            raise ValueError("empty array")
        try:
            return tuple(int(p, 0) for p in parts)
        except ValueError:
            raise ValueError(f"expected comma-separated integers, got {raw!r}") \
                from None
    raise AssertionError(kind)


def _validate(cfg: RunConfig, where: dict[str, str]) -> list[str]:
    """Range and enumeration checks; ``where`` maps attribute -> line tag."""

    problems = []

    def bad(attr: str, message: str) -> None:
        problems.append(f"{where.get(attr, 'config')}: {message}")

    if cfg.mode not in MODES:
        bad("mode", f"mode must be one of {', '.join(MODES)}; got {cfg.mode!r}")
    if not 0 <= cfg.seed < 2**64:
        bad("seed", f"seed must fit an unsigned 64-bit value, got {cfg.seed}")
    if cfg.threads < 1:
        bad("threads", f"threads must be at least 1, got {cfg.threads}")
    if cfg.L < 2:
        bad("L", f"L must be at least 2, got {cfg.L}")
    if cfg.parametrization not in ("A", "B"):
        bad("parametrization",
            f"parametrization must be A or B, got {cfg.parametrization!r}")
    if cfg.instances < 1:
        bad("instances", f"instances must be at least 1, got {cfg.instances}")
    if cfg.cycles < 1:
        bad("cycles", f"cycles must be at least 1, got {cfg.cycles}")
    if cfg.trajectories is not None and cfg.trajectories < 1:
        bad("trajectories",
            f"trajectories must be at least 1, got {cfg.trajectories}")
    if cfg.cavity_cap < 0:
        bad("cavity_cap",
            f"cavity_cap must be nonnegative, got {cfg.cavity_cap}")
    if cfg.dt <= 0:
        bad("dt", f"dt must be positive, got {cfg.dt}")
    if cfg.jump_tolerance <= 0:
        bad("jump_tolerance",
            f"jump_tolerance must be positive, got {cfg.jump_tolerance}")
    if cfg.error_kind not in ERROR_KINDS:
        bad("error_kind",
            f"error kind must be one of {', '.join(ERROR_KINDS)}; "
            f"got {cfg.error_kind!r}")
    if cfg.error_count < 0:
        bad("error_count",
            f"error count must be nonnegative, got {cfg.error_count}")
    if cfg.error_samples < 1:
        bad("error_samples",
            f"error samples must be at least 1, got {cfg.error_samples}")
    if cfg.kl_estimator not in KL_ESTIMATORS:
        bad("kl_estimator",
            f"kl_estimator must be one of {', '.join(KL_ESTIMATORS)}; "
            f"got {cfg.kl_estimator!r}")
    if not cfg.sites:
        bad("sites", "estimate sites must not be empty")
    elif any(s < 2 for s in cfg.sites):
        bad("sites", f"estimate sites must all be at least 2, got {cfg.sites}")
    return problems


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises ConfigError carrying every problem found."""
    problems: list[str] = []
    values: dict[str, object] = {}
    where: dict[str, str] = {}
    section: str | None = None
    seen: set[tuple[str, str]] = set()

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        tag = f"line {lineno}"
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                problems.append(
                    f"{tag}: unknown section [{section}] "
                    f"(known: {', '.join(sorted(SCHEMA))})")
                section = None
            continue
        m = _KEY.match(line)
        if not m:
            problems.append(f"{tag}: expected 'key = value' or '[section]', "
                            f"got {line!r}")
            continue
        key, raw = m.group(1), m.group(2).strip()
        if section is None:
            problems.append(f"{tag}: key {key!r} appears before any section")
            continue
        if key not in SCHEMA[section]:
            problems.append(
                f"{tag}: unknown key {key!r} in [{section}] "
                f"(known: {', '.join(sorted(SCHEMA[section]))})")
            continue
        if (section, key) in seen:
            problems.append(f"{tag}: duplicate key {key!r} in [{section}]")
            continue
        seen.add((section, key))
        attr, kind = SCHEMA[section][key]
        try:
            values[attr] = _convert(raw, kind)
            where[attr] = tag
        except ValueError as e:
            problems.append(f"{tag}: {key}: {e}")

    cfg = RunConfig(**values)
    problems.extend(_validate(cfg, where))
    if problems:
        raise ConfigError(problems)
    return cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parses back to an equal config."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (attr, _) in keys.items():
            value = getattr(cfg, attr)
            if value is None:
                continue
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    """Digest of the canonical serialization; identifies runs in outputs.

    Thread count and output directory are execution knobs with no effect
    on results, so they are pinned before hashing: runs differing only in
    those share a hash.
    """
    pinned = replace(cfg, threads=1, directory="out")
    return hashlib.sha256(serialize_config(pinned).encode()).hexdigest()


def with_overrides(cfg: RunConfig, mode: str | None = None,
                   seed: int | None = None, out_dir: str | None = None,
                   threads: int | None = None) -> RunConfig:
    """Apply command-line overrides and re-validate."""
    updates = {}
    if mode is not None:
        updates["mode"] = mode
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["directory"] = out_dir
    if threads is not None:
        updates["threads"] = threads
    out = replace(cfg, **updates)
    problems = _validate(out, {})
    if problems:
        raise ConfigError(problems)
    return out


def describe_defaults() -> str:
    """The default configuration in its serialized form, for documentation."""
    return serialize_config(RunConfig())
