"""Parse, validate and serialize ECAD configuration files.

The configuration is a JSON document (conventionally ``*.ecad.cfg``) that
declares the population parameters, the fitness objectives, the cell types
with their mutable trait ranges, the target device budget, and the cell
array describing the network skeleton. Include files are merged shallowly
with the main file winning on key conflicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for syntax errors, broken references or invariant violations."""


EVAL_TYPES = ("simJob", "hwDBJob", "physJob")
CELL_TYPES = ("input", "dense", "relu", "output")

#: cell-type keys that are bookkeeping, not traits or static cell fields
_NON_TRAIT_KEYS = {"cell_type", "templateFile", "mainFuncName"}

#: dense-cell fields that are computed geometry caches, never user inputs
_COMPUTED_CACHE_KEYS = {
    "row_blocks", "col_blocks", "vec_blocks", "arows_pad", "acols_pad", "bcols_pad",
}


def _is_comment_key(key: str) -> bool:
    return key == "comment" or key.endswith(("_comment", "-comment"))


@dataclass(frozen=True)
class TraitSpec:
    """Legal-value constraint for one mutable integer trait."""

    min_value: int
    max_value: int
    mod_value: int | None = None
    pow_value: int | None = None
    change_rate: float | None = None
    func: str | None = None

    def validate(self, name: str) -> None:
        if self.min_value > self.max_value:
            raise ConfigError(f"trait '{name}': minValue {self.min_value} > maxValue {self.max_value}")
        if self.mod_value is not None:
            if self.mod_value <= 0:
                raise ConfigError(f"trait '{name}': modValue must be positive")
            if self.min_value % self.mod_value or self.max_value % self.mod_value:
                raise ConfigError(
                    f"trait '{name}': minValue/maxValue must be multiples of modValue {self.mod_value}"
                )
        if self.func == "PowFunction" and self.pow_value is None:
            raise ConfigError(f"trait '{name}': func PowFunction requires powValue")
        if not self.legal_values():
            raise ConfigError(f"trait '{name}': no legal value in [{self.min_value}, {self.max_value}]")

    def legal_values(self) -> list[int]:
        """All integers this trait may take, ascending."""
        lo, hi = self.min_value, self.max_value
        if self.func == "PowFunction":
            p = self.pow_value
            vals, v = [], 1
            while v <= hi:
                if v >= lo:
                    vals.append(v)
                v *= p
            return vals
        if self.mod_value:
            m = self.mod_value
            start = lo + (-lo) % m
            return list(range(start, hi + 1, m))
        return list(range(lo, hi + 1))

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"minValue": self.min_value, "maxValue": self.max_value}
        if self.mod_value is not None:
            out["modValue"] = self.mod_value
        if self.change_rate is not None:
            out["changeRate"] = self.change_rate
        if self.pow_value is not None:
            out["powValue"] = self.pow_value
        if self.func is not None:
            out["func"] = self.func
        return out

    @classmethod
    def from_json(cls, name: str, raw: dict[str, Any]) -> "TraitSpec":
        spec = cls(
            min_value=int(raw["minValue"]),
            max_value=int(raw["maxValue"]),
            mod_value=int(raw["modValue"]) if "modValue" in raw else None,
            pow_value=int(raw["powValue"]) if "powValue" in raw else None,
            change_rate=float(raw["changeRate"]) if "changeRate" in raw else None,
            func=raw.get("func"),
        )
        spec.validate(name)
        return spec


@dataclass(frozen=True)
class EvalTypeConfig:
    """One fitness objective: which worker scores it and how it normalizes."""

    type: str
    weight: float
    min_value: float
    max_value: float
    active: bool
    allow_overflow: bool = False
    minimize: bool = False
    epochs: int | None = None          # simJob
    batch_size: int | None = None      # simJob
    metric: str | None = None          # hwDBJob, defaults to effective_gops

    def validate(self) -> None:
        if self.type not in EVAL_TYPES:
            raise ConfigError(f"unknown evalType '{self.type}'")
        if self.weight < 0:
            raise ConfigError(f"evalType '{self.type}': weight must be >= 0")
        if not self.min_value < self.max_value:
            raise ConfigError(f"evalType '{self.type}': minValue must be < maxValue")

    @property
    def scored_metric(self) -> str:
        if self.type == "simJob":
            return "accuracy"
        if self.type == "hwDBJob":
            return self.metric or "effective_gops"
        return self.metric or "phys_metric"

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "type": self.type,
            "weight": self.weight,
            "minValue": self.min_value,
            "maxValue": self.max_value,
            "active": self.active,
            "allowOverflow": self.allow_overflow,
        }
        if self.minimize:
            out["minimize"] = True
        if self.epochs is not None:
            out["epochs"] = self.epochs
        if self.batch_size is not None:
            out["batchSize"] = self.batch_size
        if self.metric is not None:
            out["metric"] = self.metric
        return out

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "EvalTypeConfig":
        et = cls(
            type=raw.get("type", ""),
            weight=float(raw.get("weight", 1.0)),
            min_value=float(raw["minValue"]),
            max_value=float(raw["maxValue"]),
            active=bool(raw.get("active", True)),
            allow_overflow=bool(raw.get("allowOverflow", False)),
            minimize=bool(raw.get("minimize", False)),
            epochs=int(raw["epochs"]) if "epochs" in raw else None,
            batch_size=int(raw["batchSize"]) if "batchSize" in raw else None,
            metric=raw.get("metric"),
        )
        et.validate()
        return et


@dataclass(frozen=True)
class PopConfig:
    initial_pop_size: int
    max_pop_size: int
    change_rate: float
    min_indiv_eval_complete: int
    max_generations: int
    fitness_score_goal: float
    eval_types: tuple[EvalTypeConfig, ...]

    def validate(self) -> None:
        if not 0 < self.initial_pop_size <= self.max_pop_size:
            raise ConfigError("popConfigValues: need 0 < initialPopSize <= maxPopSize")
        if not 0 < self.change_rate <= 1:
            raise ConfigError("popConfigValues: need 0 < changeRate <= 1")
        if self.max_generations < 1:
            raise ConfigError("popConfigValues: maxGenerations must be >= 1")

    def active_eval_types(self) -> list[EvalTypeConfig]:
        return [et for et in self.eval_types if et.active]

    def to_json(self) -> dict[str, Any]:
        return {
            "initialPopSize": self.initial_pop_size,
            "maxPopSize": self.max_pop_size,
            "changeRate": self.change_rate,
            "minIndivEvalCompleteBeforeFitSelect": self.min_indiv_eval_complete,
            "maxGenerations": self.max_generations,
            "fitnessScoreGoal": self.fitness_score_goal,
            "evalTypes": [et.to_json() for et in self.eval_types],
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "PopConfig":
        pop = cls(
            initial_pop_size=int(raw["initialPopSize"]),
            max_pop_size=int(raw["maxPopSize"]),
            change_rate=float(raw["changeRate"]),
            min_indiv_eval_complete=int(raw.get("minIndivEvalCompleteBeforeFitSelect", 1)),
            max_generations=int(raw["maxGenerations"]),
            fitness_score_goal=float(raw.get("fitnessScoreGoal", math.inf)),
            eval_types=tuple(
                EvalTypeConfig.from_json(e)
                for e in raw.get("evalTypes", [])
                if not isinstance(e, str)
            ),
        )
        pop.validate()
        return pop


@dataclass(frozen=True)
class CellTypeConfig:
    """A declared cell type: its mutable traits plus static fields."""

    cell_type: str
    traits: dict[str, TraitSpec] = field(default_factory=dict)
    statics: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"cell_type": self.cell_type}
        for name, spec in self.traits.items():
            out[name] = spec.to_json()
        out.update(self.statics)
        return out

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "CellTypeConfig":
        ctype = raw.get("cell_type")
        if ctype not in CELL_TYPES:
            raise ConfigError(f"unknown cell_type '{ctype}' in cellTypes")
        traits: dict[str, TraitSpec] = {}
        statics: dict[str, Any] = {}
        for key, val in raw.items():
            if key in _NON_TRAIT_KEYS or _is_comment_key(key) or key in _COMPUTED_CACHE_KEYS:
                continue
            if isinstance(val, dict) and "minValue" in val and "maxValue" in val:
                traits[key] = TraitSpec.from_json(f"{ctype}.{key}", val)
            else:
                statics[key] = val
        return cls(cell_type=ctype, traits=traits, statics=statics)


@dataclass(frozen=True)
class HwConfig:
    """Device resource budget and memory-system parameters."""

    device_type: str
    dsp: int
    freq: float            # MHz
    sram: float            # embedded-memory budget (Kb per the device sheet)
    mem_banks: int
    mem_speed: float       # mega-transfers/s
    mem_rate: float        # bytes per transfer

    def validate(self) -> None:
        for name in ("dsp", "freq", "sram", "mem_banks", "mem_speed", "mem_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"hwConfig: {name} must be positive")

    @property
    def bandwidth_bytes_per_s(self) -> float:
        return self.mem_banks * self.mem_speed * 1e6 * self.mem_rate

    def to_json(self) -> dict[str, Any]:
        return {
            "deviceType": self.device_type,
            "dsp": self.dsp,
            "freq": self.freq,
            "sram": self.sram,
            "mem_banks": self.mem_banks,
            "mem_speed": self.mem_speed,
            "mem_rate": self.mem_rate,
        }

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "HwConfig":
        hw = cls(
            device_type=str(raw.get("deviceType", "")),
            dsp=int(raw["dsp"]),
            freq=float(raw["freq"]),
            sram=float(raw["sram"]),
            mem_banks=int(raw["mem_banks"]),
            mem_speed=float(raw["mem_speed"]),
            mem_rate=float(raw["mem_rate"]),
        )
        hw.validate()
        return hw


@dataclass(frozen=True)
class CellInstance:
    """One entry of the cell array: a named cell wired into the chain."""

    cell_type: str
    cell_name: str
    input: str
    output: str
    input_size: int | None = None
    output_size: int | None = None
    fixed: bool = False

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "cell_type": self.cell_type,
            "cell_name": self.cell_name,
            "input": self.input,
            "output": self.output,
        }
        if self.input_size is not None:
            out["input_size"] = self.input_size
        if self.output_size is not None:
            out["output_size"] = self.output_size
        out["fixed"] = self.fixed
        return out

    @classmethod
    def from_json(cls, raw: dict[str, Any]) -> "CellInstance":
        return cls(
            cell_type=str(raw["cell_type"]),
            cell_name=str(raw["cell_name"]),
            input=str(raw["input"]),
            output=str(raw["output"]),
            input_size=int(raw["input_size"]) if "input_size" in raw else None,
            output_size=int(raw["output_size"]) if "output_size" in raw else None,
            fixed=bool(raw.get("fixed", False)),
        )


@dataclass(frozen=True)
class EcadConfig:
    name: str
    version: str
    includes: tuple[str, ...]
    pop: PopConfig
    def_change_rate: float
    cell_types: tuple[CellTypeConfig, ...]
    net_type: str
    hw: HwConfig
    cell_array: tuple[CellInstance, ...]
    extras: dict[str, Any] = field(default_factory=dict)   # unknown top-level keys, preserved verbatim

    def cell_type_config(self, cell_type: str) -> CellTypeConfig:
        for ct in self.cell_types:
            if ct.cell_type == cell_type:
                return ct
        raise ConfigError(f"unknown cell_type '{cell_type}'")

    def chain(self) -> list[CellInstance]:
        """Cell array ordered by following the input/output links."""
        return _ordered_chain(self.cell_array)


def _ordered_chain(cells: tuple[CellInstance, ...]) -> list[CellInstance]:
    by_name = {c.cell_name: c for c in cells}
    heads = [c for c in cells if c.input == "global"]
    if len(heads) != 1:
        raise ConfigError(f"cell array must have exactly one cell with input 'global', found {len(heads)}")
    chain: list[CellInstance] = []
    seen: set[str] = set()
    cur: CellInstance | None = heads[0]
    while cur is not None:
        if cur.cell_name in seen:
            raise ConfigError(f"cell chain has a cycle at '{cur.cell_name}'")
        seen.add(cur.cell_name)
        chain.append(cur)
        if cur.output == "global":
            cur = None
        elif cur.output in by_name:
            cur = by_name[cur.output]
        else:
            raise ConfigError(f"cell '{cur.cell_name}' outputs to undeclared cell '{cur.output}'")
    if len(chain) != len(cells):
        stray = sorted(set(by_name) - seen)
        raise ConfigError(f"cell array is not a single chain; unreachable cells: {stray}")
    return chain


def _validate(cfg: EcadConfig) -> EcadConfig:
    if not cfg.version:
        raise ConfigError("missing 'version'")
    if not cfg.cell_array:
        raise ConfigError("empty cell array")
    names = [c.cell_name for c in cfg.cell_array]
    if len(names) != len(set(names)):
        raise ConfigError("cell_name values must be unique")
    declared = {ct.cell_type for ct in cfg.cell_types}
    for cell in cfg.cell_array:
        if cell.cell_type not in declared:
            raise ConfigError(f"cell '{cell.cell_name}' references undeclared cell_type '{cell.cell_type}'")
    _ordered_chain(cfg.cell_array)
    cfg.pop.validate()
    cfg.hw.validate()
    if not 0 < cfg.def_change_rate <= 1:
        raise ConfigError("traitConfigValues: defChangeRate must be in (0, 1]")
    return cfg


_KNOWN_TOP_KEYS = {
    "name", "version", "includes", "popConfigValues", "traitConfigValues",
    "cellConfigValues", "cellTypes", "netConfig", "hwConfig", "cellArray",
}


def _merge_includes(doc: dict[str, Any], base_dir: Path | None) -> dict[str, Any]:
    merged: dict[str, Any] = {}
    for inc in doc.get("includes", []):
        inc_path = Path(inc)
        if not inc_path.is_absolute():
            if base_dir is None:
                raise ConfigError(f"include '{inc}' is relative but the config was not loaded from a file")
            inc_path = base_dir / inc_path
        if not inc_path.exists():
            raise ConfigError(f"include file not found: {inc_path}")
        sub = _load_doc(inc_path.read_text(encoding="utf-8"), inc_path.parent)
        merged.update(sub)
    merged.update(doc)   # main file wins on conflicts
    return merged


def _load_doc(text: str, base_dir: Path | None) -> dict[str, Any]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge_includes(doc, base_dir)


def parse_config(source: str | Path) -> EcadConfig:
    """Parse JSON text or a file path into a validated EcadConfig.

    Include files are resolved relative to the including file and merged
    shallowly (main file keys win). Comment-style keys are ignored; unknown
    top-level keys are preserved in ``extras``.
    """
    def _is_existing_path(s: str) -> bool:
        try:
            return "\n" not in s and Path(s).exists()
        except OSError:
            return False

    base_dir: Path | None = None
    if isinstance(source, Path) or (isinstance(source, str) and _is_existing_path(source)):
        path = Path(source)
        text = path.read_text(encoding="utf-8")
        base_dir = path.parent.resolve()
    else:
        text = str(source)
    doc = _load_doc(text, base_dir)

    pop_raw = doc.get("popConfigValues")
    if not isinstance(pop_raw, dict):
        raise ConfigError("missing 'popConfigValues'")
    hw_raw = doc.get("hwConfig")
    if not isinstance(hw_raw, dict):
        raise ConfigError("missing 'hwConfig'")

    extras = {
        k: v for k, v in doc.items()
        if k not in _KNOWN_TOP_KEYS and not _is_comment_key(k)
    }
    cfg = EcadConfig(
        name=str(doc.get("name", "")),
        version=str(doc.get("version", "")),
        includes=tuple(doc.get("includes", [])),
        pop=PopConfig.from_json(pop_raw),
        def_change_rate=float(doc.get("traitConfigValues", {}).get("defChangeRate", 0.1)),
        cell_types=tuple(CellTypeConfig.from_json(ct) for ct in doc.get("cellTypes", [])),
        net_type=str(doc.get("netConfig", {}).get("netType", "mlp")),
        hw=HwConfig.from_json(hw_raw),
        cell_array=tuple(CellInstance.from_json(c) for c in doc.get("cellArray", [])),
        extras=extras,
    )
    return _validate(cfg)


def serialize_config(cfg: EcadConfig) -> str:
    """Serialize to canonical JSON text; reparsing yields a structurally equal config."""
    doc: dict[str, Any] = {
        "name": cfg.name,
        "version": cfg.version,
        "includes": [],   # includes are already merged into this document
        "popConfigValues": cfg.pop.to_json(),
        "traitConfigValues": {"defChangeRate": cfg.def_change_rate},
        "cellTypes": [ct.to_json() for ct in cfg.cell_types],
        "netConfig": {"netType": cfg.net_type},
        "hwConfig": cfg.hw.to_json(),
        "cellArray": [c.to_json() for c in cfg.cell_array],
    }
    doc.update(cfg.extras)
    return json.dumps(doc, indent=2) + "\n"
