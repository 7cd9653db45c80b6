"""Run configuration: strict schema, YAML loading and dotted overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LatticeBlock(_Strict):
    dim: int = Field(1, ge=1, le=3)
    # direct basis vectors as rows [length]
    basis: list[list[float]] = [[1.0]]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.basis) != self.dim or any(len(r) != self.dim for r in self.basis):
            raise ValueError(f"basis must be {self.dim}x{self.dim}")
        return self


class PotentialBlock(_Strict):
    kind: Literal["zero", "cosine", "fourier"] = "zero"
    # cosine: U(z) = 2 amplitude cos(e^axis . z) [energy]
    amplitude: float = 0.0
    axis: int = Field(0, ge=0, le=2)
    # fourier: list of {index: [...], re: .., im: ..}; the conjugate partner is implied
    coefficients: list[dict] = []


class VectorPotentialBlock(_Strict):
    uniform: list[float] = [0.0, 0.0, 0.0]  # A0 [momentum]
    electric: list[float] = [0.0, 0.0, 0.0]  # E [field]
    magnetic: list[float] = [0.0, 0.0, 0.0]  # B [field]


class DisorderBlock(_Strict):
    enabled: bool = True
    model: Literal["gaussian", "exponential", "white-cutoff"] = "gaussian"
    strength: float = Field(0.05, ge=0.0)  # sigma^2 [energy^2]
    length: float = Field(0.5, gt=0.0)  # [length]
    cutoff: float = Field(1.0, gt=0.0)  # [1/length]


class GridBlock(_Strict):
    n_q: int = Field(32, ge=1, le=4096)  # BZ points per axis
    n_x: int = Field(1, ge=1, le=100000)  # spatial nodes; 1 = homogeneous
    box_length: float = Field(1.0, gt=0.0)
    n_pw: int = Field(21, ge=1, le=2000)  # plane waves
    n_bands: int = Field(2, ge=1, le=200)
    layout: Literal["auto", "scalar"] = "scalar"


class KernelBlock(_Strict):
    enabled: bool = True
    eta: Optional[float] = Field(None, gt=0.0)  # [energy]; None = 4x median level step
    xi: Optional[float] = Field(None, gt=0.0)
    convention: Literal["transfer", "literal"] = "transfer"
    shift: bool = True


class EvolutionBlock(_Strict):
    dt: float = Field(0.01, gt=0.0)
    t_final: float = Field(1.0, ge=0.0)
    method: Literal["rk4", "euler"] = "rk4"
    snapshot_every: int = Field(10, ge=1)
    initial: Literal["shell", "band", "uniform"] = "shell"
    initial_band: int = Field(0, ge=0)
    initial_center: float = 1.5  # shell: energy or band q-index offset
    initial_width: float = Field(0.5, gt=0.0)
    lorentz: bool = True
    stencil: Literal["upwind", "centered"] = "upwind"
    write_fields: bool = False


class OracleBlock(_Strict):
    n_cells: int = Field(2048, ge=16, le=1 << 16)
    points_per_cell: int = Field(8, ge=4, le=64)
    q_index: int = Field(640, ge=0)
    band: int = Field(0, ge=0)
    seeds: int = Field(32, ge=1, le=10000)
    strengths: list[float] = [0.05, 0.1]
    dt: float = Field(0.008, gt=0.0)
    t_max: float = Field(40.0, gt=0.0)
    record_every: int = Field(25, ge=1)

    @field_validator("strengths")
    @classmethod
    def _pos(cls, v):
        if not v or any(s <= 0 for s in v):
            raise ValueError("strengths must be a non-empty list of positive numbers")
        return v


class UnitsBlock(_Strict):
    # internal units always hbar = m_e = e = 1; the label is carried into reports
    system: Literal["atomic"] = "atomic"


class RunConfig(_Strict):
    lattice: LatticeBlock = LatticeBlock()
    potential: PotentialBlock = PotentialBlock()
    vector_potential: VectorPotentialBlock = VectorPotentialBlock()
    disorder: DisorderBlock = DisorderBlock()
    grid: GridBlock = GridBlock()
    kernel: KernelBlock = KernelBlock()
    evolution: EvolutionBlock = EvolutionBlock()
    oracle: OracleBlock = OracleBlock()
    units: UnitsBlock = UnitsBlock()
    seed: int = Field(0, ge=0)

    def content_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _line_of(node, path: tuple) -> int | None:
    """1-based source line of a dotted location in a composed YAML tree."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = (k, v)
                    break
            if nxt is None:
                return line
            line = nxt[0].start_mark.line + 1
            node = nxt[1]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def _format_errors(err: ValidationError, tree, source: str) -> str:
    lines = []
    for e in err.errors():
        loc = tuple(e["loc"])
        where = ".".join(str(p) for p in loc)
        ln = _line_of(tree, loc) if tree is not None else None
        prefix = f"{source}:{ln}: " if ln else f"{source}: "
        lines.append(f"{prefix}{where}: {e['msg']}")
    return "\n".join(lines)


def parse_value(text: str):
    """Interpret an override value with YAML scalar rules (numbers, bools, lists)."""
    return yaml.safe_load(text)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    out = copy.deepcopy(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        cur = out
        for p in parts[:-1]:
            cur = cur.setdefault(p, {})
            if not isinstance(cur, dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a block")
        cur[parts[-1]] = parse_value(val)
    return out


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Read YAML, apply overrides, validate. Errors carry file:line anchors."""
    tree = None
    source = "<defaults>"
    data: dict = {}
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            tree = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: YAML syntax error: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{source}:1: top level must be a mapping")
    data = apply_overrides(data, overrides or [])
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, tree, source)) from None
