"""Action-space definitions and decoding of policy outputs into thrust."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from proxrl.errors import DomainError

CONTINUOUS = "continuous"
DISCRETE_UNIFORM = "discrete"
DISCRETE_EXPLICIT = "explicit"

CHOICE_COUNTS = (3, 5, 7, 9, 11, 21, 31, 41, 51, 101)
MAGNITUDES = (1.0, 0.1)
DOCKING_EXPLICIT = (
    (-1.0, -0.1, 0.0, 0.1, 1.0),
    (-1.0, -0.1, -0.01, -0.001, 0.0, 0.001, 0.01, 0.1, 1.0),
)


@dataclass(frozen=True)
class ActionSpaceSpec:
    kind: str
    u_max: float
    choices: int | None = None
    values: tuple[float, ...] | None = None
    _table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.u_max > 0:
            raise DomainError(f"u_max must be positive, got {self.u_max}")
        if self.kind == CONTINUOUS:
            table = None
        elif self.kind == DISCRETE_UNIFORM:
            K = self.choices
            if K is None or K < 3 or K % 2 == 0:
                raise DomainError(f"uniform discrete space needs odd K >= 3, got {K}")
            half = self.u_max * (np.arange(1, K // 2 + 1) / (K // 2))
            table = np.concatenate([-half[::-1], [0.0], half])
        elif self.kind == DISCRETE_EXPLICIT:
            if not self.values:
                raise DomainError("explicit discrete space needs a value list")
            vals = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "choices", len(vals))
            table = np.array(vals)
            if np.any(np.diff(table) <= 0):
                raise DomainError(f"explicit values must be strictly ascending: {vals}")
            if not np.array_equal(table, -table[::-1]) or np.count_nonzero(table == 0) != 1:
                raise DomainError(f"explicit values must be symmetric and contain 0: {vals}")
            if np.abs(table).max() > self.u_max:
                raise DomainError(f"explicit values exceed u_max={self.u_max}")
        else:
            raise DomainError(f"unknown action space kind {self.kind!r}")
        if table is not None:
            table.setflags(write=False)
        object.__setattr__(self, "_table", table)

    @property
    def is_discrete(self) -> bool:
        return self.kind != CONTINUOUS

    @property
    def label(self) -> str:
        """Row label in the style of the results tables."""
        if self.kind == CONTINUOUS:
            return "Continuous"
        if self.kind == DISCRETE_UNIFORM:
            return f"Discrete - {self.choices}"
        mags = sorted({abs(v) for v in self.values if v != 0}, reverse=True)
        if len(mags) <= 2:
            return "Discrete " + "/".join(str(m) for m in mags)
        return f"Discrete {mags[0]}/../{mags[-1]}"

    @property
    def slug(self) -> str:
        if self.kind == CONTINUOUS:
            return f"continuous_u{self.u_max:g}"
        if self.kind == DISCRETE_UNIFORM:
            return f"discrete{self.choices}_u{self.u_max:g}"
        return f"explicit{self.choices}_min{min(abs(v) for v in self.values if v):g}_u{self.u_max:g}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "u_max": self.u_max}
        if self.kind == DISCRETE_UNIFORM:
            d["choices"] = self.choices
        elif self.kind == DISCRETE_EXPLICIT:
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpaceSpec":
        values = d.get("values")
        return cls(
            kind=d["kind"],
            u_max=float(d["u_max"]),
            choices=d.get("choices"),
            values=tuple(values) if values is not None else None,
        )


def continuous(u_max: float) -> ActionSpaceSpec:
    return ActionSpaceSpec(CONTINUOUS, u_max)


def discrete(K: int, u_max: float) -> ActionSpaceSpec:
    return ActionSpaceSpec(DISCRETE_UNIFORM, u_max, choices=K)


def explicit(values, u_max: float | None = None) -> ActionSpaceSpec:
    values = tuple(float(v) for v in values)
    return ActionSpaceSpec(DISCRETE_EXPLICIT, u_max or max(abs(v) for v in values), values=values)


def choice_set(spec: ActionSpaceSpec) -> np.ndarray:
    """Per-axis value table of a discrete space (read-only)."""
    if spec._table is None:
        raise DomainError("a continuous action space has no finite choice set")
    return spec._table


def decode(spec: ActionSpaceSpec, choice) -> np.ndarray:
    """Map a policy output to a thrust vector in newtons.

    Discrete choices are three per-axis indices; continuous choices are
    three reals clamped to ``[-u_max, u_max]``.
    """
    if spec._table is None:
        return np.clip(np.asarray(choice, dtype=float), -spec.u_max, spec.u_max)
    idx = np.asarray(choice)
    if idx.shape != (3,) or not np.issubdtype(idx.dtype, np.integer):
        raise DomainError(f"discrete choice must be 3 integer indices, got {choice!r}")
    if idx.min() < 0 or idx.max() >= len(spec._table):
        raise DomainError(f"choice index out of range [0, {len(spec._table)}): {idx}")
    return spec._table[idx]


def experiment_grid(task: str) -> list[ActionSpaceSpec]:
    """Continuous plus ten uniform discrete spaces at both magnitudes; docking adds the two explicit sets."""
    specs = []
    for u_max in MAGNITUDES:
        specs.append(continuous(u_max))
        specs.extend(discrete(K, u_max) for K in CHOICE_COUNTS)
    if task == "docking":
        specs.extend(explicit(v) for v in DOCKING_EXPLICIT)
    elif task != "inspection":
        raise DomainError(f"unknown task {task!r}")
    return specs
