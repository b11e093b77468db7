"""Core domain types: age groups, latent codes, hyper-parameters, run config,
and the cross-age similarity table."""
from __future__ import annotations

import csv
import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

NOISE_DIM = 16
IMG_CODE_DIM = 256
LMK_CODE_DIM = 64
NUM_LANDMARKS = 81
PCA_DIM = 32


class AgeGroup(enum.Enum):
    """Ten ordered, non-overlapping lifecycle bins. Value is (lo, hi); hi=None is open."""

    A = (0, 2)
    B = (3, 6)
    C = (7, 9)
    D = (10, 14)
    E = (15, 19)
    F = (20, 29)
    G = (30, 39)
    H = (40, 49)
    I = (50, 69)
    J = (70, None)

    @property
    def lo(self) -> int:
        return self.value[0]

    @property
    def hi(self) -> float:
        return math.inf if self.value[1] is None else self.value[1]

    @property
    def index(self) -> int:
        return ALL_GROUPS.index(self)

    @property
    def bounds_str(self) -> str:
        return f"{self.lo}+" if self.value[1] is None else f"{self.lo}-{self.value[1]}"

    def contains(self, age: float) -> bool:
        return self.lo <= age <= self.hi

    def distance(self, age: float) -> float:
        """Distance from ``age`` to this group's closed interval (0 inside)."""
        if age < self.lo:
            return float(self.lo - age)
        if age > self.hi:
            return float(age - self.hi)
        return 0.0

    @classmethod
    def parse(cls, text: str) -> "AgeGroup":
        """Accept a letter label ("G") or a bounds string ("30-39", "70+")."""
        text = text.strip()
        if text in cls.__members__:
            return cls[text]
        for g in cls:
            if g.bounds_str == text:
                return g
        raise ValueError(f"unknown age group {text!r}")

    def __str__(self) -> str:
        return self.bounds_str


ALL_GROUPS: tuple[AgeGroup, ...] = tuple(AgeGroup)
TRAINABLE_GROUPS: tuple[AgeGroup, ...] = (
    AgeGroup.A, AgeGroup.B, AgeGroup.C, AgeGroup.E, AgeGroup.G, AgeGroup.I,
)


def group_of(age: float) -> AgeGroup:
    if not 0 <= age <= 120:
        raise ValueError(f"age {age} outside [0, 120]")
    for g in ALL_GROUPS:
        # bins are integer-inclusive; fractional ages between bins fall to the lower bin
        if g.lo <= age < g.hi + 1:
            return g
    raise AssertionError("unreachable")


def sample_noise(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Standard-normal noise vector(s) of length 16."""
    shape = (NOISE_DIM,) if n is None else (n, NOISE_DIM)
    return rng.standard_normal(shape)


class Modality(str, enum.Enum):
    IMAGE = "image"
    LANDMARK = "landmark"


CODE_DIMS = {Modality.IMAGE: IMG_CODE_DIM, Modality.LANDMARK: LMK_CODE_DIM}


@dataclass(frozen=True)
class AgeLatentCode:
    values: np.ndarray
    modality: Modality
    group: AgeGroup

    def __post_init__(self):
        if self.values.shape != (CODE_DIMS[self.modality],):
            raise ValueError(
                f"{self.modality.value} code must have length {CODE_DIMS[self.modality]}, "
                f"got shape {self.values.shape}"
            )


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray  # (81, 2) pixel units, (x, y)
    group: AgeGroup | None = None

    def __post_init__(self):
        if self.points.shape != (NUM_LANDMARKS, 2):
            raise ValueError(f"landmarks must be 81x2, got {self.points.shape}")

    def flatten(self) -> np.ndarray:
        return self.points.reshape(-1)

    @classmethod
    def from_flat(cls, vec, group=None) -> "LandmarkSet":
        return cls(np.asarray(vec, dtype=float).reshape(NUM_LANDMARKS, 2), group)


@dataclass(frozen=True)
class HyperParams:
    lambda1: float = 1.0
    lambda2: float = 0.6
    lambda3: float = 10.0
    lambda4: float = 10.0
    lambda5: float = 1.0
    lambda6: float = 1.0
    lambda7: float = 0.2
    lambda8: float = 35.0
    lambda9: float = 2.0
    lambda10: float = 50.0
    lambda11: float = 10.0
    lambda12: float = 1.0
    lambda13: float = 10.0
    lr: float = 0.001
    decay_epochs: tuple[int, int] = (50, 100)
    decay_factor: float = 0.1
    epochs: int = 300
    batch: int = 2

    def __post_init__(self):
        for i in range(1, 14):
            if getattr(self, f"lambda{i}") < 0:
                raise ValueError(f"lambda{i} must be nonnegative")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))

    def lam(self, i: int) -> float:
        return getattr(self, f"lambda{i}")

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate during 1-based ``epoch``; decay applies after each listed epoch."""
        n = sum(1 for e in self.decay_epochs if epoch > e)
        return self.lr * self.decay_factor**n


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs; serialized as a flat TOML document."""

    hp: HyperParams = field(default_factory=HyperParams)
    resolution: int = 64
    groups: tuple[str, ...] = tuple(g.bounds_str for g in TRAINABLE_GROUPS)
    seed: int = 0
    steps: int = 0  # 0 -> epochs * ceil(len(dataset) / batch)
    checkpoint_every: int = 0  # 0 -> only at the end
    data: str = ""
    r1_weight: float = 1.0
    div_clamp: float = 1.0
    race_classes: int = 7
    embed_dim: int = 512
    min_ref_separation: float = 0.5

    @property
    def trainable_groups(self) -> tuple[AgeGroup, ...]:
        return tuple(AgeGroup.parse(g) for g in self.groups)

    def to_flat(self) -> dict:
        out = dataclasses.asdict(self.hp)
        out["decay_epochs"] = list(self.hp.decay_epochs)
        for f in dataclasses.fields(self):
            if f.name != "hp":
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        hp_names = {f.name for f in dataclasses.fields(HyperParams)}
        own_names = {f.name for f in dataclasses.fields(cls)} - {"hp"}
        unknown = set(flat) - hp_names - own_names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        hp = HyperParams(**{k: v for k, v in flat.items() if k in hp_names})
        own = {k: (tuple(v) if isinstance(v, list) else v) for k, v in flat.items() if k in own_names}
        return cls(hp=hp, **own)

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_flat().items():
            if isinstance(v, str):
                lines.append(f"{k} = {json.dumps(v)}")
            elif isinstance(v, bool):
                lines.append(f"{k} = {str(v).lower()}")
            elif isinstance(v, list):
                items = ", ".join(json.dumps(x) if isinstance(x, str) else repr(x) for x in v)
                lines.append(f"{k} = [{items}]")
            else:
                lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_flat(tomllib.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


class SimilarityTable:
    """10x10 mean cross-age identity similarity (percent), indexed by AgeGroup.

    Cells that had no data are NaN and reported through ``valid``.
    """

    def __init__(self, values, *, atol: float = 1e-9):
        v = np.array(values, dtype=float)
        if v.shape != (10, 10):
            raise ValueError(f"similarity table must be 10x10, got {v.shape}")
        valid = ~np.isnan(v)
        if not np.array_equal(valid, valid.T):
            raise ValueError("similarity table validity mask is not symmetric")
        vv = np.where(valid, v, 0.0)
        if np.abs(vv - vv.T).max() > atol:
            raise ValueError("similarity table is not symmetric")
        if not np.all(np.diag(v) == 100.0):
            raise ValueError("similarity table diagonal must be exactly 100")
        if np.any((vv < 0) | (vv > 100)):
            raise ValueError("similarity entries must lie in [0, 100]")
        v.setflags(write=False)
        self.values = v

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __getitem__(self, key: tuple[AgeGroup, AgeGroup]) -> float:
        a, b = key
        return float(self.values[a.index, b.index])

    def decay_violations(self) -> list[tuple[AgeGroup, AgeGroup, AgeGroup]]:
        """(row, nearer col, farther col) triples where similarity rises with the age gap."""
        out = []
        v = self.values
        for i in range(10):
            for step in (1, -1):
                j = i + step
                while 0 <= j + step < 10:
                    a, b = v[i, j], v[i, j + step]
                    if not (np.isnan(a) or np.isnan(b)) and b > a:
                        out.append((ALL_GROUPS[i], ALL_GROUPS[j], ALL_GROUPS[j + step]))
                    j += step
        return out

    @classmethod
    def from_csv(cls, path, symmetrize: bool = True) -> "SimilarityTable":
        """Read a labeled CSV (first row/column are A..J).

        Published tables carry 0.01 rounding asymmetries; ``symmetrize`` averages
        each cell with its transpose partner.
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = [c.strip() for c in rows[0][1:]]
        labels = [AgeGroup.parse(c) for c in header]
        if labels != list(ALL_GROUPS):
            raise ValueError(f"table header must list groups A..J in order, got {header}")
        body = rows[1:]
        if len(body) != 10 or [AgeGroup.parse(r[0]) for r in body] != list(ALL_GROUPS):
            raise ValueError("table rows must list groups A..J in order")
        v = np.array([[float(c) if c.strip() else np.nan for c in r[1:]] for r in body])
        if symmetrize:
            v = (v + v.T) / 2
        return cls(v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group"] + [g.name for g in ALL_GROUPS])
            for g, row in zip(ALL_GROUPS, self.values):
                w.writerow([g.name] + ["" if np.isnan(x) else f"{x:.12g}" for x in row])

    @classmethod
    def bundled(cls) -> "SimilarityTable":
        with resources.as_file(resources.files("dlat") / "data" / "similarity_table.csv") as p:
            return cls.from_csv(p)


def bundled_table_path() -> Path:
    return Path(str(resources.files("dlat") / "data" / "similarity_table.csv"))


def parse_groups(text: str | Sequence[str]) -> list[AgeGroup]:
    items = text.split(",") if isinstance(text, str) else text
    return [AgeGroup.parse(t) for t in items if t.strip()]
