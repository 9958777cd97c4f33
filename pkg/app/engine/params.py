import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, field_validator, model_validator

from app.exceptions import ContractError, DomainError, SpecError


class SlotKind(str, Enum):
    CATEGORICAL = "categorical"
    CONTINUOUS = "continuous"
    INTEGER = "integer"


class Slot(BaseModel):
    name: str
    kind: SlotKind
    offset: int
    labels: List[str] = []
    lo: float = 0.0
    hi: float = 0.0

    @field_validator("name")
    @classmethod
    def validate_name(cls, v):
        if not v or not v.replace("_", "").isalnum():
            raise ValueError("Slot name must be a non-empty identifier")
        return v

    @property
    def width(self) -> int:
        return len(self.labels) if self.kind == SlotKind.CATEGORICAL else 1

    @property
    def choices(self) -> int:
        """Number of legal values; 0 for continuous slots"""
        if self.kind == SlotKind.CATEGORICAL:
            return len(self.labels)
        if self.kind == SlotKind.INTEGER:
            return int(self.hi - self.lo) + 1
        return 0

    @property
    def span(self) -> slice:
        return slice(self.offset, self.offset + self.width)


class ParamSpec(BaseModel):
    """Ordered slot layout of a configuration space flattened into one vector."""

    name: str
    slots: List[Slot]

    @model_validator(mode="after")
    def validate_layout(self):
        expected = 0
        seen = set()
        for slot in self.slots:
            if slot.name in seen:
                raise SpecError(f"Duplicate slot name '{slot.name}'")
            seen.add(slot.name)
            if slot.offset != expected:
                raise SpecError(
                    f"Slot '{slot.name}' has offset {slot.offset}, expected {expected} "
                    "(offsets must be contiguous and non-overlapping)"
                )
            if slot.kind == SlotKind.CATEGORICAL and len(slot.labels) < 2:
                raise SpecError(f"Categorical slot '{slot.name}' needs at least 2 labels")
            if slot.kind != SlotKind.CATEGORICAL and not slot.hi > slot.lo:
                raise SpecError(f"Slot '{slot.name}' has an empty range")
            expected += slot.width
        return self

    @property
    def total_dim(self) -> int:
        return sum(slot.width for slot in self.slots)

    @property
    def categorical(self) -> bool:
        return all(slot.kind == SlotKind.CATEGORICAL for slot in self.slots)

    def slot(self, name: str) -> Slot:
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise KeyError(name)

    def spec_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def encode(self, physical: Dict[str, Union[int, float, str]]) -> "ParamVector":
        """
        Encode physical values into a flat vector.
        Categorical slots accept a choice index or a label.
        """
        values = np.full(self.total_dim, -1.0, dtype=np.float32)
        for slot in self.slots:
            if slot.name not in physical:
                raise DomainError(f"Missing value for slot '{slot.name}'")
            raw = physical[slot.name]
            if slot.kind == SlotKind.CATEGORICAL:
                index = slot.labels.index(raw) if isinstance(raw, str) else int(raw)
                if not 0 <= index < slot.width:
                    raise DomainError(f"Choice {raw} out of range for slot '{slot.name}'")
                values[slot.offset + index] = 1.0
            else:
                value = float(raw)
                if not slot.lo - 1e-6 <= value <= slot.hi + 1e-6:
                    raise DomainError(
                        f"Value {value} outside [{slot.lo}, {slot.hi}] for slot '{slot.name}'"
                    )
                if slot.kind == SlotKind.INTEGER and abs(value - round(value)) > 1e-6:
                    raise DomainError(f"Slot '{slot.name}' takes integer values, got {value}")
                values[slot.offset] = _to_unit(value, slot.lo, slot.hi)
        return ParamVector(values=values, discrete=True)

    def decode(self, p: "ParamVector") -> Dict[str, Union[int, float]]:
        """
        Decode a vector into physical values: choice index for categorical
        slots, rounded integers for integer slots, reals otherwise.
        """
        self.check(p)
        physical: Dict[str, Union[int, float]] = {}
        for slot in self.slots:
            group = p.values[slot.span]
            if slot.kind == SlotKind.CATEGORICAL:
                physical[slot.name] = int(np.argmax(group))
            else:
                value = _from_unit(float(group[0]), slot.lo, slot.hi)
                if slot.kind == SlotKind.INTEGER:
                    value = int(round(value))
                physical[slot.name] = value
        return physical

    def labels_of(self, p: "ParamVector") -> Dict[str, str]:
        """Label per categorical slot (used by the sprite compositor)"""
        decoded = self.decode(p)
        return {
            slot.name: slot.labels[decoded[slot.name]]
            for slot in self.slots
            if slot.kind == SlotKind.CATEGORICAL
        }

    def check(self, p: "ParamVector"):
        if p.values.shape != (self.total_dim,):
            raise ContractError(
                f"Parameter vector has shape {p.values.shape}, spec '{self.name}' "
                f"needs ({self.total_dim},)"
            )


@dataclass
class ParamVector:
    values: np.ndarray
    discrete: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise DomainError("Parameter vector contains non-finite entries")
        if np.any(np.abs(self.values) > 1.0 + 1e-6):
            raise DomainError("Parameter vector entries must lie in [-1, 1]")
        self.values = np.clip(self.values, -1.0, 1.0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.discrete == other.discrete and np.array_equal(self.values, other.values)


def _to_unit(value: float, lo: float, hi: float) -> float:
    return 2.0 * (value - lo) / (hi - lo) - 1.0


def _from_unit(value: float, lo: float, hi: float) -> float:
    return lo + (value + 1.0) * 0.5 * (hi - lo)


def polygon_spec() -> ParamSpec:
    return ParamSpec(
        name="polygon",
        slots=[
            Slot(name="vertices", kind=SlotKind.INTEGER, offset=0, lo=3, hi=6),
            Slot(name="radius", kind=SlotKind.CONTINUOUS, offset=1, lo=15.0, hi=30.0),
            Slot(name="rotation", kind=SlotKind.CONTINUOUS, offset=2, lo=-10.0, hi=10.0),
        ],
    )


# Art labels understood by the sprite compositor, in slot order
SPRITE_SLOTS: List[Tuple[str, List[str]]] = [
    ("face_shape", ["round", "oval", "wide", "square"]),
    ("skin_tone", ["porcelain", "light", "tan", "olive", "brown", "dark"]),
    ("eye_shape", ["round", "wide", "tall", "droopy"]),
    ("eye_color", ["brown", "blue", "green", "amber"]),
    ("hair_style", ["crop", "tall", "long", "side", "mohawk", "spiky"]),
    ("hair_color", ["black", "blond", "red", "blue", "green", "purple"]),
    ("mouth", ["wide", "open", "smile", "frown"]),
    ("nose", ["tall", "wide", "nostrils"]),
    ("glasses", ["none", "round", "square"]),
    ("facial_hair", ["none", "mustache", "beard"]),
]

# Reduced second engine: fewer part shapes, no facial hair
SPRITE_VR_SLOTS: List[Tuple[str, List[str]]] = [
    ("face_shape", ["round", "oval", "wide"]),
    ("skin_tone", ["porcelain", "light", "tan", "olive", "brown", "dark"]),
    ("eye_shape", ["round", "wide", "tall"]),
    ("eye_color", ["brown", "blue", "green", "amber"]),
    ("hair_style", ["crop", "tall", "long", "mohawk"]),
    ("hair_color", ["black", "blond", "red", "blue", "green", "purple"]),
    ("mouth", ["wide", "open", "smile"]),
    ("nose", ["tall", "wide", "nostrils"]),
    ("glasses", ["none", "round"]),
]


def sprite_spec(variant: str = "default") -> ParamSpec:
    if variant == "default":
        table = SPRITE_SLOTS
    elif variant == "vr":
        table = SPRITE_VR_SLOTS
    else:
        raise SpecError(f"Unknown sprite variant '{variant}'")

    slots = []
    offset = 0
    for name, labels in table:
        slots.append(Slot(name=name, kind=SlotKind.CATEGORICAL, offset=offset, labels=labels))
        offset += len(labels)
    return ParamSpec(name="sprite" if variant == "default" else f"sprite_{variant}", slots=slots)


def spec_for(domain: str, variant: Optional[str] = None) -> ParamSpec:
    if domain == "polygon":
        return polygon_spec()
    if domain == "sprite":
        return sprite_spec(variant or "default")
    raise SpecError(f"Unknown domain '{domain}'")
