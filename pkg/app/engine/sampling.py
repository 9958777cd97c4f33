import zlib
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from app.engine.params import ParamSpec, ParamVector, SlotKind
from app.exceptions import ContractError

_U64 = (1 << 64) - 1


class SamplerKind(str, Enum):
    PHOTOS = "D1_photos"
    PARAMS = "D2_params"
    NOISE = "noise_hypercube"


def stream_key(seed: int, stream: str) -> np.ndarray:
    """Philox key for a named stream"""
    entropy = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))]
    return np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint64)


def stream_rng(seed: int, stream: str, index: int) -> np.random.Generator:
    """
    Counter-based generator: the sample index is the high half of the
    Philox counter, so (seed, stream, index) always yields the same draws.
    """
    counter = np.array([0, 0, int(index) & _U64, (int(index) >> 64) & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream), counter=counter))


def derive_seed(seed: int, stream: str, *indices: int) -> int:
    """Fold (seed, stream, indices) into a 63-bit seed for nested streams."""
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))] + [int(i) for i in indices]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class DomainSampler:
    kind: SamplerKind
    seed: int
    stream: str
    dim: int = 0

    def rng(self, index: int) -> np.random.Generator:
        return stream_rng(self.seed, f"{self.kind.value}/{self.stream}", index)


def draw_params(spec: ParamSpec, rng: np.random.Generator) -> ParamVector:
    physical = {}
    for slot in spec.slots:
        if slot.kind == SlotKind.CATEGORICAL:
            physical[slot.name] = int(rng.integers(0, slot.width))
        elif slot.kind == SlotKind.INTEGER:
            physical[slot.name] = int(rng.integers(int(slot.lo), int(slot.hi) + 1))
        else:
            physical[slot.name] = float(rng.uniform(slot.lo, slot.hi))
    return spec.encode(physical)


def sample_params(spec: ParamSpec, sampler: DomainSampler, n: int, start: int = 0) -> List[ParamVector]:
    """n discrete parameter vectors, each slot uniform over its choices or range."""
    if sampler.kind != SamplerKind.PARAMS:
        raise ContractError(f"sample_params needs a {SamplerKind.PARAMS.value} sampler, got {sampler.kind.value}")
    return [draw_params(spec, sampler.rng(start + i)) for i in range(n)]


def sample_noise(sampler: DomainSampler, n: int, start: int = 0) -> np.ndarray:
    """Uniform draws from the [-1, 1] hypercube of dimension sampler.dim"""
    if sampler.kind != SamplerKind.NOISE:
        raise ContractError(f"sample_noise needs a {SamplerKind.NOISE.value} sampler, got {sampler.kind.value}")
    out = np.empty((n, sampler.dim), dtype=np.float32)
    for i in range(n):
        out[i] = sampler.rng(start + i).uniform(-1.0, 1.0, size=sampler.dim)
    return out
