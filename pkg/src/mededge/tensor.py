"""The universal value carrier: an n-d array in one of two precision regimes.

f32 tensors hold IEEE float32 data. q8 tensors hold uint8 codes plus an
affine (scale, zero_point) pair; `floats` dequantizes them. Quantization
itself lives in modelpack; this module only houses the container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

F32 = "f32"
Q8 = "q8"

# dtype codes used on the wire (bundle tensor table)
DTYPE_CODES = {F32: 0, Q8: 1}
DTYPE_FROM_CODE = {0: F32, 1: Q8}


def round_half_away(x: np.ndarray | float) -> np.ndarray:
    """Round to nearest integer, halves away from zero (not banker's)."""
    x = np.asarray(x)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class Tensor:
    """Shaped numeric buffer, row-major, dtype f32 or q8.

    For q8 the payload is uint8 codes and (scale, zero_point) recover the
    real values as scale * (code - zero_point). For f32 both are None.
    In-memory f32 tensors may be widened to float64 for oracle-precision
    work; serialization always narrows back to float32.
    """

    data: np.ndarray
    dtype: str = F32
    scale: float | None = None
    zero_point: int | None = None
    cache_dequant: bool = field(default=False, repr=False, compare=False)
    _f32_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def f32(cls, data) -> "Tensor":
        return cls(np.ascontiguousarray(data, dtype=np.float32), F32)

    @classmethod
    def q8(cls, data, scale: float, zero_point: int) -> "Tensor":
        arr = np.ascontiguousarray(data, dtype=np.uint8)
        return cls(arr, Q8, float(scale), int(zero_point))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def numel(self) -> int:
        return int(self.data.size)

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)

    def validate(self) -> None:
        if self.dtype == F32:
            if self.scale is not None or self.zero_point is not None:
                raise DimensionError("f32 tensor must not carry scale/zero_point")
            if self.data.dtype not in (np.float32, np.float64):
                raise DimensionError(f"f32 tensor has dtype {self.data.dtype}")
        elif self.dtype == Q8:
            if self.data.dtype != np.uint8:
                raise DimensionError(f"q8 tensor has dtype {self.data.dtype}")
            if self.scale is None or self.scale < 0:
                raise DimensionError("q8 tensor needs a nonnegative scale")
            if self.zero_point is None or not 0 <= self.zero_point <= 255:
                raise DimensionError("q8 zero_point must be in [0, 255]")
        else:
            raise DimensionError(f"unknown dtype {self.dtype!r}")

    def floats(self, cache: bool = False) -> np.ndarray:
        """Return real values; dequantizes q8, zero-copy for f32.

        With cache=True the dequantized array is memoized on the tensor
        (used by the per-layer cache policy of the inference engine).
        """
        if self.dtype == F32:
            return self.data
        if self._f32_cache is not None:
            return self._f32_cache
        out = (self.data.astype(np.float32) - np.float32(self.zero_point)) * np.float32(
            self.scale
        )
        if cache or self.cache_dequant:
            self._f32_cache = out
        return out

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), self.dtype, self.scale, self.zero_point)
