"""Target distributions over bitstrings: Bars-and-Stripes, mixed Gaussian, fully correlated."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .sim import BitString, check_probvector, index_bits, width_of

KINDS = ("bas", "mixed-gaussian", "dfc")
# grid used for each BAS width (rows, cols), pixels read row-major
BAS_SHAPES = {1: (1, 1), 2: (1, 2), 4: (2, 2), 6: (2, 3), 8: (2, 4), 9: (3, 3), 10: (2, 5)}
BIJECTIONS = ("identity", "not")
BAS_WIDTH_WARNING = 10


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    width: int
    rows: Optional[int] = None
    cols: Optional[int] = None
    bijections: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset {self.kind!r}; choose from {KINDS}")
        if self.width < 1:
            raise ValueError("width must be positive")
        if self.kind == "bas":
            if self.rows is None or self.cols is None:
                if self.width not in BAS_SHAPES:
                    raise ValueError(f"no default BAS grid for width {self.width}; give rows and cols")
                r, c = BAS_SHAPES[self.width]
                object.__setattr__(self, "rows", r)
                object.__setattr__(self, "cols", c)
            if self.rows * self.cols != self.width:
                raise ValueError(f"grid {self.rows}x{self.cols} does not have {self.width} pixels")
        if self.kind == "dfc":
            bij = tuple(self.bijections or ("identity",) * (self.width - 1))
            _check_bijections(bij, self.width)
            object.__setattr__(self, "bijections", bij)

    def distribution(self) -> np.ndarray:
        if self.kind == "bas":
            return bas_distribution(self.rows, self.cols)
        if self.kind == "mixed-gaussian":
            return mixed_gaussian_distribution(self.width)
        return dfc_distribution(self.width, self.bijections)


def is_bas(bits, rows: int, cols: int) -> bool:
    """True when the row-major grid has all rows constant or all columns constant."""
    grid = np.asarray(bits, dtype=int).reshape(rows, cols)
    stripes = np.all(grid == grid[:, :1])
    bars = np.all(grid == grid[:1, :])
    return bool(stripes or bars)


def bas_distribution(rows: int, cols: int, warn_width: int = BAS_WIDTH_WARNING) -> np.ndarray:
    """Uniform over the ``2**rows + 2**cols - 2`` bar and stripe patterns."""
    if rows < 1 or cols < 1:
        raise ValueError("grid sides must be positive")
    n = rows * cols
    if n > warn_width:
        warnings.warn(f"BAS grid has {n} pixels; dense distributions grow as 2**{n}",
                      ResourceWarning, stacklevel=2)
    # stripes: each row constant; bars: each column constant
    row_bits = index_bits(rows)
    col_bits = index_bits(cols)
    stripes = np.repeat(row_bits, cols, axis=1)
    bars = np.tile(col_bits, (1, rows))
    weights = 1 << np.arange(n - 1, -1, -1)
    support = np.unique(np.concatenate([stripes @ weights, bars @ weights]))
    p = np.zeros(1 << n)
    p[support] = 1.0 / support.size
    return p


def mixed_gaussian_distribution(width: int) -> np.ndarray:
    """Two-mode Gaussian mixture on ``x = 1..2**N``, stored at index ``x - 1``."""
    if width < 1:
        raise ValueError("width must be positive")
    x_max = 2**width
    nu = x_max / 8
    mu1, mu2 = 2 * x_max / 7, 5 * x_max / 7
    x = np.arange(1, x_max + 1, dtype=float)
    w = np.exp(-0.5 * ((x - mu1) / nu) ** 2) + np.exp(-0.5 * ((x - mu2) / nu) ** 2)
    return w / w.sum()


def _check_bijections(bij: Sequence[str], width: int) -> None:
    if len(bij) != width - 1:
        raise ValueError(f"need {width - 1} bijections for width {width}, got {len(bij)}")
    bad = [b for b in bij if b not in BIJECTIONS]
    if bad:
        raise ValueError(f"bijections must be {BIJECTIONS}, got {bad}")


def dfc_distribution(width: int, bijections: Optional[Sequence[str]] = None) -> np.ndarray:
    """Half the mass on each of the two strings with ``x_j = f_j(x_1)``."""
    if width < 1:
        raise ValueError("width must be positive")
    bij = tuple(bijections) if bijections is not None else ("identity",) * (width - 1)
    _check_bijections(bij, width)
    p = np.zeros(1 << width)
    for first in (0, 1):
        bits = [first] + [first ^ (b == "not") for b in bij]
        p[BitString(tuple(bits)).index] += 0.5
    return p


def sample_dataset(dist: np.ndarray, count: int, rng: np.random.Generator) -> list[BitString]:
    dist = check_probvector(dist)
    width = width_of(dist)
    idx = rng.choice(dist.size, size=count, p=dist)
    return [BitString.from_index(int(i), width) for i in idx]


def dataset_distribution(kind: str, width: int, **kwargs) -> np.ndarray:
    return DatasetSpec(kind, width, **kwargs).distribution()
