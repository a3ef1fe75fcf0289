"""Domain containers: test-span grid, knots, specimens, model parameters.

Units are fixed package-wide: strengths in psi*1e3, MOE in psi*1e6,
distances in inches, knot volumes in cubic inches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CellGrid:
    """Partition of the test span into equal longitudinal cells.

    Parameters
    ----------
    n_cells : int
        Number of cells J (default 24, i.e. 4-inch cells over an 8-ft span).
    span_length : float
        Length of the test span in inches.
    width : float
        Wide-face width in inches.
    cutoff : float
        Maximum distance (inches) at which a knot can affect a cell.
    """

    n_cells: int = 24
    span_length: float = 96.0
    width: float = 5.5
    cutoff: float = 96.0

    def __post_init__(self):
        if self.n_cells < 1:
            raise ValueError(f"n_cells must be >= 1, got {self.n_cells}")
        if self.span_length <= 0:
            raise ValueError(f"span_length must be > 0, got {self.span_length}")
        if self.width <= 0:
            raise ValueError(f"width must be > 0, got {self.width}")
        if self.cutoff <= 0:
            raise ValueError(f"cutoff must be > 0, got {self.cutoff}")

    @property
    def cell_length(self) -> float:
        return self.span_length / self.n_cells

    def locate(self, x: float) -> int:
        """1-based index of the cell containing longitudinal coordinate ``x``.

        Coordinates outside the span clamp to the first/last cell; a point
        exactly on an interior boundary belongs to the cell to its right.
        """
        j = int(np.floor(x / self.cell_length)) + 1
        return min(max(j, 1), self.n_cells)


def cell_centroids(grid: CellGrid) -> np.ndarray:
    """Centroids of the grid cells as an (n_cells, 2) array of inches.

    Cell j (1-based) is centred at ((j - 1/2) * span/J, width/2).
    """
    j = np.arange(1, grid.n_cells + 1, dtype=float)
    x = (j - 0.5) * grid.cell_length
    y = np.full_like(x, grid.width / 2.0)
    return np.column_stack([x, y])


@dataclass(frozen=True)
class Knot:
    """One knot: planar centroid on the wide face, displaced volume, edge flag.

    ``x`` is the longitudinal coordinate in inches measured from the start of
    the test span; it may fall outside [0, span] for knots in gripped regions.
    ``y`` is the transverse coordinate on the wide face.
    """

    x: float
    y: float
    volume: float
    edge: bool = False

    def __post_init__(self):
        if self.volume < 0:
            raise ValueError(f"knot volume must be >= 0, got {self.volume}")


@dataclass(frozen=True)
class Specimen:
    """A lumber specimen: MOE covariate, knot list, optional test outcome.

    ``uts`` (psi*1e3) and ``failure_cell`` (1-based cell index) record the
    destructive test result and are jointly present or jointly absent.
    """

    id: str
    moe: float
    knots: tuple[Knot, ...] = field(default_factory=tuple)
    uts: Optional[float] = None
    failure_cell: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "knots", tuple(self.knots))
        if (self.uts is None) != (self.failure_cell is None):
            raise ValueError(
                f"specimen {self.id!r}: uts and failure_cell must be jointly "
                "present or jointly absent"
            )
        if self.uts is not None:
            if self.uts <= 0:
                raise ValueError(f"specimen {self.id!r}: uts must be > 0, got {self.uts}")
            if self.failure_cell < 1:
                raise ValueError(
                    f"specimen {self.id!r}: failure_cell must be >= 1, got {self.failure_cell}"
                )

    @property
    def observed(self) -> bool:
        return self.uts is not None

    def max_knot_volume(self) -> float:
        """Largest single knot volume; 0.0 for a knot-free specimen."""
        return max((k.volume for k in self.knots), default=0.0)


@dataclass(frozen=True)
class ModelParams:
    """Model parameters: AR(1) mean regression, correlation and scale,
    distance-decay rate, and the two knot-effect coefficients.
    """

    eta0: float
    eta1: float
    rho: float
    sigma: float
    beta: float
    gamma0: float
    gamma1: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")
        for name in ("sigma", "beta", "gamma0", "gamma1"):
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"{name} must be > 0, got {value}")

    PARAM_NAMES = ("eta0", "eta1", "rho", "sigma", "beta", "gamma0", "gamma1")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values) -> "ModelParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (7,):
            raise ValueError(f"expected 7 parameter values, got shape {values.shape}")
        return cls(*values)


def distance_matrix(grid: CellGrid, knots) -> np.ndarray:
    """Euclidean distances (inches) between cell centroids and knot centroids.

    Returns an (n_cells, K) matrix; (n_cells, 0) when the knot list is empty.
    """
    centroids = cell_centroids(grid)
    if len(knots) == 0:
        return np.zeros((grid.n_cells, 0))
    kx = np.array([k.x for k in knots], dtype=float)
    ky = np.array([k.y for k in knots], dtype=float)
    dx = centroids[:, 0][:, None] - kx[None, :]
    dy = centroids[:, 1][:, None] - ky[None, :]
    return np.hypot(dx, dy)


def validate_specimens(specimens, grid: CellGrid, require_observed: bool = False):
    """Check specimen invariants against a grid; raise ValueError on the first violation."""
    seen = set()
    for s in specimens:
        if s.id in seen:
            raise ValueError(f"duplicate specimen id {s.id!r}")
        seen.add(s.id)
        if require_observed and not s.observed:
            raise ValueError(f"specimen {s.id!r}: uts and failure_cell are required")
        if s.failure_cell is not None and s.failure_cell > grid.n_cells:
            raise ValueError(
                f"specimen {s.id!r}: failure_cell {s.failure_cell} outside 1..{grid.n_cells}"
            )
        for k in s.knots:
            if not 0.0 <= k.y <= grid.width:
                raise ValueError(
                    f"specimen {s.id!r}: knot transverse coordinate {k.y} outside [0, {grid.width}]"
                )
    return list(specimens)
