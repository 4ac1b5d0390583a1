"""Box grids, fiber layouts and nodal displacement fields."""
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .fib_errors import EmptyLayoutError, PreconditionError


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform node grid on (0, a) x (0, b) x (0, L).

    Node (i, j, k) has index i + nx * (j + ny * k). Gamma_1 is the face
    x3 = 0, Gamma_2 the face x3 = L.
    """
    a: float
    b: float
    L: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise PreconditionError(f"Grid needs at least 2 nodes per axis, got ({self.nx}, {self.ny}, {self.nz})")
        if min(self.a, self.b, self.L) <= 0:
            raise PreconditionError(f"Box dimensions must be positive, got ({self.a}, {self.b}, {self.L})")

    @classmethod
    def from_elements(cls, a: float, b: float, L: float, ex: int, ey: int, ez: int) -> "StructuredGrid":
        return cls(a=a, b=b, L=L, nx=ex + 1, ny=ey + 1, nz=ez + 1)

    @property
    def hx(self) -> float:
        return self.a / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.b / (self.ny - 1)

    @property
    def hz(self) -> float:
        return self.L / (self.nz - 1)

    @property
    def spacing(self):
        return (self.hx, self.hy, self.hz)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def element_shape(self):
        return (self.nx - 1, self.ny - 1, self.nz - 1)

    @property
    def n_elements(self) -> int:
        ex, ey, ez = self.element_shape
        return ex * ey * ez

    @property
    def volume(self) -> float:
        return self.a * self.b * self.L

    @property
    def cross_section_area(self) -> float:
        return self.a * self.b

    def node_index(self, i, j, k):
        return i + self.nx * (j + self.ny * k)

    def coordinates(self) -> np.ndarray:
        """(n_nodes, 3) node coordinates in index order."""
        k, j, i = np.meshgrid(np.arange(self.nz), np.arange(self.ny), np.arange(self.nx), indexing="ij")
        return np.column_stack([
            i.ravel() * self.hx,
            j.ravel() * self.hy,
            k.ravel() * self.hz,
        ])

    def element_ijk(self) -> np.ndarray:
        """(n_elements, 3) lower-corner node indices of every element."""
        ex, ey, ez = self.element_shape
        k, j, i = np.meshgrid(np.arange(ez), np.arange(ey), np.arange(ex), indexing="ij")
        return np.column_stack([i.ravel(), j.ravel(), k.ravel()])

    def element_nodes(self) -> np.ndarray:
        """(n_elements, 8) node indices, local corner l = di + 2 dj + 4 dk."""
        ijk = self.element_ijk()
        corners = []
        for dk in (0, 1):
            for dj in (0, 1):
                for di in (0, 1):
                    corners.append(self.node_index(ijk[:, 0] + di, ijk[:, 1] + dj, ijk[:, 2] + dk))
        return np.column_stack(corners)

    def element_origins(self) -> np.ndarray:
        return self.element_ijk() * np.array(self.spacing)

    def element_centroids(self) -> np.ndarray:
        return self.element_origins() + 0.5 * np.array(self.spacing)

    def gamma1_nodes(self) -> np.ndarray:
        return np.arange(self.nx * self.ny)

    def gamma2_nodes(self) -> np.ndarray:
        return np.arange(self.nx * self.ny) + self.nx * self.ny * (self.nz - 1)

    def to_dict(self) -> Dict:
        return {
            "a": self.a, "b": self.b, "L": self.L,
            "nx": self.nx, "ny": self.ny, "nz": self.nz,
        }


def default_s(eps: float, r: float) -> float:
    """Truncation radius exp(-eps^(-1/2)) clamped to [2 r, eps / 2]."""
    s = math.exp(-1.0 / math.sqrt(eps))
    return min(max(s, 2.0 * r), eps / 2.0)


@dataclass
class FiberLayout:
    """Fibers of radius r on the axes (k1 eps, k2 eps) of cells inside omega."""
    a: float
    b: float
    L: float
    epsilon: float
    r: float
    s: float
    centers: np.ndarray

    @property
    def n_fibers(self) -> int:
        return len(self.centers)

    @property
    def fiber_volume(self) -> float:
        return math.pi * self.r ** 2 * self.L * self.n_fibers

    @property
    def covered_volume(self) -> float:
        """Volume of the cells carrying a fiber, n eps^2 L."""
        return self.n_fibers * self.epsilon ** 2 * self.L

    @property
    def volume_fraction(self) -> float:
        return math.pi * self.r ** 2 * self.n_fibers / (self.a * self.b)

    def nearest_center(self, x1, x2):
        """Index of, and planar offset to, the nearest fiber axis for each point."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        d1 = x1[..., None] - self.centers[:, 0]
        d2 = x2[..., None] - self.centers[:, 1]
        nearest = np.argmin(d1 * d1 + d2 * d2, axis=-1)
        X1 = np.take_along_axis(d1, nearest[..., None], axis=-1)[..., 0]
        X2 = np.take_along_axis(d2, nearest[..., None], axis=-1)[..., 0]
        return nearest, X1, X2

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon,
            "r": self.r,
            "s": self.s,
            "n_fibers": self.n_fibers,
            "volume_fraction": self.volume_fraction,
        }


def build_layout(a: float, b: float, eps: float, r: float, L: float = 1.0, s: Optional[float] = None) -> FiberLayout:
    """Enumerate every cell (k1 eps, k2 eps) + (-eps/2, eps/2)^2 inside (0, a) x (0, b).

    Args:
        a, b: cross-section sides
        eps: period
        r: fiber radius, 0 < r < eps / 2
        L: fiber length
        s: truncation radius (defaults to default_s)

    Returns:
        FiberLayout with centers in (k2, k1) lexicographic order
    """
    if not 0.0 < r < eps / 2.0:
        raise PreconditionError(f"fiber radius must satisfy 0 < r < eps/2, got r={r}, eps={eps}")
    # k eps - eps/2 >= 0 and k eps + eps/2 <= side
    k1_max = int(math.floor(a / eps - 0.5 + 1e-12))
    k2_max = int(math.floor(b / eps - 0.5 + 1e-12))
    if k1_max < 1 or k2_max < 1:
        raise EmptyLayoutError(f"No cell of size {eps} fits inside (0, {a}) x (0, {b})")
    k2, k1 = np.meshgrid(np.arange(1, k2_max + 1), np.arange(1, k1_max + 1), indexing="ij")
    centers = np.column_stack([k1.ravel() * eps, k2.ravel() * eps])
    if s is None:
        s = default_s(eps, r)
    if not r < s <= eps / 2.0:
        raise PreconditionError(f"truncation radius must satisfy r < s <= eps/2, got s={s}, r={r}, eps={eps}")
    return FiberLayout(a=a, b=b, L=L, epsilon=eps, r=r, s=s, centers=centers)


@dataclass
class DisplacementField:
    """Nodal 3-vector field on a grid."""
    grid: StructuredGrid
    values: np.ndarray
    solver_info: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.n_nodes, 3)

    @classmethod
    def zeros(cls, grid: StructuredGrid) -> "DisplacementField":
        return cls(grid=grid, values=np.zeros((grid.n_nodes, 3)))

    def flat(self) -> np.ndarray:
        """Dof vector ordered node * 3 + component."""
        return self.values.reshape(-1)
