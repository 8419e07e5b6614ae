"""Regular-grid observation graphs.

Nodes live on an H x W lattice in row-major order (node i = r*W + c) with
positions (c/W, r/H) in [0,1)^2. The adjacency is the sparse 4- or
8-neighbor stencil, optionally periodic, normalized row-stochastically,
symmetrically, or kept binary.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .errors import ContractViolation

NORMALIZATIONS = ("row", "sym", "none")


class GridGraph:
    """H x W lattice with a sparse normalized adjacency."""

    def __init__(
        self,
        height: int,
        width: int,
        connectivity: int = 4,
        periodic: bool = True,
        normalization: str = "row",
        self_loops: bool = False,
    ):
        if height < 1 or width < 1:
            raise ContractViolation("grid dimensions must be positive")
        if connectivity not in (4, 8):
            raise ContractViolation("connectivity must be 4 or 8")
        if normalization not in NORMALIZATIONS:
            raise ContractViolation(f"normalization must be one of {NORMALIZATIONS}")
        self.height = height
        self.width = width
        self.n_nodes = height * width
        self.connectivity = connectivity
        self.periodic = periodic
        self.normalization = normalization
        self.self_loops = self_loops

        cols, rows_idx = np.meshgrid(np.arange(width), np.arange(height))
        self.positions = np.stack(
            [cols.reshape(-1) / width, rows_idx.reshape(-1) / height], axis=1
        ).astype(np.float64)

        binary = self._build_binary()
        degrees = np.asarray(binary.sum(axis=1)).reshape(-1)
        if np.any(degrees < 1):
            raise ContractViolation("grid graph has an isolated node")
        self.degrees = degrees
        self.binary_adjacency = binary
        self.adjacency = self._normalize(binary, degrees)
        self.adjacency_t = self.adjacency.T.tocsr()
        self._row_slice_cache: dict = {}

    def _build_binary(self) -> sparse.csr_matrix:
        h, w = self.height, self.width
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
        if self.connectivity == 8:
            offsets += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
        rows, cols = [], []
        for r in range(h):
            for c in range(w):
                i = r * w + c
                for dr, dc in offsets:
                    rr, cc = r + dr, c + dc
                    if self.periodic:
                        rr, cc = rr % h, cc % w
                    elif not (0 <= rr < h and 0 <= cc < w):
                        continue
                    j = rr * w + cc
                    if j == i and not self.self_loops:
                        continue
                    rows.append(i)
                    cols.append(j)
                if self.self_loops:
                    rows.append(i)
                    cols.append(i)
        data = np.ones(len(rows), dtype=np.float64)
        mat = sparse.coo_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        # Duplicate entries collapse (e.g. 1x2 periodic grids); keep binary weights.
        mat.sum_duplicates()
        mat.data[:] = 1.0
        out = mat.tocsr()
        if (out != out.T).nnz != 0:
            raise ContractViolation("adjacency construction produced an asymmetric matrix")
        return out

    def _normalize(self, binary: sparse.csr_matrix, degrees: np.ndarray) -> sparse.csr_matrix:
        if self.normalization == "none":
            return binary.copy()
        if self.normalization == "row":
            inv = sparse.diags(1.0 / degrees)
            return (inv @ binary).tocsr()
        inv_sqrt = sparse.diags(1.0 / np.sqrt(degrees))
        return (inv_sqrt @ binary @ inv_sqrt).tocsr()

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.toarray()

    def adjacency_row_slice(self, rows: np.ndarray):
        """(A[rows, :], A[rows, :].T) as CSR, cached per row set.

        Row-slicing before a sparse product keeps the per-row dot products
        (and so the results) bit-identical to slicing afterwards.
        """
        key = rows.tobytes()
        cached = self._row_slice_cache.get(key)
        if cached is None:
            sliced = self.adjacency[rows, :].tocsr()
            cached = (sliced, sliced.T.tocsr())
            self._row_slice_cache[key] = cached
        return cached

    def node_index(self, row: int, col: int) -> int:
        return row * self.width + col

    def to_field(self, values: np.ndarray) -> np.ndarray:
        """(N, ...) node layout -> (H, W, ...) field layout."""
        return values.reshape(self.height, self.width, *values.shape[1:])

    def to_nodes(self, field: np.ndarray) -> np.ndarray:
        """(H, W, ...) field layout -> (N, ...) node layout."""
        return field.reshape(self.n_nodes, *field.shape[2:])

    def describe(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "connectivity": self.connectivity,
            "periodic": self.periodic,
            "normalization": self.normalization,
            "self_loops": self.self_loops,
        }


def retained_mode_indices(height: int, width: int, k_max: int) -> np.ndarray:
    """Flat spatial indices of Fourier modes with |k| <= k_max per axis.

    Wavenumbers follow the standard DFT layout (non-negative then negative),
    so the retained set is the four corner blocks of the spectrum.
    """
    if k_max > min(height, width) // 2:
        raise ContractViolation(
            f"k_max={k_max} exceeds floor(min(H,W)/2)={min(height, width) // 2}"
        )
    ky = np.minimum(np.arange(height), height - np.arange(height))
    kx = np.minimum(np.arange(width), width - np.arange(width))
    keep = (ky[:, None] <= k_max) & (kx[None, :] <= k_max)
    return np.flatnonzero(keep.reshape(-1)).astype(np.int64)
