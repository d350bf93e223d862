"""Lattice geometry, regions, local observables, and parameter-vector restriction.

Conventions fixed here and used identically by every other module:

* sites are indexed row-major; site 0 is the tensor factor acted on by the
  leftmost Kronecker slot,
* the lattice metric is the l1 (Manhattan) distance, wrapped per axis under
  periodic boundary conditions,
* full-space dense embeddings are only permitted up to ``DENSE_SITE_CAP``
  sites; larger systems must stay on structured paths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

__all__ = [
    "DENSE_SITE_CAP",
    "Lattice",
    "Region",
    "LocalObservable",
    "CoordInfo",
    "ParamVector",
    "distance",
    "ball",
    "enlarge",
    "restrict",
    "embed",
    "embed_sparse_indices",
    "pauli_matrix",
    "observable_from_string",
    "l1_ball_volume",
]

DENSE_SITE_CAP = 12

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class Lattice:
    """A D-dimensional rectangular lattice of qudits (D in {1, 2})."""

    dim: int
    extent: tuple[int, ...]
    boundary: str = "open"
    local_dim: int = 2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"only D=1 and D=2 lattices supported, got D={self.dim}")
        object.__setattr__(self, "extent", tuple(int(e) for e in self.extent))
        if len(self.extent) != self.dim or any(e < 1 for e in self.extent):
            raise ValueError(f"extent {self.extent} inconsistent with dim {self.dim}")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be 'open' or 'periodic', got {self.boundary!r}")
        if self.local_dim < 2:
            raise ValueError("local_dim must be >= 2")

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extent))

    def coords(self, site: int) -> tuple[int, ...]:
        """Row-major coordinates of a site index."""
        self._check_site(site)
        if self.dim == 1:
            return (site,)
        return divmod(site, self.extent[1])

    def site(self, coords: Sequence[int]) -> int:
        """Site index of row-major coordinates."""
        if self.dim == 1:
            return int(coords[0])
        return int(coords[0]) * self.extent[1] + int(coords[1])

    def _check_site(self, s: int) -> None:
        if not 0 <= s < self.n_sites:
            raise ValueError(f"site index {s} outside [0, {self.n_sites})")

    def all_sites(self) -> range:
        return range(self.n_sites)

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "extent": list(self.extent),
                "boundary": self.boundary,
                "local_dim": self.local_dim,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "Lattice":
        obj = json.loads(text)
        return Lattice(obj["dim"], tuple(obj["extent"]), obj["boundary"], obj["local_dim"])


def distance(lattice: Lattice, u: int, v: int) -> int:
    """l1 lattice distance; wraps per axis on a torus."""
    lattice._check_site(u)
    lattice._check_site(v)
    cu, cv = lattice.coords(u), lattice.coords(v)
    total = 0
    for a, b, ext in zip(cu, cv, lattice.extent):
        step = abs(a - b)
        if lattice.boundary == "periodic":
            step = min(step, ext - step)
        total += step
    return total


@dataclass(frozen=True)
class Region:
    """An ordered set of sites, either an explicit list or a metric ball."""

    sites: tuple[int, ...]
    descriptor: str = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(sorted(set(int(s) for s in self.sites))))

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, s: int) -> bool:
        return s in set(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def as_set(self) -> frozenset[int]:
        return frozenset(self.sites)

    def diameter(self, lattice: Lattice) -> int:
        if not self.sites:
            return 0
        return max(distance(lattice, u, v) for u in self.sites for v in self.sites)

    def boundary_sites(self, lattice: Lattice) -> frozenset[int]:
        """Sites of the region with at least one neighbour outside it."""
        inside = self.as_set()
        out = []
        for s in self.sites:
            for t in lattice.all_sites():
                if t not in inside and distance(lattice, s, t) == 1:
                    out.append(s)
                    break
        return frozenset(out)

    def to_json(self) -> str:
        return json.dumps(list(self.sites))


def ball(lattice: Lattice, center: int, radius: int) -> Region:
    """All sites within l1 distance ``radius`` of ``center``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    sites = [v for v in lattice.all_sites() if distance(lattice, center, v) <= radius]
    return Region(tuple(sites), descriptor=f"ball({center},{radius})")


def enlarge(lattice: Lattice, region: Region, r: int) -> Region:
    """Union of radius-``r`` balls around every site of ``region``."""
    if r < 0:
        raise ValueError("enlargement radius must be >= 0")
    if r == 0:
        return region
    out: set[int] = set()
    for s in region.sites:
        out.update(ball(lattice, s, r).sites)
    return Region(tuple(sorted(out)), descriptor=f"enlarge({region.descriptor},{r})")


def l1_ball_volume(radius: int, dim: int) -> int:
    """Number of lattice points of Z^dim within l1 distance ``radius`` of a point."""
    if radius < 0:
        return 0
    if dim == 1:
        return 2 * radius + 1
    if dim == 2:
        return 2 * radius * radius + 2 * radius + 1
    raise ValueError("only dim 1 and 2 supported")


@dataclass(frozen=True)
class LocalObservable:
    """A Hermitian operator on a small region of the lattice."""

    support: Region
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        k = len(self.support)
        if m.shape != (2**k, 2**k) and k > 0:
            # non-qubit local dims enter through validate(); shape settled there
            pass
        if np.max(np.abs(m - m.conj().T)) > 1e-12:
            raise ValueError(f"observable {self.label!r} is not Hermitian to 1e-12")

    def validate(self, lattice: Lattice, k0: int = 2) -> None:
        d = lattice.local_dim
        side = d ** len(self.support)
        if self.matrix.shape != (side, side):
            raise ValueError(
                f"matrix side {self.matrix.shape[0]} != {side} for {len(self.support)} sites"
            )
        if self.support.sites and self.support.diameter(lattice) > k0:
            raise ValueError(
                f"support diameter {self.support.diameter(lattice)} exceeds k0={k0}"
            )

    @property
    def operator_norm(self) -> float:
        if self.matrix.size == 0:
            return 0.0
        return float(np.linalg.norm(self.matrix, 2))


def pauli_matrix(letters: str) -> np.ndarray:
    """Kronecker product of single-qubit Paulis, leftmost letter first."""
    mats = [PAULI[c] for c in letters]
    return reduce(np.kron, mats) if mats else np.eye(1, dtype=complex)


def observable_from_string(spec: str, lattice: Lattice, k0: int = 2) -> LocalObservable:
    """Parse ``"Z@4"`` or ``"XX@2,3"`` into a LocalObservable.

    Letters apply to the listed sites in the order given; sites are stored
    sorted, so the matrix is permuted accordingly.
    """
    try:
        letters, _, sitepart = spec.partition("@")
        sites = [int(s) for s in sitepart.split(",")] if sitepart else []
    except ValueError as exc:
        raise ValueError(f"bad observable spec {spec!r}") from exc
    if len(letters) != len(sites):
        raise ValueError(f"observable spec {spec!r}: {len(letters)} letters, {len(sites)} sites")
    if len(set(sites)) != len(sites):
        raise ValueError(f"observable spec {spec!r} repeats a site")
    order = np.argsort(sites)
    letters_sorted = "".join(letters[i] for i in order)
    obs = LocalObservable(Region(tuple(sites)), pauli_matrix(letters_sorted), label=spec)
    obs.validate(lattice, k0=k0)
    return obs


@dataclass(frozen=True)
class CoordInfo:
    """Where one parameter coordinate lives: owning term and its support."""

    term_index: int
    sub_index: int
    support: frozenset[int]


@dataclass(frozen=True)
class ParamVector:
    """A point of the parameter box [-1, 1]^m with its coordinate-to-term map."""

    values: np.ndarray
    coords: tuple[CoordInfo, ...]
    indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if not self.indices:
            object.__setattr__(self, "indices", tuple(range(len(vals))))
        if len(vals) != len(self.coords) or len(vals) != len(self.indices):
            raise ValueError("values, coords, and indices must have matching lengths")
        if vals.size and (np.max(vals) > 1.0 + 1e-12 or np.min(vals) < -1.0 - 1e-12):
            raise ValueError("parameter values outside [-1, 1]")

    def __len__(self) -> int:
        return len(self.values)


def restrict(x: ParamVector, region: Region) -> ParamVector:
    """Coordinates whose owning term's support intersects ``region``.

    Original coordinate indices are retained, so restriction is idempotent.
    """
    if not x.coords:
        raise ValueError("parameter vector has no coordinate-to-term map")
    target = region.as_set()
    keep = [k for k, c in enumerate(x.coords) if c.support & target]
    return ParamVector(
        values=x.values[keep],
        coords=tuple(x.coords[k] for k in keep),
        indices=tuple(x.indices[k] for k in keep),
    )


def embed_sparse_indices(
    n_sites: int, d: int, sites: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Index machinery for embedding an operator on ``sites`` into the full space.

    Returns ``(local_offsets, rest_offsets)`` such that the full-space flat index
    of (local config i, complement config j) is ``local_offsets[i] + rest_offsets[j]``.
    Site 0 carries the largest stride (leftmost Kronecker slot).
    """
    sites = list(sites)
    rest = [s for s in range(n_sites) if s not in sites]
    strides = d ** (n_sites - 1 - np.arange(n_sites, dtype=np.int64))

    def offsets(idx: list[int]) -> np.ndarray:
        k = len(idx)
        out = np.zeros(d**k, dtype=np.int64)
        for pos, s in enumerate(idx):
            digits = (np.arange(d**k, dtype=np.int64) // d ** (k - 1 - pos)) % d
            out += digits * strides[s]
        return out

    return offsets(sites), offsets(rest)


def embed(op: LocalObservable | np.ndarray, lattice: Lattice,
          sites: Sequence[int] | None = None, n_total: int | None = None) -> np.ndarray:
    """Dense full-space matrix of a local operator, identity elsewhere.

    ``n_total`` widens the space beyond the lattice (ancilla registers appended
    after the system sites).  Capped at ``DENSE_SITE_CAP`` sites.
    """
    if isinstance(op, LocalObservable):
        mat = op.matrix
        sites = list(op.support.sites)
    else:
        mat = np.asarray(op, dtype=complex)
        if sites is None:
            raise ValueError("site list required when embedding a bare matrix")
        sites = list(sites)
    n = n_total if n_total is not None else lattice.n_sites
    if n > DENSE_SITE_CAP:
        raise ValueError(f"dense embedding capped at {DENSE_SITE_CAP} sites, got {n}")
    d = lattice.local_dim
    order = np.argsort(sites)
    if list(order) != list(range(len(sites))):
        # reorder tensor factors so sites are ascending
        k = len(sites)
        t = mat.reshape((d,) * (2 * k))
        perm = list(order) + [k + int(o) for o in order]
        mat = t.transpose(perm).reshape(d**k, d**k)
        sites = sorted(sites)
    dim = d**n
    loc, rest = embed_sparse_indices(n, d, sites)
    out = np.zeros((dim, dim), dtype=complex)
    li, lj = np.nonzero(mat)
    vals = mat[li, lj]
    rows = (rest[:, None] + loc[li][None, :]).ravel()
    cols = (rest[:, None] + loc[lj][None, :]).ravel()
    out[rows, cols] = np.tile(vals, rest.size)
    return out
