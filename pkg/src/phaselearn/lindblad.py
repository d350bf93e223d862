"""Superoperators for local Lindbladians: assembly, evolution, steady states.

Vectorisation is column-stacking throughout: ``vec(rho) = rho.flatten(order="F")``,
so the generator for Hamiltonian h and jumps {L_k} is

    M = -1j (I (x) h - h^T (x) I)
        + sum_k conj(L_k) (x) L_k - 1/2 I (x) L_k^dag L_k - 1/2 (L_k^dag L_k)^T (x) I

acting on vec(rho).  The Heisenberg generator is the conjugate transpose of M.

Site 0 occupies the leftmost Kronecker slot, matching :mod:`phaselearn.lattice`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .errors import DegenerateSteadyStateError, NumericalError
from .lattice import CoordInfo, Lattice, ParamVector, Region, embed_sparse_indices

__all__ = [
    "SUPEROP_SITE_CAP",
    "TermMatrices",
    "LindbladTerm",
    "AncillaSpec",
    "ParamLindbladian",
    "Superoperator",
    "DensityMatrix",
    "assemble",
    "evolve",
    "heisenberg_evolve",
    "steady_state",
    "localize",
    "partial_trace",
    "trace_norm",
    "subfamily",
]

# Sparse superoperators have side d^(2n); beyond 9 sites the memory footprint
# leaves desk scale even in sparse storage.
SUPEROP_SITE_CAP = 9

TermMatrices = tuple[np.ndarray | None, list[np.ndarray]]


@dataclass(frozen=True)
class LindbladTerm:
    """One local term of a parameterised Lindbladian.

    ``build`` maps this term's parameter slice (length ``len(coord_indices)``)
    to ``(h, jumps)`` on the support, sites ascending, site order = Kronecker
    order.  ``h`` may be None for purely dissipative terms.  The map may be
    nonlinear in the parameters; families that are generator-linear simply
    supply a linear ``build``.
    """

    support: Region
    coord_indices: tuple[int, ...]
    build: Callable[[np.ndarray], TermMatrices]
    label: str = ""

    @property
    def n_params(self) -> int:
        return len(self.coord_indices)


@dataclass(frozen=True)
class AncillaSpec:
    """An ancilla qudit appended after the system sites.

    ``slot`` is its tensor position (>= n_system), ``anchor`` the system site
    it neighbours, ``state`` its initial density matrix.
    """

    slot: int
    anchor: int
    state: np.ndarray


class ParamLindbladian:
    """A geometrically local Lindbladian family L(x) = sum_j L_j(x_j).

    Immutable after construction.  Certifies at build time an upper bound J on
    the completely bounded 1->1 norm of every term (2 ||h|| + 2 sum ||L_k||^2,
    maximised over the corners of the per-term parameter box) and checks that
    term supports overlap each site only O(1) times.
    """

    OVERLAP_CAP = 8

    def __init__(
        self,
        lattice: Lattice,
        terms: Sequence[LindbladTerm],
        ancillas: Sequence[AncillaSpec] = (),
        name: str = "",
    ):
        self.lattice = lattice
        self.terms = tuple(terms)
        self.ancillas = tuple(ancillas)
        self.name = name
        self.n_system = lattice.n_sites
        self.n_total = self.n_system + len(self.ancillas)
        for a in self.ancillas:
            if not self.n_system <= a.slot < self.n_total:
                raise ValueError("ancilla slots must follow the system sites")

        coords: dict[int, CoordInfo] = {}
        for ti, term in enumerate(self.terms):
            for si, ci in enumerate(term.coord_indices):
                if ci in coords:
                    raise ValueError(f"coordinate {ci} owned by two terms")
                coords[ci] = CoordInfo(ti, si, term.support.as_set())
        self.m = len(coords)
        if sorted(coords) != list(range(self.m)):
            raise ValueError("coordinate indices must be 0..m-1 without gaps")
        self.coord_info = tuple(coords[i] for i in range(self.m))

        overlap = np.zeros(self.n_total, dtype=int)
        for term in self.terms:
            for s in term.support.sites:
                overlap[s] += 1
        if overlap.size and overlap.max() > self.OVERLAP_CAP:
            raise ValueError(f"term overlap {overlap.max()} exceeds bound {self.OVERLAP_CAP}")

        self.term_centers, self.term_radii = self._support_geometry()
        self.r0 = max(self.term_radii, default=0)
        self.term_strengths = self._certify_strengths()
        self.J = max(self.term_strengths, default=0.0)
        self._term_cache: dict[tuple[int, bytes], sp.csr_matrix] = {}

    # -- structure ---------------------------------------------------------

    def _support_geometry(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Per term: a center minimising the covering-ball radius, and that radius."""
        from .lattice import distance

        centers, radii = [], []
        for term in self.terms:
            sites = [s for s in term.support.sites if s < self.n_system]
            if not sites:
                anc = term.support.sites[0]
                centers.append(anc)
                radii.append(0)
                continue
            best_c, best_r = sites[0], None
            for u in sites:
                r = max(distance(self.lattice, u, v) for v in sites)
                if best_r is None or r < best_r:
                    best_c, best_r = u, r
            centers.append(best_c)
            radii.append(int(best_r))
        return tuple(centers), tuple(radii)

    def _certify_strengths(self) -> tuple[float, ...]:
        """Per-term cb-norm surrogate 2||h|| + 2 sum ||L_k||^2 over box corners."""
        out = []
        for term in self.terms:
            ell = term.n_params
            corners = (
                np.array(np.meshgrid(*([[-1.0, 1.0]] * ell))).T.reshape(-1, ell)
                if ell
                else np.zeros((1, 0))
            )
            bound = 0.0
            for corner in corners:
                h, jumps = term.build(corner)
                b = 0.0
                if h is not None:
                    b += 2.0 * float(np.linalg.norm(h, 2))
                b += 2.0 * sum(float(np.linalg.norm(L, 2)) ** 2 for L in jumps)
                bound = max(bound, b)
            out.append(bound)
        return tuple(out)

    def param_vector(self, values: np.ndarray | Sequence[float]) -> ParamVector:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.m,):
            raise ValueError(f"expected {self.m} parameters, got shape {values.shape}")
        return ParamVector(values, self.coord_info)

    def as_values(self, x: ParamVector | np.ndarray) -> np.ndarray:
        if isinstance(x, ParamVector):
            if len(x) != self.m:
                raise ValueError("parameter vector length mismatch")
            return x.values
        return self.param_vector(x).values

    def coords_for_region(self, region: Region) -> np.ndarray:
        """Sorted coordinate indices whose term support intersects ``region``."""
        target = region.as_set()
        out = [i for i, c in enumerate(self.coord_info) if c.support & target]
        return np.asarray(out, dtype=int)

    # -- assembly ----------------------------------------------------------

    def term_superoperator(self, term_index: int, x_slice: np.ndarray) -> sp.csr_matrix:
        x_slice = np.asarray(x_slice, dtype=float)
        key = (term_index, x_slice.tobytes())
        hit = self._term_cache.get(key)
        if hit is not None:
            return hit
        term = self.terms[term_index]
        d = self.lattice.local_dim
        sites = list(term.support.sites)
        k = len(sites)
        dk = d**k
        h, jumps = term.build(x_slice)
        local = np.zeros((dk * dk, dk * dk), dtype=complex)
        eye = np.eye(dk)
        if h is not None:
            if np.max(np.abs(h - h.conj().T)) > 1e-12:
                raise ValueError(f"term {term.label!r}: Hamiltonian part not Hermitian")
            local += -1j * (np.kron(eye, h) - np.kron(h.T, eye))
        for L in jumps:
            LdL = L.conj().T @ L
            local += (
                np.kron(L.conj(), L)
                - 0.5 * np.kron(eye, LdL)
                - 0.5 * np.kron(LdL.T, eye)
            )
        # vec-space slots: column factor of site s sits at slot s, row factor
        # at slot n_total + s; the local matrix above is ordered the same way.
        slots = sites + [self.n_total + s for s in sites]
        mat = _embed_sparse(local, slots, 2 * self.n_total, d)
        self._term_cache[key] = mat
        return mat


def _embed_sparse(op: np.ndarray, slots: list[int], n_slots: int, d: int) -> sp.csr_matrix:
    """Sparse embedding of a dense operator onto the given tensor slots."""
    dim = d**n_slots
    loc, rest = embed_sparse_indices(n_slots, d, slots)
    li, lj = np.nonzero(op)
    vals = op[li, lj]
    rows = (rest[:, None] + loc[li][None, :]).ravel()
    cols = (rest[:, None] + loc[lj][None, :]).ravel()
    data = np.tile(vals, rest.size)
    return sp.coo_matrix((data, (rows, cols)), shape=(dim, dim)).tocsr()


@dataclass
class Superoperator:
    """Sparse generator acting on column-stacked vec(rho)."""

    matrix: sp.csr_matrix
    n_sites: int
    local_dim: int
    picture: str = "schrodinger"
    _adjoint: "Superoperator | None" = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        dim = (self.local_dim**self.n_sites) ** 2
        if self.matrix.shape != (dim, dim):
            raise ValueError("superoperator shape inconsistent with site count")
        if self.picture == "schrodinger":
            resid = self.trace_preservation_residual()
            if resid > 1e-10:
                raise NumericalError(
                    f"trace-preservation residual {resid:.2e} exceeds 1e-10"
                )

    @property
    def hilbert_dim(self) -> int:
        return self.local_dim**self.n_sites

    def trace_preservation_residual(self) -> float:
        """max |tr(M applied to any basis element)| via the trace functional row."""
        D = self.hilbert_dim
        e = np.zeros(D * D, dtype=complex)
        e[np.arange(D) * (D + 1)] = 1.0
        return float(np.max(np.abs(self.matrix.T @ e)))

    def adjoint(self) -> "Superoperator":
        """Heisenberg-picture generator (conjugate transpose)."""
        if self._adjoint is None:
            self._adjoint = Superoperator(
                self.matrix.conj().T.tocsr(),
                self.n_sites,
                self.local_dim,
                picture="heisenberg" if self.picture == "schrodinger" else "schrodinger",
            )
        return self._adjoint

    def export_coo(self, fileobj) -> None:
        """Debug dump: one ``row col re im`` line per stored entry."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for i in order:
            v = coo.data[i]
            fileobj.write(
                f"{coo.row[i]} {coo.col[i]} {float(v.real)!r} {float(v.imag)!r}\n"
            )


@dataclass(frozen=True)
class DensityMatrix:
    """Dense Hermitian PSD trace-one operator on the full Hilbert space.

    Construction applies an admission guard (Hermiticity and trace to 1e-7,
    positivity to -1e-6 when the dimension allows a cheap check); call
    :meth:`validate` for the strict invariants.
    """

    data: np.ndarray
    n_sites: int
    local_dim: int = 2

    _GUARD_HERM = 1e-7
    _GUARD_TRACE = 1e-7
    _GUARD_EIG = -1e-6
    _CHEAP_EIG_DIM = 64
    _LANCZOS_DIM = 4096

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", arr)
        dim = self.local_dim**self.n_sites
        if arr.shape != (dim, dim):
            raise ValueError(f"density matrix shape {arr.shape} != ({dim}, {dim})")
        herm = float(np.max(np.abs(arr - arr.conj().T)))
        if herm > self._GUARD_HERM:
            raise ValueError(f"not Hermitian: residual {herm:.2e}")
        tr = complex(np.trace(arr))
        if abs(tr - 1.0) > self._GUARD_TRACE:
            raise ValueError(f"trace {tr} differs from 1")
        if dim <= self._CHEAP_EIG_DIM:
            lo = float(np.linalg.eigvalsh((arr + arr.conj().T) / 2).min())
            if lo < self._GUARD_EIG:
                raise ValueError(f"minimum eigenvalue {lo:.2e} below guard")

    def validate(self, herm_tol: float = 1e-10, trace_tol: float = 1e-10,
                 eig_floor: float = -1e-8) -> None:
        arr = self.data
        herm = float(np.max(np.abs(arr - arr.conj().T)))
        if herm > herm_tol:
            raise ValueError(f"Hermiticity residual {herm:.2e} > {herm_tol:.0e}")
        if abs(complex(np.trace(arr)) - 1.0) > trace_tol:
            raise ValueError("trace deviates from 1 beyond tolerance")
        lo = self.min_eigenvalue()
        if lo < eig_floor:
            raise ValueError(f"minimum eigenvalue {lo:.2e} < {eig_floor:.0e}")

    def min_eigenvalue(self) -> float:
        arr = (self.data + self.data.conj().T) / 2
        if arr.shape[0] <= self._LANCZOS_DIM:
            return float(np.linalg.eigvalsh(arr).min())
        val = spla.eigsh(arr, k=1, which="SA", return_eigenvectors=False)
        return float(val[0])

    def expectation(self, full_matrix: np.ndarray) -> float:
        return float(np.real(np.trace(full_matrix @ self.data)))

    @staticmethod
    def maximally_mixed(n_sites: int, local_dim: int = 2) -> "DensityMatrix":
        dim = local_dim**n_sites
        return DensityMatrix(np.eye(dim, dtype=complex) / dim, n_sites, local_dim)


def assemble(family: ParamLindbladian, x: ParamVector | np.ndarray) -> Superoperator:
    """Build the sparse Schroedinger-picture generator at parameter point x."""
    if family.n_total > SUPEROP_SITE_CAP:
        raise ValueError(
            f"superoperator assembly capped at {SUPEROP_SITE_CAP} sites, "
            f"family has {family.n_total}"
        )
    values = family.as_values(x)
    D2 = (family.lattice.local_dim**family.n_total) ** 2
    total = sp.csr_matrix((D2, D2), dtype=complex)
    for ti, term in enumerate(family.terms):
        x_slice = values[list(term.coord_indices)]
        total = total + family.term_superoperator(ti, x_slice)
    return Superoperator(total.tocsr(), family.n_total, family.lattice.local_dim)


def _integrate(matrix: sp.csr_matrix, y0: np.ndarray, t: float,
               rtol: float, atol: float) -> np.ndarray:
    sol = solve_ivp(
        lambda _t, y: matrix @ y,
        (0.0, t),
        y0,
        method="RK45",
        t_eval=[t],
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise NumericalError(f"integrator failed (stiffness/step underflow): {sol.message}")
    y = sol.y[:, -1]
    if not np.all(np.isfinite(y)):
        raise NumericalError("integrator produced non-finite values")
    return y


def evolve(superop: Superoperator, rho: DensityMatrix, t: float,
           rtol: float = 1e-9, atol: float = 1e-12) -> DensityMatrix:
    """rho(t) = exp(t L)(rho) via an adaptive explicit 4th/5th-order pair.

    No per-step trace renormalisation is applied; trace drift is a health
    metric and surfaces through the admission guard of the result.
    """
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    if superop.picture != "schrodinger":
        raise ValueError("evolve expects a Schroedinger-picture generator")
    if t == 0:
        return rho
    y0 = rho.data.flatten(order="F")
    y = _integrate(superop.matrix, y0, t, rtol, atol)
    D = superop.hilbert_dim
    return DensityMatrix(y.reshape((D, D), order="F"), superop.n_sites, superop.local_dim)


def heisenberg_evolve(superop: Superoperator, observable: np.ndarray, t: float,
                      rtol: float = 1e-9, atol: float = 1e-12) -> np.ndarray:
    """O(t) = exp(t L*)(O); satisfies tr[O evolve(rho, t)] = tr[O(t) rho]."""
    if t < 0:
        raise ValueError("evolution time must be >= 0")
    gen = superop.adjoint() if superop.picture == "schrodinger" else superop
    D = superop.hilbert_dim
    observable = np.asarray(observable, dtype=complex)
    if observable.shape != (D, D):
        raise ValueError("observable must act on the full space")
    if t == 0:
        return observable.copy()
    y = _integrate(gen.matrix, observable.flatten(order="F"), t, rtol, atol)
    return y.reshape((D, D), order="F")


def trace_norm(mat: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(mat, compute_uv=False)))


def _inverse_iteration(matrix: sp.csr_matrix, seed: np.ndarray,
                       ortho: np.ndarray | None, shift: float,
                       max_iter: int = 50, tol: float = 1e-13) -> tuple[np.ndarray, float]:
    """One eigenvector of smallest |eigenvalue - shift|, optionally deflated.

    Returns (vector, residual ||M v|| / ||v||).
    """
    lu = spla.splu((matrix - shift * sp.identity(matrix.shape[0], dtype=complex)).tocsc())
    v = seed / np.linalg.norm(seed)
    resid = np.inf
    for _ in range(max_iter):
        w = lu.solve(v)
        if ortho is not None:
            w = w - ortho * (ortho.conj() @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0 or not np.isfinite(nrm):
            raise NumericalError("inverse iteration collapsed")
        v = w / nrm
        new_resid = float(np.linalg.norm(matrix @ v))
        if abs(new_resid - resid) < tol:
            resid = new_resid
            break
        resid = new_resid
    return v, resid


def steady_state(superop: Superoperator, resid_tol: float = 1e-9) -> DensityMatrix:
    """Unique fixed point of the semigroup generated by ``superop``.

    Shifted inverse iteration targeting eigenvalue 0, seeded with the
    maximally mixed state; a second, deflated iteration probes for kernel
    degeneracy, which is an error (no silent selection).  Dense null-space
    extraction is the fallback for d^(2n) <= 4096 when iteration stalls.
    """
    M = superop.matrix
    D = superop.hilbert_dim
    norm_scale = max(1.0, float(np.abs(M).sum(axis=1).max()))
    shift = 1e-10 * norm_scale
    seed = np.eye(D, dtype=complex).flatten(order="F") / D

    try:
        v1, resid1 = _inverse_iteration(M, seed, None, shift)
    except (RuntimeError, NumericalError):
        v1, resid1 = None, np.inf
    if (v1 is None or resid1 > 1e-8 * norm_scale) and D * D <= 4096:
        # dense fallback: smallest-magnitude eigenpair
        w, V = np.linalg.eig(M.toarray())
        order = np.argsort(np.abs(w))
        if len(w) > 1 and abs(w[order[1]]) < 1e-8 * norm_scale:
            raise DegenerateSteadyStateError(
                f"non-unique steady state: second eigenvalue {w[order[1]]:.2e}"
            )
        v1 = V[:, order[0]]
        resid1 = float(np.linalg.norm(M @ v1))
    if v1 is None or resid1 > 1e-8 * norm_scale:
        raise NumericalError(f"steady-state iteration did not converge (residual {resid1:.2e})")

    # degeneracy probe: deflated iteration from an orthogonal deterministic seed
    rng = np.random.default_rng(12345)
    probe = rng.standard_normal(D * D) + 1j * rng.standard_normal(D * D)
    probe -= v1 * (v1.conj() @ probe)
    if np.linalg.norm(probe) > 1e-12:
        try:
            _, resid2 = _inverse_iteration(M, probe, v1, shift)
            if resid2 < 1e-8 * norm_scale:
                raise DegenerateSteadyStateError(
                    f"non-unique steady state: deflated kernel residual {resid2:.2e}"
                )
        except NumericalError:
            pass

    rho = v1.reshape((D, D), order="F")
    rho = (rho + rho.conj().T) / 2
    tr = float(np.real(np.trace(rho)))
    if abs(tr) < 1e-12:
        raise NumericalError("steady-state candidate is traceless")
    rho = rho / tr
    resid = trace_norm((M @ rho.flatten(order="F")).reshape((D, D), order="F"))
    if resid > resid_tol:
        raise NumericalError(f"steady-state residual {resid:.2e} exceeds {resid_tol:.0e}")
    out = DensityMatrix(rho, superop.n_sites, superop.local_dim)
    out.validate(herm_tol=1e-10, trace_tol=1e-10, eig_floor=-1e-8)
    return out


def localize(family: ParamLindbladian, x: ParamVector | np.ndarray,
             x_prime: ParamVector | np.ndarray, region: Region) -> ParamVector:
    """Hybrid parameter point of L^A: terms inside ``region`` carry x, the rest x'.

    A term is inside when its whole support lies in the region.  Assembling the
    family at the returned point realises the localized generator; the term
    count is unchanged by construction.
    """
    xv = family.as_values(x)
    xpv = family.as_values(x_prime)
    inside = region.as_set()
    out = xpv.copy()
    for term in family.terms:
        if term.support.as_set() <= inside:
            for c in term.coord_indices:
                out[c] = xv[c]
    return family.param_vector(out)


def partial_trace(data: np.ndarray, n_sites: int, keep: Sequence[int],
                  local_dim: int = 2) -> np.ndarray:
    """Reduced matrix on ``keep`` (ascending), tracing out the other sites."""
    keep = sorted(keep)
    d = local_dim
    t = data.reshape((d,) * (2 * n_sites))
    drop = [s for s in range(n_sites) if s not in keep]
    for count, s in enumerate(drop):
        ns = n_sites - count  # sites remaining in tensor
        pos = s - sum(1 for q in drop[:count] if q < s)
        t = np.trace(t, axis1=pos, axis2=ns + pos)
    dk = d ** len(keep)
    return t.reshape((dk, dk))


def subfamily(family: ParamLindbladian, region: Region) -> tuple[ParamLindbladian, np.ndarray]:
    """Family restricted to a contiguous 1D region, on its own Hilbert space.

    Keeps exactly the terms with support inside the region and relabels their
    coordinates 0..m_sub-1.  Returns the restricted family and the array
    mapping new coordinate index -> original coordinate index.
    """
    if family.lattice.dim != 1:
        raise ValueError("subfamily extraction implemented for 1D lattices only")
    if family.ancillas:
        raise ValueError("subfamily extraction does not support ancilla registers")
    sites = list(region.sites)
    if sites != list(range(sites[0], sites[-1] + 1)):
        raise ValueError("subfamily region must be contiguous")
    offset = sites[0]
    sub_lat = Lattice(1, (len(sites),), boundary="open", local_dim=family.lattice.local_dim)
    inside = region.as_set()
    new_terms: list[LindbladTerm] = []
    coord_map: list[int] = []
    for term in family.terms:
        if not term.support.as_set() <= inside:
            continue
        new_support = Region(tuple(s - offset for s in term.support.sites))
        new_idx = tuple(range(len(coord_map), len(coord_map) + term.n_params))
        coord_map.extend(term.coord_indices)
        new_terms.append(
            LindbladTerm(new_support, new_idx, term.build, label=term.label)
        )
    sub = ParamLindbladian(sub_lat, new_terms, name=f"{family.name}|{region.descriptor}")
    return sub, np.asarray(coord_map, dtype=int)
