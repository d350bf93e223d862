import numpy as np
import pytest

from phaselearn.lattice import Lattice, Region
from phaselearn.lindblad import DensityMatrix, LindbladTerm, ParamLindbladian

SM = np.array([[0, 1], [0, 0]], dtype=complex)
SP = SM.conj().T
Z = np.diag([1.0, -1.0]).astype(complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)


@pytest.fixture
def chain5():
    return Lattice(1, (5,), "open")


@pytest.fixture
def ring5():
    return Lattice(1, (5,), "periodic")


@pytest.fixture
def grid33():
    return Lattice(2, (3, 3), "open")


def amplitude_damping_family(kappa: float = 1.0) -> ParamLindbladian:
    """Single qubit, jump sqrt(kappa) sigma-minus, no parameters."""
    lat = Lattice(1, (1,))
    term = LindbladTerm(Region((0,)), (), lambda xs: (None, [np.sqrt(kappa) * SM]), "ad")
    return ParamLindbladian(lat, [term], name="amplitude_damping")


def random_density(n: int, rng: np.random.Generator) -> DensityMatrix:
    d = 2**n
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    return DensityMatrix(rho, n)


def random_two_site_family(rng: np.random.Generator, n: int = 2) -> ParamLindbladian:
    """Random parameterised nearest-neighbour family for oracle checks.

    Site terms carry a random Hermitian field scaled by one coordinate plus a
    random fixed jump; bond terms a random two-site Hamiltonian coordinate.
    """
    lat = Lattice(1, (n,), "open")
    terms = []

    def rand_herm(d):
        a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        return (a + a.conj().T) / 2

    for j in range(n):
        h0 = rand_herm(2)
        jump = 0.7 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))

        def build(xs, _h=h0, _L=jump):
            return float(xs[0]) * _h, [_L]

        terms.append(LindbladTerm(Region((j,)), (j,), build, label=f"s{j}"))
    for j in range(n - 1):
        hb = rand_herm(4)

        def build_b(xs, _h=hb):
            return float(xs[0]) * _h, []

        terms.append(LindbladTerm(Region((j, j + 1)), (n + j,), build_b, label=f"b{j}"))
    return ParamLindbladian(lat, terms, name="random2")
