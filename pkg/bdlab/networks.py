"""
Reversible mass-action reaction networks as entropic gradient flows.

A network carries species, stoichiometric vectors x^r -> y^r, a positive
reference state omega and the equilibrium fluxes
k^r = k_+^r omega^x^r = k_-^r omega^y^r. The Becker–Döring chain, the
Smoluchowski coagulation–fragmentation system and the modified
Becker–Döring system with a total-number dependent fragmentation are
instances.
"""
import configparser
import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from bdlab.becker_doring import TINY, log_mean, spread_edges
from bdlab.errors import DetailedBalanceError, NetworkFormatError
from bdlab.rates import EquilibriumTable, rate_arrays
from bdlab.schemas import RateParams

logger = logging.getLogger(__name__)

BALANCE_RTOL = 1e-12
EXACT_NULL_SPACE_LIMIT = 200


@dataclass(frozen=True)
class ReactionNetwork:
    """
    Detailed-balanced reaction network.

    Attributes:
        species: Species names, one per column of X and Y
        reactions: Reaction names, one per row of X and Y
        X: Reactant coefficients, shape (R, N), nonnegative integers
        Y: Product coefficients, shape (R, N)
        log_omega: log of the positive reference state
        k: Equilibrium fluxes k^r
    """
    species: Tuple[str, ...]
    reactions: Tuple[str, ...]
    X: np.ndarray
    Y: np.ndarray
    log_omega: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.int64)
        Y = np.asarray(self.Y, dtype=np.int64)
        R, N = len(self.reactions), len(self.species)
        if X.shape != (R, N) or Y.shape != (R, N):
            raise ValueError(f"stoichiometry must have shape ({R}, {N}), got {X.shape} and {Y.shape}")
        if np.any(X < 0) or np.any(Y < 0):
            raise ValueError("stoichiometric coefficients must be nonnegative")
        same = np.all(X == Y, axis=1)
        if np.any(same):
            raise ValueError(f"reaction {self.reactions[int(np.argmax(same))]} has identical sides")
        if np.asarray(self.log_omega).shape != (N,) or not np.all(np.isfinite(self.log_omega)):
            raise ValueError("reference state must be positive and finite for every species")
        if np.asarray(self.k).shape != (R,) or np.any(np.asarray(self.k) <= 0):
            raise ValueError("equilibrium fluxes must be positive")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "log_omega", np.asarray(self.log_omega, dtype=float))
        object.__setattr__(self, "k", np.asarray(self.k, dtype=float))

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def omega(self) -> np.ndarray:
        return np.exp(self.log_omega)

    @property
    def stoichiometry(self) -> np.ndarray:
        """Rows x^r - y^r."""
        return self.X - self.Y

    @classmethod
    def from_rates(cls, species: Sequence[str], reactions: Sequence[str], X: np.ndarray, Y: np.ndarray,
                   omega: np.ndarray, k_plus: np.ndarray, k_minus: np.ndarray,
                   rtol: float = BALANCE_RTOL) -> "ReactionNetwork":
        """
        Build a network from forward and backward rate constants.

        Raises:
            DetailedBalanceError: If k_+ omega^x and k_- omega^y differ by more than ``rtol``
        """
        omega = np.asarray(omega, dtype=float)
        if np.any(omega <= 0):
            raise ValueError("reference state must be positive")
        log_omega = np.log(omega)
        X = np.asarray(X, dtype=np.int64)
        Y = np.asarray(Y, dtype=np.int64)
        forward = np.asarray(k_plus, dtype=float) * np.exp(X @ log_omega)
        backward = np.asarray(k_minus, dtype=float) * np.exp(Y @ log_omega)
        _check_balance(list(reactions), forward, backward, rtol)
        return cls(tuple(species), tuple(reactions), X, Y, log_omega, forward)


def _check_balance(names: List[str], forward: np.ndarray, backward: np.ndarray, rtol: float) -> None:
    mismatch = np.abs(forward - backward) > rtol * np.maximum(np.abs(forward), np.abs(backward))
    if np.any(mismatch):
        r = int(np.argmax(mismatch))
        raise DetailedBalanceError(
            f"reaction {names[r]} violates detailed balance: k+ omega^x={forward[r]:.6g}, k- omega^y={backward[r]:.6g}"
        )


def _scaled_monomials(log_omega: np.ndarray, coefficients: np.ndarray, n: np.ndarray) -> np.ndarray:
    """n^x / omega^x per row of ``coefficients``; exactly 0 when a consumed species is absent (0^0 = 1)."""
    zero = n == 0
    with np.errstate(divide="ignore"):
        log_n = np.where(zero, 0.0, np.log(np.where(zero, 1.0, n)))
    values = np.exp(coefficients @ (log_n - log_omega))
    if np.any(zero):
        values = np.where(np.any(coefficients[:, zero] > 0, axis=1), 0.0, values)
    return values


def _check_state(net: ReactionNetwork, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (net.n_species,):
        raise ValueError(f"state must have {net.n_species} entries, got shape {n.shape}")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValueError("species densities must be finite and nonnegative")
    return n


def reaction_quotients(net: ReactionNetwork, n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(n^x/omega^x, n^y/omega^y) per reaction."""
    n = _check_state(net, n)
    return _scaled_monomials(net.log_omega, net.X, n), _scaled_monomials(net.log_omega, net.Y, n)


def rn_rhs(net: ReactionNetwork, n: np.ndarray) -> np.ndarray:
    """dn/dt = -sum_r k^r (n^x/omega^x - n^y/omega^y)(x^r - y^r)."""
    forward, backward = reaction_quotients(net, n)
    return -(net.k * (forward - backward)) @ net.stoichiometry


def rn_onsager_apply(net: ReactionNetwork, n: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """K(n) phi = sum_r k^r Lambda(n^x/omega^x, n^y/omega^y) ((x^r - y^r).phi)(x^r - y^r)."""
    forward, backward = reaction_quotients(net, n)
    S = net.stoichiometry
    weights = net.k * np.asarray(log_mean(forward, backward), dtype=float)
    projections = S @ np.asarray(phi, dtype=float)
    return (weights * projections) @ S


def rn_energy_gradient(net: ReactionNetwork, n: np.ndarray) -> np.ndarray:
    """DF(n) = log(n/omega); species with n_i = 0 give -inf."""
    n = _check_state(net, n)
    with np.errstate(divide="ignore"):
        return np.log(n) - net.log_omega


def rn_free_energy(net: ReactionNetwork, n: np.ndarray) -> float:
    """Relative entropy sum_i omega_i psi(n_i/omega_i)."""
    n = _check_state(net, n)
    omega = net.omega
    positive = n > 0
    with np.errstate(divide="ignore"):
        log_n = np.log(np.where(positive, n, 1.0))
    return float(np.sum(np.where(positive, n * (log_n - net.log_omega) - n + omega, omega)))


def rn_dissipation(net: ReactionNetwork, n: np.ndarray) -> float:
    """sum_r k^r (p_r - q_r)(log p_r - log q_r); inf when exactly one side vanishes."""
    forward, backward = reaction_quotients(net, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = net.k * (forward - backward) * (np.log(forward) - np.log(backward))
    terms = np.where((forward == 0) & (backward == 0), 0.0, terms)
    terms = np.where((forward == 0) ^ (backward == 0), math.inf, terms)
    return float(np.sum(terms))


def rn_gradient_residual(net: ReactionNetwork, n: np.ndarray) -> float:
    """max norm of rn_rhs(n) + K(n) DF(n) relative to 1 + max|rn_rhs(n)|, for positive n."""
    n = _check_state(net, n)
    if np.any(n <= 0):
        raise ValueError("gradient identity needs a strictly positive state")
    rhs = rn_rhs(net, n)
    residual = rhs + rn_onsager_apply(net, n, rn_energy_gradient(net, n))
    return float(np.max(np.abs(residual)) / (1.0 + np.max(np.abs(rhs))))


def build_becker_doring_network(params: RateParams, table: EquilibriumTable, L: int,
                                z: Optional[float] = None) -> ReactionNetwork:
    """
    Becker–Döring chain as a network: x^r = e^1 + e^r, y^r = e^{r+1}, r = 1..L-1.

    The reference state is omega(z) and k^r = a_r omega_1 omega_r.
    """
    if L < 3:
        raise ValueError(f"Becker–Döring network needs L >= 3, got {L}")
    z = params.z_s if z is None else z
    log_omega = table.log_omega(z, L)
    a, _ = rate_arrays(params, L)
    R = L - 1
    X = np.zeros((R, L), dtype=np.int64)
    Y = np.zeros((R, L), dtype=np.int64)
    r = np.arange(R)
    X[r, 0] += 1
    X[r, r] += 1
    Y[r, r + 1] = 1
    k = a * np.exp(log_omega[0] + log_omega[:-1])
    species = tuple(f"C{l}" for l in range(1, L + 1))
    reactions = tuple(f"attach{l}" for l in range(1, L))
    return ReactionNetwork(species, reactions, X, Y, log_omega, k)


def build_smoluchowski(a: np.ndarray, b: np.ndarray, omega: np.ndarray, N_max: int,
                       rtol: float = BALANCE_RTOL) -> ReactionNetwork:
    """
    Smoluchowski coagulation–fragmentation network i + j <-> (i+j) truncated at i + j <= N_max.

    ``a[i-1, j-1]`` and ``b[i-1, j-1]`` are read for i <= j only; pairs with
    both rates zero are skipped.

    Raises:
        DetailedBalanceError: If a_ij omega_i omega_j != b_ij omega_{i+j} within ``rtol``
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (N_max,):
        raise ValueError(f"reference state must have N_max={N_max} entries")
    rows_x, rows_y, names, k_plus, k_minus = [], [], [], [], []
    for i in range(1, N_max):
        for j in range(i, N_max - i + 1):
            if a[i - 1, j - 1] == 0 and b[i - 1, j - 1] == 0:
                continue
            x = np.zeros(N_max, dtype=np.int64)
            x[i - 1] += 1
            x[j - 1] += 1
            y = np.zeros(N_max, dtype=np.int64)
            y[i + j - 1] = 1
            rows_x.append(x)
            rows_y.append(y)
            names.append(f"coag{i}_{j}")
            k_plus.append(a[i - 1, j - 1])
            k_minus.append(b[i - 1, j - 1])
    if not names:
        raise ValueError("no reactions with nonzero rates below N_max")
    species = [f"C{l}" for l in range(1, N_max + 1)]
    return ReactionNetwork.from_rates(
        species, names, np.array(rows_x), np.array(rows_y), omega, np.array(k_plus), np.array(k_minus), rtol,
    )


def _rref_null_space(matrix: List[List[Fraction]], n_cols: int) -> List[List[Fraction]]:
    rows = [row[:] for row in matrix]
    pivots: List[int] = []
    r = 0
    for c in range(n_cols):
        pivot = next((i for i in range(r, len(rows)) if rows[i][c] != 0), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        lead = rows[r][c]
        rows[r] = [v / lead for v in rows[r]]
        for i in range(len(rows)):
            if i != r and rows[i][c] != 0:
                factor = rows[i][c]
                rows[i] = [v - factor * w for v, w in zip(rows[i], rows[r])]
        pivots.append(c)
        r += 1
        if r == len(rows):
            break
    basis = []
    for free in (c for c in range(n_cols) if c not in pivots):
        vector = [Fraction(0)] * n_cols
        vector[free] = Fraction(1)
        for i, c in enumerate(pivots):
            vector[c] = -rows[i][free]
        basis.append(vector)
    return basis


def conservation_laws(net: ReactionNetwork) -> np.ndarray:
    """
    Basis of the conserved vectors s with (x^r - y^r).s = 0 for every reaction.

    Exact rational elimination, each basis vector scaled to coprime integers.
    The dimension is cross-checked against a floating-point null space.

    Raises:
        ValueError: If the network has more than 200 species
    """
    N = net.n_species
    if N > EXACT_NULL_SPACE_LIMIT:
        raise ValueError(f"exact null space limited to {EXACT_NULL_SPACE_LIMIT} species, got {N}")
    S = net.stoichiometry
    basis = _rref_null_space([[Fraction(int(v)) for v in row] for row in S], N)
    vectors = []
    for vector in basis:
        denominator = math.lcm(*(v.denominator for v in vector))
        integers = [int(v * denominator) for v in vector]
        divisor = math.gcd(*integers) or 1
        vectors.append([v // divisor for v in integers])
    result = np.array(vectors, dtype=float).reshape(len(vectors), N)
    numeric = linalg.null_space(S.astype(float)).shape[1]
    if numeric != result.shape[0]:
        logger.warning("null space dimension mismatch exact=%d numeric=%d", result.shape[0], numeric)
    return result


_TERM = re.compile(r"^\s*(?:(\d+)\s*\*?\s*)?([A-Za-z_][\w]*)\s*$")


def _parse_side(text: str, index: Dict[str, int], where: str) -> np.ndarray:
    vector = np.zeros(len(index), dtype=np.int64)
    text = text.strip()
    if text in ("", "0", "none"):
        return vector
    for term in text.split("+"):
        match = _TERM.match(term)
        if match is None:
            raise NetworkFormatError(f"{where}: cannot parse term {term.strip()!r}")
        coefficient, name = int(match.group(1) or 1), match.group(2)
        if name not in index:
            raise NetworkFormatError(f"{where}: unknown species {name!r}")
        vector[index[name]] += coefficient
    return vector


def load_network(path: Union[str, Path], rtol: float = BALANCE_RTOL) -> ReactionNetwork:
    """
    Read a network description.

    Format::

        [species]
        names = A, B, C
        [omega]
        A = 1.0
        ...
        [reaction.bind]
        reactants = A + B
        products = C
        k_plus = 1.0
        k_minus = 1.0

    Raises:
        NetworkFormatError: If the file is missing, malformed or incomplete
        DetailedBalanceError: If the rates are not balanced against omega
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with path.open(encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    if not parser.has_option("species", "names"):
        raise NetworkFormatError(f"{path}: missing [species] names")
    species = [name.strip() for name in parser.get("species", "names").split(",") if name.strip()]
    if len(set(species)) != len(species) or not species:
        raise NetworkFormatError(f"{path}: species names must be unique and nonempty")
    index = {name: i for i, name in enumerate(species)}
    if not parser.has_section("omega"):
        raise NetworkFormatError(f"{path}: missing [omega] section")
    try:
        omega = np.array([parser.getfloat("omega", name) for name in species])
    except (configparser.NoOptionError, ValueError) as exc:
        raise NetworkFormatError(f"{path}: [omega] {exc}") from exc
    if np.any(omega <= 0):
        raise NetworkFormatError(f"{path}: reference state must be positive")
    sections = [s for s in parser.sections() if s.startswith("reaction.")]
    if not sections:
        raise NetworkFormatError(f"{path}: no [reaction.<name>] sections")
    X, Y, k_plus, k_minus, names = [], [], [], [], []
    for section in sections:
        where = f"{path} [{section}]"
        missing = {"reactants", "products", "k_plus", "k_minus"} - set(parser.options(section))
        if missing:
            raise NetworkFormatError(f"{where}: missing {sorted(missing)}")
        X.append(_parse_side(parser.get(section, "reactants"), index, where))
        Y.append(_parse_side(parser.get(section, "products"), index, where))
        try:
            k_plus.append(parser.getfloat(section, "k_plus"))
            k_minus.append(parser.getfloat(section, "k_minus"))
        except ValueError as exc:
            raise NetworkFormatError(f"{where}: {exc}") from exc
        names.append(section.split(".", 1)[1])
    try:
        net = ReactionNetwork.from_rates(species, names, np.array(X), np.array(Y), omega,
                                         np.array(k_plus), np.array(k_minus), rtol)
    except DetailedBalanceError:
        raise
    except ValueError as exc:
        raise NetworkFormatError(f"{path}: {exc}") from exc
    logger.info("loaded network path=%s species=%d reactions=%d", path, net.n_species, net.n_reactions)
    return net


@dataclass(frozen=True)
class NetworkSystem:
    """Reaction network packaged for ``integrate_system``."""
    net: ReactionNetwork

    def rhs(self, n: np.ndarray) -> np.ndarray:
        return rn_rhs(self.net, np.maximum(n, 0.0))

    def energy(self, n: np.ndarray) -> float:
        return rn_free_energy(self.net, n)

    def dissipation(self, n: np.ndarray) -> float:
        # log space, zeros lifted to TINY
        log_n = np.log(np.maximum(n, TINY)) - self.net.log_omega
        log_p = self.net.X @ log_n
        log_q = self.net.Y @ log_n
        return float(np.sum(self.net.k * (np.exp(log_p) - np.exp(log_q)) * (log_p - log_q)))


def total_number(n: np.ndarray) -> float:
    """N(n) = sum_i n_i."""
    return float(np.sum(n))


def _modified_sides(params: RateParams, n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = rate_arrays(params, n.size)
    return a * n[0] * n[:-1], b * total_number(n) * n[1:]


def modified_bd_rhs(params: RateParams, n: np.ndarray) -> np.ndarray:
    """dn/dt from the fluxes a_r n_1 n_r - b_{r+1} N(n) n_{r+1}; conserves mass."""
    n = np.asarray(n, dtype=float)
    growth, shrink = _modified_sides(params, n)
    return -spread_edges(growth - shrink, n.size)


def modified_bd_energy(table: EquilibriumTable, n: np.ndarray) -> float:
    """F~(n) = sum_i (n_i log(n_i/(omega_i N(n))) + omega_i) with omega = omega(z_s)."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("densities must be nonnegative")
    N = total_number(n)
    if N <= 0:
        raise ValueError("modified energy needs N(n) > 0")
    log_omega = table.log_omega(table.z, n.size)
    positive = n > 0
    with np.errstate(divide="ignore"):
        log_n = np.log(np.where(positive, n, 1.0))
    terms = np.where(positive, n * (log_n - log_omega - math.log(N)), 0.0)
    return float(np.sum(terms + np.exp(log_omega)))


def modified_bd_gradient(table: EquilibriumTable, n: np.ndarray) -> np.ndarray:
    """DF~(n)_i = log(n_i / (omega_i N(n)))."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise ValueError("modified gradient needs a strictly positive state")
    return np.log(n) - table.log_omega(table.z, n.size) - math.log(total_number(n))


def modified_bd_onsager_apply(params: RateParams, n: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """
    K~(n) phi with weights Lambda(a_r n_1 n_r, b_{r+1} N(n) n_{r+1}).

    These equal k^r Lambda(n_1 n_r/(omega_1 omega_r), N(n) n_{r+1}/omega_{r+1}) by detailed balance.
    """
    n = np.asarray(n, dtype=float)
    phi = np.asarray(phi, dtype=float)
    growth, shrink = _modified_sides(params, n)
    weights = np.asarray(log_mean(growth, shrink), dtype=float)
    increments = phi[1:] - phi[:-1] - phi[0]
    return -spread_edges(weights * increments, n.size)


def modified_bd_dissipation(params: RateParams, n: np.ndarray) -> float:
    """sum_r (x - y)(log x - log y) with x = a_r n_1 n_r, y = b_{r+1} N(n) n_{r+1}; zeros lifted to TINY."""
    log_n = np.log(np.maximum(np.asarray(n, dtype=float), TINY))
    a, b = rate_arrays(params, log_n.size)
    log_N = math.log(max(float(np.sum(np.exp(log_n))), TINY))
    log_x = np.log(a) + log_n[0] + log_n[:-1]
    log_y = np.log(b) + log_N + log_n[1:]
    return float(np.sum((np.exp(log_x) - np.exp(log_y)) * (log_x - log_y)))


def modified_bd_residual(params: RateParams, table: EquilibriumTable, n: np.ndarray) -> float:
    """max|modified_bd_rhs(n) + K~(n) DF~(n)| relative to 1 + max|modified_bd_rhs(n)|."""
    rhs = modified_bd_rhs(params, n)
    residual = rhs + modified_bd_onsager_apply(params, n, modified_bd_gradient(table, n))
    return float(np.max(np.abs(residual)) / (1.0 + np.max(np.abs(rhs))))


@dataclass(frozen=True)
class ModifiedBeckerDoringSystem:
    """Modified Becker–Döring dynamics packaged for ``integrate_system``."""
    params: RateParams
    table: EquilibriumTable

    def rhs(self, n: np.ndarray) -> np.ndarray:
        return modified_bd_rhs(self.params, n)

    def energy(self, n: np.ndarray) -> float:
        return modified_bd_energy(self.table, n)

    def dissipation(self, n: np.ndarray) -> float:
        return modified_bd_dissipation(self.params, n)
