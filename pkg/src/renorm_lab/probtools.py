"""Bernoulli sign fields and exact checks of hypercontractive moment bounds.

Polynomials in i.i.d. signs Y_1..Y_m are reduced to multilinear form
(Y_i^2 = 1) and stored as a coefficient vector over subsets S of {0..m-1},
encoded as bit masks.  All 2^m values of f are then one Walsh-Hadamard
transform away, which makes every expectation an exact finite average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TooLarge, TooManyVariables
from .graphcalc import admissible_tuples

EXACT_MAX_VARS = 20


# ---------------------------------------------------------------------------
# sign fields


@dataclass(frozen=True, eq=False)
class OmegaField:
    """Deterministic +-1 assignment to an ordered site list.

    Site k receives the top bit of the k-th 64-bit word of the Philox-4x64
    counter stream keyed by `seed` (bit 1 -> -1, bit 0 -> +1).
    """

    seed: int
    sites: tuple
    values: np.ndarray

    def __getitem__(self, site):
        return int(self.values[self.sites.index(site)])

    def as_dict(self) -> dict:
        return dict(zip(self.sites, self.values.tolist()))


def _philox_signs(seed: int, n: int) -> np.ndarray:
    raw = np.random.Philox(key=int(seed) & (2 ** 64 - 1)).random_raw(n)
    return np.where(raw >> np.uint64(63), -1, 1).astype(np.int8)


def sample_omega(seed: int, sites) -> OmegaField:
    """Reproducible Bernoulli field on `sites` (a count or an ordered list)."""
    if isinstance(sites, (int, np.integer)):
        sites = tuple(range(int(sites)))
    else:
        sites = tuple(sites)
    return OmegaField(int(seed), sites, _philox_signs(seed, len(sites)))


def sample_omega_batch(seed: int, n_sites: int, trials: int) -> np.ndarray:
    """`trials` independent fields as rows; row k equals the stream slice
    [k*n_sites, (k+1)*n_sites) of the same generator."""
    return _philox_signs(seed, n_sites * trials).reshape(trials, n_sites)


# ---------------------------------------------------------------------------
# Boolean polynomials


@dataclass(frozen=True, eq=False)
class BooleanPoly:
    """Real polynomial in Y_0..Y_{m-1}, each Y_i = +-1.

    `terms` is a list of (monomial, coefficient) where a monomial is a tuple
    of variable indices, repeats allowed (Y_0^2 Y_3 is (0, 0, 3)).
    """

    m: int
    terms: tuple
    degree: int = field(default=-1)

    def __post_init__(self):
        terms = tuple((tuple(int(i) for i in mono), float(c)) for mono, c in self.terms)
        for mono, _ in terms:
            if any(i < 0 or i >= self.m for i in mono):
                raise ValueError("variable index out of range")
        object.__setattr__(self, "terms", terms)
        if self.degree < 0:
            object.__setattr__(self, "degree", max((len(mono) for mono, _ in terms), default=0))

    def multilinear(self) -> dict:
        """Reduction modulo Y_i^2 = 1: mask -> coefficient."""
        out = {}
        for mono, c in self.terms:
            mask = 0
            for i in mono:
                mask ^= 1 << i
            out[mask] = out.get(mask, 0.0) + c
        return out

    def coefficient_vector(self) -> np.ndarray:
        if self.m > EXACT_MAX_VARS:
            raise TooManyVariables(f"exact mode needs m <= {EXACT_MAX_VARS}, got {self.m}")
        vec = np.zeros(2 ** self.m)
        for mask, c in self.multilinear().items():
            vec[mask] += c
        return vec

    def values(self) -> np.ndarray:
        """f on every sign vector; index x has Y_i = (-1)^(bit i of x)."""
        return fwht(self.coefficient_vector())

    def scaled(self, c: float) -> "BooleanPoly":
        return BooleanPoly(self.m, tuple((mono, c * a) for mono, a in self.terms), self.degree)


def fwht(vec: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform: out[x] = sum_S vec[S] (-1)^|S & x|."""
    a = np.array(vec, dtype=float, copy=True)
    n = a.size
    if n & (n - 1):
        raise ValueError("length must be a power of two")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        x, y = a[:, 0, :].copy(), a[:, 1, :]
        a[:, 0, :] += y
        a[:, 1, :] = x - y
        a = a.reshape(n)
        h *= 2
    return a


def random_boolean_poly(rng: np.random.Generator, m: int, smax: int,
                        n_terms: int | None = None) -> BooleanPoly:
    """Random multilinear polynomial of degree exactly <= smax with Gaussian
    coefficients on randomly chosen monomials."""
    n_terms = n_terms or int(rng.integers(1, 3 * m))
    terms = []
    for _ in range(n_terms):
        k = int(rng.integers(0, min(smax, m) + 1))
        mono = tuple(sorted(rng.choice(m, size=k, replace=False).tolist()))
        terms.append((mono, float(rng.normal())))
    deg = max(len(mono) for mono, _ in terms)
    return BooleanPoly(m, tuple(terms), deg)


def exact_moment(f: BooleanPoly, p: float) -> float:
    """E|f|^p by enumeration of all 2^m sign vectors."""
    vals = f.values()
    return float(np.mean(np.abs(vals) ** p))


def bonami_check(f: BooleanPoly) -> float:
    """E f^4 / (9^s (E f^2)^2); at most 1 for a degree-s polynomial."""
    vals = f.values()
    e2 = float(np.mean(vals ** 2))
    e4 = float(np.mean(vals ** 4))
    if e2 == 0.0:
        return 0.0
    return e4 / (9.0 ** f.degree * e2 ** 2)


def moment_bound_constant(p: float, s: int) -> float:
    """The iterated-Bonami constant used as the assertion ceiling for p > 2."""
    if p <= 2:
        return 1.0
    return 3.0 ** (s * math.ceil(math.log2(p)))


def moment_equivalence_check(f: BooleanPoly, p: float) -> float:
    """(E|f|^p)^(1/p) / (E f^2)^(1/2); 0 for the zero polynomial."""
    vals = f.values()
    e2 = math.sqrt(float(np.mean(vals ** 2)))
    if e2 == 0.0:
        return 0.0
    ep = float(np.mean(np.abs(vals) ** p)) ** (1.0 / p)
    return ep / e2


# ---------------------------------------------------------------------------
# generalized Khintchine inequality


@dataclass
class KhintchineResult:
    lhs: float
    rhs: float
    ratio: float
    s: int
    p: float
    mode: str
    admissible_only: bool
    n_tuples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_arrays(arrays):
    s = len(arrays) - 1
    if s < 1:
        raise ValueError("need at least two weight arrays")
    a0 = np.asarray(arrays[0], dtype=float)
    aS = np.asarray(arrays[-1], dtype=float)
    mids = [np.asarray(a, dtype=float) for a in arrays[1:-1]]
    n = a0.size
    if a0.ndim != 1 or aS.shape != (n,) or any(m.shape != (n, n) for m in mids):
        raise ValueError("expect a vector, (s-1) square matrices and a vector")
    return s, n, a0, mids, aS


def _tuple_weights(tup, a0, mids, aS):
    w = a0[tup[:, 0]] * aS[tup[:, -1]]
    for j, m in enumerate(mids):
        w = w * m[tup[:, j], tup[:, j + 1]]
    return w


def khintchine_check(arrays, p: float = 2, mode: str = "exact",
                     admissible_only: bool = True, trials: int = 20000,
                     seed: int = 0) -> KhintchineResult:
    """Compare E_p |sum* w_n1 ... w_ns a0 a1 ... as| with the square root of
    the unrestricted sum of squared products.

    `arrays` = [a0 (vector over n1), a1..a_{s-1} (n x n), a_s (vector over n_s)],
    i.e. the outer points n, n' are already fixed.  With `admissible_only`
    the tuple sum runs over admissible tuples only.
    """
    s, n, a0, mids, aS = _check_arrays(arrays)
    if mode == "exact" and n > 14:
        raise TooLarge("exact mode supports at most 14 sites")
    if n ** s > 10 ** 8:
        raise TooLarge("tuple enumeration beyond 1e8 terms")
    tup = admissible_tuples(n, s, filtered=admissible_only).astype(np.int64)
    w = _tuple_weights(tup, a0, mids, aS)
    # right side: all tuples, squared weights
    sq = a0 ** 2
    for m in mids:
        sq = sq @ (m ** 2)
    rhs = math.sqrt(float(sq @ (aS ** 2)))
    if mode == "exact":
        masks = np.zeros(tup.shape[0], dtype=np.int64)
        for j in range(s):
            masks ^= np.left_shift(np.int64(1), tup[:, j])
        coef = np.bincount(masks, weights=w, minlength=2 ** n)
        vals = fwht(coef)
        lhs = float(np.mean(np.abs(vals) ** p)) ** (1.0 / p)
    elif mode == "mc":
        omega = sample_omega_batch(seed, n, trials).astype(float)
        prod = np.ones((trials, tup.shape[0]))
        for j in range(s):
            prod *= omega[:, tup[:, j]]
        vals = prod @ w
        lhs = float(np.mean(np.abs(vals) ** p)) ** (1.0 / p)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    ratio = 0.0 if rhs == 0.0 else lhs / rhs
    return KhintchineResult(lhs, rhs, ratio, s, p, mode, admissible_only, int(tup.shape[0]))


def random_weights(rng: np.random.Generator, n: int, s: int) -> list:
    """Nonnegative random weights [vector, (s-1) matrices, vector]."""
    return ([rng.random(n)] + [rng.random((n, n)) for _ in range(s - 1)]
            + [rng.random(n)])


def cancelled_witness(n: int = 14) -> list:
    """Weights concentrated on the cancelled pairs (k, k): a0 = a2 = 1, a1 = I.

    The unrestricted sum is sum_k w_k^2 = n deterministically while the right
    side is sqrt(n), so the ratio is sqrt(n)."""
    return [np.ones(n), np.eye(n), np.ones(n)]


def khintchine_survey(trials: int, n: int, s: int, p: float, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    ratios = [khintchine_check(random_weights(rng, n, s), p=p).ratio
              for _ in range(trials)]
    return {"n": n, "s": s, "p": p, "trials": trials, "seed": seed,
            "ratios": ratios, "max_ratio": max(ratios) if ratios else 0.0}


def bonami_survey(trials: int, m: int, smax: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    ratios, degrees = [], []
    for _ in range(trials):
        f = random_boolean_poly(rng, m, smax)
        ratios.append(bonami_check(f))
        degrees.append(f.degree)
    return {"m": m, "smax": smax, "trials": trials, "seed": seed,
            "ratios": ratios, "degrees": degrees,
            "max_ratio": max(ratios) if ratios else 0.0}
