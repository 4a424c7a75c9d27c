"""Finite-volume Hamiltonians -Delta + V on boxes, Green's columns, decay
surveys and the extended state zeta = xi - G (W + V~) xi.

Sites of the box [0, L)^d are ordered row-major; the origin sits at
floor(L/2) in every axis and v_n = kappa |n - origin|^-alpha with the
sup-norm and |0| = 1.  Potentials use the infinite-lattice constants.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import signal

from .errors import (
    InsufficientData,
    NeumannDivergence,
    NoConvergence,
    NotPositiveDefinite,
    ParameterViolation,
    TailTooLarge,
)
from .kernels import (
    DecayFit,
    RenormConstants,
    decay_fit,
    free_green,
    renorm_constants,
    torus_green,
)
from .probtools import sample_omega

STAGES = ("bare", "v2", "v4", "v6")
BOUNDARIES = ("dirichlet", "torus")


# ---------------------------------------------------------------------------
# constants and kernels


@functools.lru_cache(maxsize=8)
def _free_kernel(d: int, R: int):
    return free_green(d, 0.0, R)


@functools.lru_cache(maxsize=8)
def lattice_constants(d: int, R: int = 12) -> RenormConstants:
    """Canonical constants of the infinite lattice Z^d (d >= 5).

    For d < 5 the sum of G^3 diverges; the massive torus with side 2R + 1
    and m = 0.1 is used instead (smoke tests only)."""
    try:
        return renorm_constants(_free_kernel(d, R))
    except TailTooLarge:
        if d >= 5:
            raise
        return renorm_constants(torus_green(d, 2 * R + 1, 0.1))


def _kernel_box(d: int, R: int) -> np.ndarray:
    """G on the centred box |n| <= R (free kernel for d >= 3)."""
    return _free_kernel(d, max(R, 2)).box(R)


# ---------------------------------------------------------------------------
# geometry


def box_coords(d: int, L: int) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(L)] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def profile(x: np.ndarray, kappa: float, alpha: float) -> np.ndarray:
    """v at lattice points x (relative to the origin, last axis = coordinates)."""
    r = np.maximum(np.abs(x).max(axis=-1), 1).astype(float)
    return kappa * r ** (-alpha)


def laplacian(d: int, L: int, boundary: str = "dirichlet") -> sp.csr_matrix:
    """-Delta on the box: 2d on the diagonal, -1 between nearest neighbours."""
    if boundary not in BOUNDARIES:
        raise ParameterViolation(f"boundary must be one of {BOUNDARIES}")
    I = sp.identity(L, format="csr")
    if boundary == "dirichlet":
        T = sp.diags([-np.ones(L - 1), -np.ones(L - 1)], [-1, 1], format="csr")
    else:
        T = sp.diags([-np.ones(L - 1), -np.ones(L - 1)], [-1, 1], format="lil")
        if L > 2:
            T[0, L - 1] -= 1.0
            T[L - 1, 0] -= 1.0
        else:
            T[0, 1] -= 1.0
            T[1, 0] -= 1.0
        T = T.tocsr()
    out = 2 * d * sp.identity(L ** d, format="csr")
    for k in range(d):
        factors = [I] * d
        factors[k] = T
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        out = out + term
    return out.tocsr()


def laplacian_min_eigenvalue(d: int, L: int, boundary: str, mass: float) -> float:
    if boundary == "dirichlet":
        return 2 * d * (1 - math.cos(math.pi / (L + 1))) + mass ** 2
    return mass ** 2


# ---------------------------------------------------------------------------
# R6 by truncated sums


def _orbit_key(x: np.ndarray) -> tuple:
    return tuple(sorted(np.abs(x).tolist(), reverse=True))


def r6_diagonal(coords: np.ndarray, kappa: float, alpha: float, constants: RenormConstants,
                radius: int = 6, lag_radius: int = 1) -> np.ndarray:
    """R6(n) = v_n^2 sum_{a, b} G~(n - a) v_a^2 M(a - b) v_b^2 G~(b - n).

    a and b range over |a - n| <= radius, |b - n| <= radius and the pair is
    kept when |a - b| <= lag_radius; M = G~^3 off the origin and rho - sigma^3
    at the origin.  The value depends on n only through its hypercubic orbit,
    so one sum is done per orbit.
    """
    d = coords.shape[1]
    if kappa == 0.0:
        return np.zeros(len(coords))
    s, rho = constants.sigma, constants.rho
    G = _kernel_box(d, max(radius, lag_radius))
    cen = G.shape[0] // 2
    Gt = G.copy()
    Gt[(cen,) * d] = 0.0
    leg = Gt[(slice(cen - radius, cen + radius + 1),) * d]
    w = 2 * radius + 1
    lags = []
    for c in itertools.product(range(-lag_radius, lag_radius + 1), repeat=d):
        if c > (0,) * d:
            mval = Gt[tuple(cen + ci for ci in c)] ** 3
            lags.append((c, 2.0 * mval))
    m0 = rho - s ** 3
    rng = np.arange(-radius, radius + 1)
    offs = np.stack(np.meshgrid(*([rng] * d), indexing="ij"), axis=-1)
    cache = {}
    out = np.empty(len(coords))
    for i, x in enumerate(coords):
        key = _orbit_key(x)
        if key not in cache:
            rep = np.array(key)
            y = leg * profile(rep + offs, 1.0, alpha) ** 2
            q = m0 * float((y * y).sum())
            for c, mval in lags:
                lo = tuple(slice(max(0, -ci), w - max(0, ci)) for ci in c)
                hi = tuple(slice(max(0, ci), w - max(0, -ci)) for ci in c)
                q += mval * float((y[lo] * y[hi]).sum())
            cache[key] = q * profile(rep, 1.0, alpha) ** 2
        out[i] = cache[key]
    return kappa ** 6 * out


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    d: int
    L: int
    boundary: str
    mass: float
    stage: str
    kappa: float
    alpha: float
    seed: int
    constants: RenormConstants
    matrix: sp.csr_matrix
    v: np.ndarray
    omega: np.ndarray
    potential: np.ndarray
    coords: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.matrix.shape[0]

    @property
    def origin(self) -> np.ndarray:
        return np.full(self.d, self.L // 2)

    def index(self, site) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in site), (self.L,) * self.d))

    def inner_mask(self) -> np.ndarray:
        """Sites of the inner half-box |n - origin| <= L // 4."""
        return np.abs(self.coords - self.origin).max(axis=1) <= self.L // 4

    def config(self) -> dict:
        return {"d": self.d, "L": self.L, "boundary": self.boundary, "mass": self.mass,
                "stage": self.stage, "kappa": self.kappa, "alpha": self.alpha,
                "seed": self.seed, "sigma": self.constants.sigma,
                "rho": self.constants.rho, "eta": self.constants.eta,
                **{k: v for k, v in self.meta.items() if not k.startswith("_")}}


def stage_potential(v, omega, stage: str, constants: RenormConstants, r6=None) -> np.ndarray:
    """V^(stage) on the sites: v omega + sigma v^2 - rho v^4 + c6 v^6 + R6."""
    if stage not in STAGES:
        raise ParameterViolation(f"stage must be one of {STAGES}")
    pot = v * omega
    k = STAGES.index(stage)
    if k >= 1:
        pot = pot + constants.sigma * v ** 2
    if k >= 2:
        pot = pot - constants.rho * v ** 4
    if k >= 3:
        pot = pot + constants.c6 * v ** 6 + (0.0 if r6 is None else r6)
    return pot


def assemble(d: int, L: int, boundary: str = "dirichlet", stage: str = "v6",
             kappa: float = 0.05, alpha: float = 0.3, seed: int = 0,
             constants: RenormConstants | None = None, mass: float = 0.0,
             r_trunc: int = 6, lag_radius: int = 1, check_pd: bool = True) -> Hamiltonian:
    """Sparse H = -Delta + m^2 + V^(stage) on the box [0, L)^d."""
    if d < 1 or L < 2:
        raise ParameterViolation("need d >= 1 and L >= 2")
    if kappa < 0 or not 0 < alpha:
        raise ParameterViolation("need kappa >= 0 and alpha > 0")
    if boundary == "torus" and mass <= 0 and kappa == 0:
        raise ParameterViolation("the torus needs m > 0")
    constants = constants or lattice_constants(d)
    coords = box_coords(d, L)
    rel = coords - L // 2
    v = profile(rel, kappa, alpha)
    omega = sample_omega(seed, len(coords)).values.astype(float)
    r6 = None
    if stage == "v6":
        r6 = _r6_cached(d, L, kappa, alpha, constants.sigma, constants.rho, r_trunc, lag_radius)
    pot = stage_potential(v, omega, stage, constants, r6)
    H = laplacian(d, L, boundary) + sp.diags(pot + mass ** 2, format="csr")
    meta = {"r_trunc": r_trunc, "lag_radius": lag_radius}
    if check_pd:
        meta.update(_pd_check(H, d, L, boundary, mass, pot))
    return Hamiltonian(d, L, boundary, float(mass), stage, float(kappa), float(alpha),
                       int(seed), constants, H.tocsr(), v, omega, pot, coords, meta)


@functools.lru_cache(maxsize=16)
def _r6_cached(d, L, kappa, alpha, sigma, rho, r_trunc, lag_radius):
    coords = box_coords(d, L) - L // 2
    out = r6_diagonal(coords, kappa, alpha, RenormConstants(sigma, rho, 0.0), r_trunc, lag_radius)
    out.setflags(write=False)
    return out


def _pd_check(H, d, L, boundary, mass, pot) -> dict:
    """Weyl bound lambda_min >= lambda_min(-Delta) + min V; Lanczos if inconclusive."""
    bound = laplacian_min_eigenvalue(d, L, boundary, mass) + float(pot.min())
    if bound > 0:
        return {"pd_method": "weyl", "lambda_min_lower_bound": bound}
    try:
        lam = sla.eigsh(H, k=1, which="SA", tol=1e-8, return_eigenvectors=False)[0]
    except sla.ArpackNoConvergence as exc:
        raise NoConvergence("Lanczos did not converge in the PD check") from exc
    if lam <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam:.3e} <= 0; reduce kappa")
    return {"pd_method": "lanczos", "lambda_min": float(lam)}


# ---------------------------------------------------------------------------
# Green's columns


@dataclass
class GreenColumn:
    values: np.ndarray
    source: int
    iterations: int
    residual: float


def solve(H: Hamiltonian | sp.spmatrix, rhs: np.ndarray, tol: float = 1e-8,
          maxiter: int = 5000) -> tuple:
    """Conjugate gradients for the PD system; returns (x, iterations, relative residual)."""
    A = H.matrix if isinstance(H, Hamiltonian) else H
    rhs = np.asarray(rhs, dtype=float)
    nb = np.linalg.norm(rhs)
    if nb == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = sla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=maxiter, callback=cb)
    res = float(np.linalg.norm(A @ x - rhs) / nb)
    if info != 0 or res > tol:
        raise NoConvergence(f"CG stopped after {count[0]} iterations, residual {res:.2e}")
    return x, count[0], res


def green_column(H: Hamiltonian, source, tol: float = 1e-8) -> GreenColumn:
    src = source if isinstance(source, (int, np.integer)) else H.index(source)
    e = np.zeros(H.n_sites)
    e[src] = 1.0
    x, it, res = solve(H, e, tol)
    return GreenColumn(x, int(src), it, res)


# ---------------------------------------------------------------------------
# decay surveys


def default_sources(d: int, L: int) -> list:
    """Origin and two displaced points of the inner half-box, off the e1 axis."""
    o = np.full(d, L // 2)
    step = max(L // 4, 1)
    out = [o.copy()]
    for k in (1, 2):
        p = o.copy()
        p[k % d] += step if k == 1 else -step
        out.append(p)
    return out


def column_fit(H: Hamiltonian, col: GreenColumn, window=(1, 4)) -> DecayFit:
    """Fit |G(n0, n0 + r e)| for r in the window, e = +-e1 with more room."""
    site = H.coords[col.source]
    room_up = H.L - 1 - site[0]
    room_dn = site[0]
    sign = 1 if room_up >= room_dn else -1
    r = np.arange(window[0], window[1] + 1)
    if r.max() > max(room_up, room_dn):
        raise InsufficientData("fit window leaves the box")
    pts = np.repeat(site[None, :], len(r), axis=0)
    pts[:, 0] += sign * r
    idx = np.ravel_multi_index(tuple(pts.T), (H.L,) * H.d)
    return decay_fit(r, col.values[idx])


@dataclass
class DecaySurvey:
    fits: list                 # dicts with seed, source, exponent, iterations ...
    threshold: float
    fraction_required: float = 0.9

    @property
    def exponents(self) -> np.ndarray:
        return np.array([f["exponent"] for f in self.fits])

    @property
    def fraction(self) -> float:
        e = self.exponents
        return float(np.mean(e <= self.threshold)) if e.size else 0.0

    @property
    def passed(self) -> bool:
        return self.fraction >= self.fraction_required

    def quantiles(self) -> dict:
        e = self.exponents
        return {str(q): float(np.quantile(e, q)) for q in (0.0, 0.1, 0.5, 0.9, 1.0)}

    def to_dict(self) -> dict:
        return {"fits": self.fits, "threshold": self.threshold,
                "fraction": self.fraction, "quantiles": self.quantiles(),
                "pass": self.passed}


def decay_survey(d: int = 5, L: int = 11, kappa: float = 0.05, alpha: float = 0.3,
                 seeds=range(5), sources=None, window=(1, 4), stage: str = "v6",
                 boundary: str = "dirichlet", mass: float = 0.0, tol: float = 1e-8,
                 slack: float = 0.5) -> DecaySurvey:
    """Decay fits over seeds x sources; pass iff 90% have exponent <= -(d - 2 - slack)."""
    sources = default_sources(d, L) if sources is None else sources
    fits = []
    for seed in seeds:
        H = assemble(d, L, boundary, stage, kappa, alpha, int(seed), mass=mass)
        for src in sources:
            col = green_column(H, src, tol)
            fit = column_fit(H, col, window)
            fits.append({"seed": int(seed), "source": [int(c) for c in np.atleast_1d(src)],
                         "exponent": fit.exponent, "intercept": fit.intercept,
                         "fit_residual": fit.residual, "iterations": col.iterations,
                         "solve_residual": col.residual,
                         "rayleigh": float(col.values @ (H.matrix @ col.values))})
    return DecaySurvey(fits, -(d - 2 - slack))


# ---------------------------------------------------------------------------
# extended state


def dirichlet_solver(d: int, L: int, mass: float = 0.0):
    """Exact (-Delta_D + m^2)^-1 on the box through the type-I sine transform."""
    k = np.arange(1, L + 1)
    lam1 = 2 - 2 * np.cos(np.pi * k / (L + 1))
    lam = np.full((L,) * d, mass ** 2)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = L
        lam = lam + lam1.reshape(shape)

    def apply(x):
        X = scipy.fft.dstn(np.asarray(x, dtype=float).reshape((L,) * d), type=1, norm="ortho")
        return scipy.fft.idstn(X / lam, type=1, norm="ortho").ravel()

    return apply


def w_operator(d: int, L: int, kappa: float, alpha: float, constants: RenormConstants,
               radius: int = 6):
    """x -> v^2 (M * (v^2 x)) on the box with M truncated to |c| <= radius."""
    G = _kernel_box(d, radius)
    cen = G.shape[0] // 2
    M = G.copy()
    M[(cen,) * d] = 0.0
    M = M ** 3
    M[(cen,) * d] = constants.rho - constants.sigma ** 3
    v2 = profile(box_coords(d, L) - L // 2, kappa, alpha) ** 2

    def apply(x):
        y = (v2 * x).reshape((L,) * d)
        return v2 * signal.fftconvolve(y, M, mode="same").ravel()

    return apply


@dataclass
class ExtendedStateResult:
    zeta: np.ndarray
    xi: np.ndarray
    residual_inf: float
    deviation_inf: float
    kappa: float
    neumann_terms: int
    boundary_estimate: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "residual_inf": self.residual_inf,
                "deviation_inf": self.deviation_inf, "neumann_terms": self.neumann_terms,
                "boundary_estimate": self.boundary_estimate, **self.meta}


def extended_state(d: int = 5, L: int = 9, kappa: float = 0.04, alpha: float = 0.3,
                   seed: int = 0, stage: str = "v6", tol: float = 1e-10,
                   w_radius: int = 6, max_terms: int = 200) -> ExtendedStateResult:
    """xi = 1 + sum_k (G0 W)^k 1 and zeta = xi - G (W + V~) xi on a Dirichlet box.

    Norms are taken over the inner half-box.  With the exact Dirichlet G0,
    H zeta = -Delta 1 - W xi + (-Delta) u = -Delta_D 1, which lives on the
    boundary layer only; that value is reported as the boundary estimate.
    """
    H = assemble(d, L, "dirichlet", stage, kappa, alpha, seed)
    inner = H.inner_mask()
    one = np.ones(H.n_sites)
    if kappa == 0.0:
        return ExtendedStateResult(one.copy(), one.copy(), 0.0, 0.0, 0.0, 0, 0.0,
                                   {"config": H.config()})
    G0 = dirichlet_solver(d, L)
    W = w_operator(d, L, kappa, alpha, H.constants, w_radius)
    u = np.zeros_like(one)
    term = one
    prev = None
    n_terms = 0
    for k in range(1, max_terms + 1):
        term = G0(W(term))
        size = float(np.abs(term).max())
        if prev is not None and prev > 0 and size / prev >= 0.5:
            raise NeumannDivergence(f"successive-term ratio {size / prev:.3f} >= 1/2 at k={k}")
        u += term
        n_terms = k
        prev = size
        if size <= tol * max(float(np.abs(u).max()), 1e-300) or size == 0.0:
            break
    else:
        raise NoConvergence("Neumann series did not reach the tolerance")
    xi = one + u
    rhs = W(xi) + H.potential * xi
    corr, _, res = solve(H, rhs, tol=tol)
    zeta = xi - corr
    Hz = H.matrix @ zeta
    lap1 = laplacian(d, L, "dirichlet") @ one
    return ExtendedStateResult(
        zeta=zeta, xi=xi,
        residual_inf=float(np.abs(Hz[inner]).max()),
        deviation_inf=float(np.abs(zeta[inner] - 1.0).max()),
        kappa=float(kappa), neumann_terms=n_terms,
        boundary_estimate=float(np.abs(lap1[inner]).max()) + res,
        meta={"config": H.config(), "solve_residual": res,
              "full_residual_inf": float(np.abs(Hz).max())})


@dataclass
class ExtStateSweep:
    results: list
    ratios: list
    spread: float
    limit: float = 4.0

    @property
    def passed(self) -> bool:
        return bool(self.spread <= self.limit)

    def to_dict(self) -> dict:
        return {"results": [r.to_dict() for r in self.results], "ratios": self.ratios,
                "spread": self.spread, "limit": self.limit, "pass": self.passed}


def extstate_sweep(kappas=(0.01, 0.04, 0.16), d: int = 5, L: int = 9, alpha: float = 0.3,
                   seed: int = 0, limit: float = 4.0, **kw) -> ExtStateSweep:
    """deviation_inf / sqrt(kappa) across kappa; spread = max / min."""
    res = [extended_state(d, L, k, alpha, seed, **kw) for k in kappas]
    ratios = [r.deviation_inf / math.sqrt(r.kappa) for r in res]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    return ExtStateSweep(res, ratios, float(spread), limit)


def perturbation_continuity(d: int = 5, L: int = 7, kappas=(0.01, 0.02), seed: int = 0,
                            alpha: float = 0.3, tol: float = 1e-11) -> dict:
    """||G_kappa e0 - G_0 e0|| / kappa for small kappa (should be roughly constant)."""
    base = green_column(assemble(d, L, "dirichlet", "bare", 0.0, alpha, seed), np.full(d, L // 2), tol)
    out = {}
    for k in kappas:
        col = green_column(assemble(d, L, "dirichlet", "v6", k, alpha, seed), np.full(d, L // 2), tol)
        out[k] = float(np.abs(col.values - base.values).max() / k)
    return out
