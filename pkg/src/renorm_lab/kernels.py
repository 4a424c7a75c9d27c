"""Lattice Green's kernels of -Delta + m^2, renormalization constants and
power-law diagnostics.

Conventions: |n| is the sup-norm with |0| = 1, the Laplacian symbol is
2d - 2 sum_j cos(2 pi xi_j), and G~ is G with the n = 0 entry set to zero.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal, special

from .errors import (
    DimensionTooSmall,
    InsufficientData,
    ParameterViolation,
    QuadratureFailure,
    SingularOperator,
    TailTooLarge,
    TruncationWarning,
)


def supnorm(n) -> np.ndarray:
    """|n| = max_i |n_i| with the convention |0| = 1 (row-wise for 2-d input)."""
    a = np.abs(np.asarray(n))
    return np.maximum(a.max(axis=-1), 1)


def laplacian_symbol(xi, d: int | None = None) -> float:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if d is not None and xi.size == 1 and d > 1:
        xi = np.full(d, xi.item())
    return float(2 * xi.size - 2 * np.cos(2 * np.pi * xi).sum())


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """Translation-invariant kernel G(n).

    For geometry "torus" `table` is the full periodic grid of shape (L,)*d.
    For geometry "free" `table` holds values on the canonical offsets
    (absolute values sorted in decreasing order) listed in `offsets`; any
    other offset in the box |n| <= R is reached through hypercubic symmetry.
    """

    d: int
    geometry: str
    extent: int
    mass: float
    table: np.ndarray
    offsets: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def _codes(self, n: np.ndarray) -> np.ndarray:
        c = -np.sort(-np.abs(n), axis=-1)
        return np.ravel_multi_index(tuple(np.moveaxis(c, -1, 0)), (self.extent + 1,) * self.d)

    def __call__(self, n) -> np.ndarray | float:
        n = np.asarray(n, dtype=np.int64)
        if self.geometry == "torus":
            idx = tuple(np.moveaxis(np.mod(n, self.extent), -1, 0))
            out = self.table[idx]
        else:
            if np.abs(n).max(initial=0) > self.extent:
                raise ParameterViolation(f"offset outside the computed box R={self.extent}")
            out = self._lookup()[self._codes(n)]
        return float(out) if np.ndim(out) == 0 else out

    def _lookup(self) -> np.ndarray:
        lut = self.meta.get("_lut")
        if lut is None:
            lut = np.full((self.extent + 1) ** self.d, np.nan)
            lut[self._codes(self.offsets)] = self.table
            self.meta["_lut"] = lut
        return lut

    @property
    def sigma(self) -> float:
        return float(self(np.zeros(self.d, dtype=int)))

    def axis(self, radii) -> np.ndarray:
        radii = np.asarray(radii, dtype=np.int64)
        pts = np.zeros((radii.size, self.d), dtype=np.int64)
        pts[:, 0] = radii
        return np.asarray(self(pts))

    def box(self, R: int | None = None) -> np.ndarray:
        """Values on the centred box |n| <= R as an array of shape (2R+1,)*d."""
        if R is None:
            R = self.extent if self.geometry == "free" else self.extent // 2
        rng = np.arange(-R, R + 1)
        grid = np.stack(np.meshgrid(*([rng] * self.d), indexing="ij"), axis=-1)
        return np.asarray(self(grid))

    def config(self) -> dict:
        return {"d": self.d, "geometry": self.geometry, "extent": self.extent, "mass": self.mass}


def canonical_offsets(d: int, R: int) -> np.ndarray:
    """All offsets 0 <= n_d <= ... <= n_1 <= R, stored with decreasing entries."""
    rows = [c[::-1] for c in itertools.combinations_with_replacement(range(R + 1), d)]
    return np.array(rows, dtype=np.int64).reshape(-1, d)


def orbit_sizes(offsets: np.ndarray) -> np.ndarray:
    """Number of lattice points in the hypercubic orbit of each canonical offset."""
    d = offsets.shape[1]
    out = np.empty(len(offsets), dtype=np.int64)
    for i, row in enumerate(offsets):
        _, counts = np.unique(row, return_counts=True)
        perms = math.factorial(d) // math.prod(math.factorial(c) for c in counts)
        out[i] = perms * 2 ** int(np.count_nonzero(row))
    return out


def _ive_table(orders: np.ndarray, x: float) -> np.ndarray:
    """exp(-x) I_k(x) for k in orders; Hankel asymptotics for very large x."""
    if not np.isfinite(x):
        return np.zeros(orders.size)
    if x < 1e6:
        return special.ive(orders, x)
    mu = 4.0 * orders.astype(float) ** 2
    term = np.ones(orders.size)
    acc = term.copy()
    for j in range(1, 8):
        term = -term * (mu - (2 * j - 1) ** 2) / (j * 8.0 * x)
        acc += term
    return acc / math.sqrt(2 * math.pi * x)


def free_green(d: int, m: float = 0.0, R: int = 8, rtol: float = 1e-10) -> GreenKernel:
    """G(n) = int_0^inf exp(-(2d+m^2) t) prod_i I_{|n_i|}(2t) dt on the box |n| <= R.

    Evaluated for all canonical offsets at once by adaptive vector quadrature.
    A coarse first pass fixes per-offset scales so that the second pass
    controls the relative error of every entry, not just the largest one.
    """
    if m == 0 and d < 3:
        raise DimensionTooSmall(f"massless free kernel diverges for d={d} < 3")
    if R < 1:
        raise ParameterViolation("R must be >= 1")
    offs = canonical_offsets(d, R)
    orders = np.arange(R + 1)
    m2 = float(m) ** 2

    def integrand(t):
        tab = _ive_table(orders, 2.0 * t)
        return tab[offs].prod(axis=1) * math.exp(-m2 * t)

    rough, _ = integrate.quad_vec(integrand, 0, np.inf, epsrel=1e-5, norm="max")
    if np.any(rough <= 0):
        raise QuadratureFailure("non-positive coarse kernel value")
    scale = 1.0 / rough
    res, err, info = integrate.quad_vec(
        lambda t: integrand(t) * scale, 0, np.inf, epsrel=rtol, epsabs=0.0,
        norm="max", limit=20000, full_output=True,
    )
    if not info.success or err > 10 * rtol * np.abs(res).max():
        raise QuadratureFailure(f"free_green(d={d}, m={m}, R={R}): error {err:.2e} above rtol {rtol:.0e}")
    vals = res * rough
    return GreenKernel(d, "free", R, float(m), vals, offs, {"quad_error": float(err)})


def torus_green(d: int, L: int, m: float, project_zero_mode: bool = False) -> GreenKernel:
    """Kernel of (-Delta + m^2)^{-1} on (Z/LZ)^d by FFT.

    With project_zero_mode the k = 0 term 1/(m^2 L^d) is dropped; this gives a
    kernel that mimics Z^d at small m (see the decay diagnostics).
    """
    if m <= 0:
        raise SingularOperator("the torus Laplacian needs m > 0")
    if L < 2:
        raise ParameterViolation("L must be >= 2")
    k = np.arange(L)
    lam1 = 2.0 - 2.0 * np.cos(2 * np.pi * k / L)
    lam = np.full((L,) * d, m * m)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = L
        lam = lam + lam1.reshape(shape)
    inv = 1.0 / lam
    if project_zero_mode:
        inv[(0,) * d] = 0.0
    G = np.fft.ifftn(inv).real
    meta = {"project_zero_mode": bool(project_zero_mode)}
    return GreenKernel(d, "torus", int(L), float(m), G, None, meta)


# ---------------------------------------------------------------------------
# constants and derived kernels


@dataclass(frozen=True)
class RenormConstants:
    sigma: float
    rho: float
    eta: float
    residual_M0: float = 0.0
    residual_N0: float = 0.0
    eta_error: float = 0.0
    rho_tail: float = 0.0
    source: dict = field(default_factory=dict)

    def perturbed(self, drho: float = 1.0, deta: float = -1.0) -> "RenormConstants":
        return RenormConstants(self.sigma, self.rho + drho, self.eta + deta, source={**self.source, "perturbed": [drho, deta]})

    @property
    def c6(self) -> float:
        s, r, e = self.sigma, self.rho, self.eta
        return 4 * e - 3 * s**5 + 5 * s**2 * r


def _circ_conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    axes = tuple(range(a.ndim))
    return np.fft.irfftn(np.fft.rfftn(a) * np.fft.rfftn(b), s=a.shape, axes=axes)


def _centre(a: np.ndarray) -> tuple:
    return tuple(s // 2 for s in a.shape)


def _eta_box(Gt: np.ndarray) -> tuple[float, float, np.ndarray]:
    """eta two ways on a centred box array (linear convolutions, truncated)."""
    A = Gt * Gt
    AA = signal.fftconvolve(A, A, mode="same")
    N = Gt * AA
    eta = float(N.sum())
    GA = signal.fftconvolve(Gt, A, mode="same")
    eta_alt = float((A * GA).sum())
    return eta, eta_alt, N


def free_tail_bound(kernel: GreenKernel, power: int = 3) -> float:
    """Bound on sum_{|n| > R} G(n)^power from G(n) <= c |n|^{2-d} beyond the box."""
    d, R = kernel.d, kernel.extent
    shell = kernel.offsets[kernel.offsets[:, 0] == R]
    c = kernel(shell).max() * R ** (d - 2)
    r = np.arange(R + 1, 200000, dtype=float)
    counts = (2 * r + 1) ** d - (2 * r - 1) ** d
    p = power * (d - 2)
    tail = float((counts * r ** (-p)).sum())
    rmax = r[-1]
    tail += (2 * d * 2 ** (d - 1)) * rmax ** (d - p) / max(p - d, 1e-12)
    return c**power * tail


def renorm_constants(kernel: GreenKernel, eta_radius: int = 6, tail_tol: float = 1e-8) -> RenormConstants:
    """sigma = G(0), rho = 2 sigma^3 - sum G^3, eta = sum G~(n1) G~(n2)^2 G~(n1-n2)^2."""
    if kernel.geometry == "torus":
        G = kernel.table
        sigma = float(G[(0,) * kernel.d])
        Gt = G.copy()
        Gt[(0,) * kernel.d] = 0.0
        rho = 2 * sigma**3 - float((G**3).sum())
        M = Gt**3
        M[(0,) * kernel.d] = rho - sigma**3
        A = Gt * Gt
        N = Gt * _circ_conv(A, A)
        eta = float(N.sum())
        eta_alt = float((A * _circ_conv(Gt, A)).sum())
        return RenormConstants(
            sigma, rho, eta,
            residual_M0=abs(float(M.sum())),
            residual_N0=abs(eta_alt - eta),
            source=kernel.config(),
        )
    offs = kernel.offsets
    if kernel.d < 3 or kernel.mass < 0:
        raise ParameterViolation("free constants need d >= 3")
    tail = free_tail_bound(kernel, 3) if kernel.mass == 0 else 0.0
    if tail > tail_tol:
        raise TailTooLarge(f"sum over |n|>R of G^3 bounded by {tail:.2e} > {tail_tol:.0e}; increase R")
    sigma = kernel.sigma
    w = orbit_sizes(offs)
    S3 = float((w * kernel.table**3).sum())
    rho = 2 * sigma**3 - S3
    Mres = abs((S3 - sigma**3) - (sigma**3 - rho))
    Re = min(eta_radius, kernel.extent)
    Gt = kernel.box(Re)
    Gt[_centre(Gt)] = 0.0
    eta, eta_alt, _ = _eta_box(Gt)
    inner = Gt[(slice(1, -1),) * kernel.d]
    eta_small, _, _ = _eta_box(inner)
    return RenormConstants(
        sigma, rho, eta,
        residual_M0=Mres,
        residual_N0=abs(eta_alt - eta),
        eta_error=abs(eta - eta_small),
        rho_tail=tail,
        source={**kernel.config(), "eta_radius": Re},
    )


@dataclass(frozen=True, eq=False)
class DerivedKernels:
    """Kernels as arrays: periodic grids (torus) or centred boxes (free)."""

    K: np.ndarray
    M4: np.ndarray
    M: np.ndarray
    N: np.ndarray
    Ntilde: np.ndarray
    G0N: np.ndarray
    origin: tuple
    periodic: bool

    def axis(self, name: str, radii) -> np.ndarray:
        arr = getattr(self, name)
        out = []
        for r in radii:
            idx = list(self.origin)
            idx[0] = (idx[0] + int(r)) % arr.shape[0] if self.periodic else idx[0] + int(r)
            out.append(arr[tuple(idx)])
        return np.array(out)


def derived_kernels(kernel: GreenKernel, constants: RenormConstants, radius: int | None = None) -> DerivedKernels:
    s, r, e = constants.sigma, constants.rho, constants.eta
    if kernel.geometry == "torus":
        G = kernel.table
        o = (0,) * kernel.d
        Gt = G.copy()
        Gt[o] = 0.0
        A = Gt * Gt
        N = Gt * _circ_conv(A, A)
        conv = _circ_conv
        periodic = True
    else:
        warnings.warn("free kernel: derived sums truncated to the computed box", TruncationWarning, stacklevel=2)
        G = kernel.box(radius)
        o = _centre(G)
        Gt = G.copy()
        Gt[o] = 0.0
        _, _, N = _eta_box(Gt)

        def conv(a, b):
            return signal.fftconvolve(a, b, mode="same")

        periodic = False
    K = G**3
    M4 = Gt**3
    M = M4.copy()
    M[o] = M4[o] - (s**3 - r)
    Nt = N.copy()
    Nt[o] -= e
    G0N = conv(G, Nt)
    return DerivedKernels(K, M4, M, N, Nt, G0N, o, periodic)


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    intercept: float
    residual: float
    window: tuple

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept, "residual": self.residual, "window": list(self.window)}


def decay_fit(radii, values) -> DecayFit:
    """Least-squares slope of log|value| against log r."""
    radii = np.asarray(radii, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    if np.unique(radii).size < 4:
        raise InsufficientData("need at least 4 distinct radii")
    if np.any(values == 0) or not np.all(np.isfinite(values)):
        raise InsufficientData("values must be finite and nonzero")
    x, y = np.log(radii), np.log(values)
    slope, icpt = np.polyfit(x, y, 1)
    resid = float(np.abs(y - (slope * x + icpt)).max())
    return DecayFit(float(slope), float(icpt), resid, (float(radii.min()), float(radii.max())))


# ---------------------------------------------------------------------------
# independent oracle for d = 3


def watson_g0_quadrature(epsabs: float = 1e-12) -> float:
    """G(0) in d = 3 from the Fourier integral.

    The k1 integral is done in closed form, int dk/(2(a - cos k)) = pi/sqrt(a^2-1),
    and the remaining 2-d integral over [0, pi]^2 is done in polar coordinates
    around the singular corner.
    """

    def f(r, th):
        k2, k3 = r * math.cos(th), r * math.sin(th)
        a = 3.0 - math.cos(k2) - math.cos(k3)
        # a^2 - 1 = (a-1)(a+1) with a-1 written without cancellation
        am1 = 2 * math.sin(k2 / 2) ** 2 + 2 * math.sin(k3 / 2) ** 2
        if am1 == 0.0:
            return 1.0  # limit r -> 0
        return r / math.sqrt(am1 * (a + 1))

    total = 0.0
    for lo, hi in ((0.0, math.pi / 4), (math.pi / 4, math.pi / 2)):
        def rmax(th, lo=lo):
            return math.pi / math.cos(th) if lo == 0.0 else math.pi / math.sin(th)

        val, _ = integrate.dblquad(lambda r, th: f(r, th), lo, hi, 0.0, rmax, epsabs=epsabs, epsrel=1e-13)
        total += val
    # integral over [-pi,pi]^2 is 4x the quarter; prefactor 1/(8 pi^2)
    return 4 * total * math.pi / (2 * math.pi) ** 3


def watson_g0_closed_form() -> float:
    """Glasser-Zucker closed form of the simple cubic Watson integral, divided by 6."""
    g = special.gamma
    W = math.sqrt(6) / (32 * math.pi**3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24)
    return W / 6


# ---------------------------------------------------------------------------
# summation lemmas


def _shell_counts(k: int, smax: int) -> np.ndarray:
    s = np.arange(smax + 1)
    c = (2 * s + 1) ** k - np.maximum(2 * s - 1, 0) ** k
    if k == 0:
        c = np.zeros(smax + 1, dtype=np.int64)
        c[0] = 1
    return c.astype(float)


def _lattice_sum(fn, d: int, support: int, radius: int):
    """Sum over n in the box |n| <= radius of fn(head, s).

    Points whose last d - support coordinates are free contribute through
    head = n[:support] and s = sup-norm of the remaining coordinates, which is
    exact when every probe lives in the first `support` coordinates.
    """
    rng = np.arange(-radius, radius + 1)
    head = np.stack(np.meshgrid(*([rng] * support), indexing="ij"), -1).reshape(-1, support)
    s = np.arange(radius + 1)
    w = _shell_counts(d - support, radius)
    vals = fn(head[:, None, :], s[None, :])
    return float((vals * w[None, :]).sum())


def _tail(d: int, radius: int, power: float) -> float:
    r = np.arange(radius + 1, 400000, dtype=float)
    counts = (2 * r + 1) ** d - (2 * r - 1) ** d
    return float((counts * r ** (-power)).sum())


def _norm_hs(head, s, shift):
    x = np.abs(head - shift).max(axis=-1)
    return np.maximum(np.maximum(x, s), 1).astype(float)


@dataclass(frozen=True)
class LemmaReport:
    name: str
    probes: list
    sums: list
    bounds: list
    ratios: list
    spread: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(self.spread <= self.limit)

    def to_dict(self) -> dict:
        return {"name": self.name, "probes": self.probes, "ratios": self.ratios, "spread": self.spread, "limit": self.limit, "pass": self.passed}


def lemma21_sum(a: float, b: float, d: int, m: int, radius: int) -> float:
    """sum_n |n|^-a |m e1 - n|^-b, brute force on the box plus tail."""
    shift = np.zeros(1)
    target = np.array([m], dtype=float)

    def fn(head, s):
        return _norm_hs(head, s, shift) ** (-a) * _norm_hs(head, s, target) ** (-b)

    return _lattice_sum(fn, d, 1, radius) + _tail(d, radius, a + b)


def lemma22_sum(a: float, b: float, eps: float, d: int, n: int, nprime: int, radius: int) -> float:
    """sum_n1 |n - n1|^-a |n1|^-eps |n1 - n'|^-b for n = n e1, n' = n' e1."""
    zero = np.zeros(1)
    p = np.array([n], dtype=float)
    q = np.array([nprime], dtype=float)

    def fn(head, s):
        return _norm_hs(head, s, p) ** (-a) * _norm_hs(head, s, zero) ** (-eps) * _norm_hs(head, s, q) ** (-b)

    return _lattice_sum(fn, d, 1, radius) + _tail(d, radius, a + b + eps)


def summation_lemma_check(lemma: str, d: int = 5, a: float = 3.0, b: float = 4.0, eps: float = 2.5,
                          alpha: float = 0.3, probes=range(2, 21), radius: int = 400,
                          limit: float = 50.0) -> LemmaReport:
    """Ratio of brute-force sums to the lemma's bound over a probe set.

    lemma is one of "pair" (two-kernel convolution), "chain" (three kernels
    with a decaying weight in the middle) or "difference".  Passes when max/min of the
    ratios over the probes is at most `limit` (for "difference" the ratios
    themselves must be at most `limit`).
    """
    probes = [int(p) for p in probes]
    if lemma == "pair":
        if not (a > 0 and b > 0 and a + b > d and max(a, b) != d):
            raise ParameterViolation("the pair bound needs a, b > 0, a + b > d, max(a, b) != d")
        if max(probes) > radius / 4:
            raise ParameterViolation("probes must lie within radius/4")
        sums = [lemma21_sum(a, b, d, m, radius) for m in probes]
        bounds = [float(max(m, 1)) ** (-min(a, b, a + b - d)) for m in probes]
    elif lemma == "chain":
        if not (0 < eps < d and 0 < a <= b and b + eps > d and b != d):
            raise ParameterViolation("the chain bound needs 0<eps<d, 0<a<=b, b+eps>d, b!=d")
        if 2 * max(probes) > radius / 4:
            raise ParameterViolation("probes must lie within radius/4")
        sums = [lemma22_sum(a, b, eps, d, p, -p, radius) for p in probes]
        expo = min(eps, a, eps + b - d)
        bounds = [float(2 * p) ** (-a) * float(p) ** (-expo) for p in probes]
    elif lemma == "difference":
        pairs = [(p, p + 1) for p in probes]
        sums = [abs(float(p) ** -alpha - float(q) ** -alpha) for p, q in pairs]
        bounds = [abs(q - p) / ((p + q) * float(min(p, q)) ** alpha) for p, q in pairs]
        ratios = [s / bnd for s, bnd in zip(sums, bounds)]
        return LemmaReport(lemma, probes, sums, bounds, ratios, float(max(ratios)), limit)
    else:
        raise ParameterViolation(f"unknown lemma {lemma!r}")
    ratios = [s / bnd for s, bnd in zip(sums, bounds)]
    return LemmaReport(lemma, probes, sums, bounds, ratios, float(max(ratios) / min(ratios)), limit)
