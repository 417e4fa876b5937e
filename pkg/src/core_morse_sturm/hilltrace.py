"""Green核とトレース公式、Hillの行列式公式の数値検証.

- Green核 K_z(x,y) から Tr Θ_z = θ_t dt + θ_s ds を求め、d log ρ と比較する
- ∏_j (1 − λ_j⁻¹) = ρ(1)/ρ(0) (λ_j は 𝒜 + λ𝒢₁ が退化するパラメータ)
- det(1 + (t𝒢₁ + is)𝒜⁻¹) = ρ(z)/ρ(0)
"""

from __future__ import annotations

import cmath
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from core_morse_sturm.config import DEFAULT_CONFIG, SolverConfig
from core_morse_sturm.degree import Rectangle, check_admissible, rho, sigma_ratio, trace_boundary
from core_morse_sturm.errors import SingularRz, UnsupportedBoundary, UnsupportedFamily
from core_morse_sturm.problem import LinearFamily, ValidatedProblem
from core_morse_sturm.propagator import FundamentalSolution, fundamental_solution, map_concurrently
from core_morse_sturm.quadrature import composite_gauss
from core_morse_sturm.spectralflow import discretize, fd_grid

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-6
TIGHT_RTOL = 1e-13
TIGHT_ATOL = 1e-15
DIAGONAL_OFFSET = 1e-8
APPLY_PANELS = 32
ZERO_MU = 1e-14
FREDHOLM_SIZE = 1024


# ---------------------------------------------------------------------------
# Green核
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class GreenKernel:
    """𝒜_z⁻¹ の積分核.

    K_z(x,y) = [ψ_z(x)(𝒫_z − 𝟙_{y<x}·Id)ψ_z(y)⁻¹] の左下 N×N ブロック,
    𝒫_z = R_z⁻¹R₁ψ_z(1)。
    """

    z: complex
    solution: FundamentalSolution
    projector: np.ndarray
    factorization: tuple[np.ndarray, np.ndarray]

    @property
    def n(self) -> int:
        return self.solution.size // 2

    def row(self, x: float, ys) -> np.ndarray:
        """y ↦ K_z(x, y) を (len(ys), N, N) で返す."""
        n = self.n
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        left = self.solution.at(x)[n:, :]
        inverse = self.solution.inverse_at_many(ys)[:, :, :n]
        below = (ys < x)[:, None, None]
        middle = self.projector[None] - below * np.eye(2 * n)[None]
        return left[None] @ middle @ inverse

    def __call__(self, x: float, y: float) -> np.ndarray:
        return self.row(x, [y])[0]

    def diagonal(self, xs) -> np.ndarray:
        """K_z(x, x) = [ψ(x)𝒫ψ(x)⁻¹] の左下ブロック."""
        n = self.n
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        psi = self.solution.at_many(xs)
        inverse = self.solution.inverse_at_many(xs)
        return (psi[:, n:, :] @ self.projector[None] @ inverse[:, :, :n])

    def diagonal_jump(self, xs) -> float:
        """max ‖K(x, x−ε) − K(x, x+ε)‖ (対角での連続性の検査)."""
        worst = 0.0
        for x in np.atleast_1d(xs):
            sides = self.row(float(x), [x - DIAGONAL_OFFSET, x + DIAGONAL_OFFSET])
            worst = max(worst, float(np.max(np.abs(sides[0] - sides[1]))))
        return worst

    def apply(self, f: Callable[[np.ndarray], np.ndarray], xs) -> np.ndarray:
        """u(x) = ∫₀¹ K_z(x,y) f(y) dy を求める (f は (m,) → (m, N)).

        核は対角で折れるので [0, x] と [x, 1] を別々に求積する。
        """
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        values = []
        for x in xs:
            total = np.zeros(self.n, dtype=complex)
            for a, b in ((0.0, x), (x, 1.0)):
                if b <= a:
                    continue
                nodes, weights = composite_gauss(APPLY_PANELS, 8, a, b)
                rhs = np.asarray(f(nodes)).reshape(len(nodes), self.n)
                total += np.einsum("m,mij,mj->i", weights, self.row(x, nodes), rhs)
            values.append(total)
        return np.array(values)


def green_kernel(
    problem: ValidatedProblem, z: complex, config: SolverConfig = DEFAULT_CONFIG,
) -> GreenKernel:
    """z での Green 核を組み立てる.

    Raises:
        SingularRz: R_z が特異 (z が ρ の零点) の場合
    """
    solution = fundamental_solution(problem, z, config.integrator.with_dense())
    bc = problem.bc
    r1_psi = bc.r1 @ solution.terminal
    r_z = bc.r0 + r1_psi
    if sigma_ratio(r_z) <= config.floor:
        raise SingularRz(f"R_z is singular at z={complex(z):.6g}")
    factorization = scipy.linalg.lu_factor(r_z)
    projector = scipy.linalg.lu_solve(factorization, r1_psi)
    return GreenKernel(z=complex(z), solution=solution, projector=projector, factorization=factorization)


# ---------------------------------------------------------------------------
# トレース公式
# ---------------------------------------------------------------------------
def _tight(config: SolverConfig) -> SolverConfig:
    integrator = replace(
        config.integrator,
        rtol=min(config.integrator.rtol, TIGHT_RTOL),
        atol=min(config.integrator.atol, TIGHT_ATOL),
    )
    return config.with_overrides(integrator=integrator)


def trace_theta(
    problem: ValidatedProblem, z: complex, config: SolverConfig = DEFAULT_CONFIG,
) -> tuple[complex, complex]:
    """(θ_t, θ_s) = (∫Tr[∂_tC K_z(x,x)]dx, i∫Tr K_z(x,x)dx)."""
    kernel = green_kernel(problem, z, config)
    nodes, weights = composite_gauss(config.quad_panels, config.quad_order)
    diagonal = kernel.diagonal(nodes)
    dc = problem.family.t_derivatives(complex(z).real, nodes)
    theta_t = complex(np.einsum("m,mij,mji->", weights, dc, diagonal))
    theta_s = 1j * complex(np.einsum("m,mii->", weights, diagonal))
    return theta_t, theta_s


@dataclass(frozen=True)
class TraceCheck:
    z: complex
    theta_t: complex
    theta_s: complex
    difference_t: complex
    difference_s: complex
    error_t: float
    error_s: float
    tolerance: float = TRACE_TOL

    @property
    def passed(self) -> bool:
        return max(self.error_t, self.error_s) <= self.tolerance


def _log_derivative(problem: ValidatedProblem, z: complex, direction: complex, h: float, config) -> complex:
    def central(step: float) -> complex:
        forward = rho(problem, z + step * direction, config)
        backward = rho(problem, z - step * direction, config)
        if forward == 0 or backward == 0:
            raise SingularRz(f"rho vanishes in the difference stencil around z={z:.6g}")
        return cmath.log(forward / backward) / (2.0 * step)

    return (4.0 * central(0.5 * h) - central(h)) / 3.0


def trace_formula_check(
    problem: ValidatedProblem, z: complex, config: SolverConfig = DEFAULT_CONFIG, h_fd: float | None = None,
) -> TraceCheck:
    """(θ_t, θ_s) を log ρ の中心差分 (Richardson 外挿付き) と比較する.

    相対誤差の尺度は max(|θ_t|, |θ_s|, |D_t|, |D_s|)。
    """
    z = complex(z)
    config = _tight(config)
    h = config.fd_step if h_fd is None else h_fd
    theta_t, theta_s = trace_theta(problem, z, config)
    d_t = _log_derivative(problem, z, 1.0, h, config)
    d_s = _log_derivative(problem, z, 1j, h, config)
    scale = max(abs(theta_t), abs(theta_s), abs(d_t), abs(d_s), np.finfo(float).tiny)
    check = TraceCheck(
        z=z, theta_t=theta_t, theta_s=theta_s, difference_t=d_t, difference_s=d_s,
        error_t=abs(theta_t - d_t) / scale, error_s=abs(theta_s - d_s) / scale,
    )
    logger.info("trace check at z=%s: errors %.2e / %.2e", z, check.error_t, check.error_s)
    return check


def contour_trace_integral(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG, rect: Rectangle | None = None,
) -> complex:
    """(1/2πi)∮_{∂R} (θ_t dt + θ_s ds). 既定の R は Ω = [0,1]×[−h,h]."""
    if rect is None:
        h = config.height if config.height is not None else problem.height
        rect = (0.0, 1.0, -h, h)
    t0, t1, s0, s1 = rect
    corners = (complex(t0, s0), complex(t1, s0), complex(t1, s1), complex(t0, s1))
    nodes, weights = composite_gauss(config.contour_panels, config.quad_order)

    points = []
    for edge in range(4):
        start, end = corners[edge], corners[(edge + 1) % 4]
        delta = end - start
        points.extend((start + u * delta, w, delta) for u, w in zip(nodes, weights))

    def contribution(point) -> complex:
        z, weight, delta = point
        theta_t, theta_s = trace_theta(problem, z, config)
        return weight * (theta_t * delta.real + theta_s * delta.imag)

    total = sum(map_concurrently(contribution, points, config.jobs))
    value = complex(total / (2j * math.pi))
    logger.info("contour integral of Tr Theta / 2 pi i = %s", value)
    return value


# ---------------------------------------------------------------------------
# Hillの行列式公式
# ---------------------------------------------------------------------------
def hill_ratio(problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """ρ(1)/ρ(0).

    Raises:
        NotAdmissible: 端点で R_z が特異な場合
    """
    check_admissible(problem, config)
    return rho(problem, 1.0, config) / rho(problem, 0.0, config)


def _pencil(problem: ValidatedProblem, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(A_h, G₁,h): t=0 の差分作用素と C₁ の節点値 (重みは相殺する)."""
    if not problem.bc.is_preset:
        raise UnsupportedBoundary("eigenvalue products need a dirichlet, neumann or periodic boundary condition")
    family = problem.family
    if not isinstance(family, LinearFamily):
        raise UnsupportedFamily("Hill's formula applies to linear families C(t,x) = t*C1(x) only")
    grid = fd_grid(problem.bc.kind, m)
    return discretize(problem, 0.0, m), scipy.linalg.block_diag(*family.c1.evaluate_many(grid.nodes))


def _is_positive_definite(matrix: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class EigenProduct:
    """∏_{j≤K}(1 − λ_j⁻¹) と打ち切り誤差の見積もり."""

    value: complex
    tail: float
    eigenvalues: np.ndarray
    partial_products: np.ndarray
    size: int

    @property
    def cutoff(self) -> int:
        return len(self.eigenvalues)

    def rows(self) -> list[tuple[int, complex, complex]]:
        return [(j + 1, lam, prod) for j, (lam, prod) in enumerate(zip(self.eigenvalues, self.partial_products))]


def truncated_eigenproduct(
    problem: ValidatedProblem, cutoff: int, m: int,
) -> EigenProduct:
    """A_h u = −λ G₁,h u の λ_j を |λ_j| 昇順に K 個使った積.

    μ = −1/λ は G₁,h v = μ A_h v の一般化固有値。A_h が正定値なら eigh、
    そうでなければ一般の eigvals を使う。μ = 0 (λ = ∞) は因子 1 なので除く。
    打ち切り誤差は λ_j ≈ c·j² を仮定して |積|·(exp(1/(cK)) − 1)。

    Raises:
        UnsupportedBoundary: general 境界条件の場合
        UnsupportedFamily: 線形族でない場合
    """
    a_h, g1_h = _pencil(problem, m)
    if _is_positive_definite(a_h):
        mu = scipy.linalg.eigh(g1_h, a_h, eigvals_only=True).astype(complex)
    else:
        mu = scipy.linalg.eigvals(g1_h, a_h)
        mu = mu[np.isfinite(mu)]
    top = float(np.max(np.abs(mu), initial=0.0))
    mu = mu[np.abs(mu) > ZERO_MU * max(top, 1.0)]
    mu = mu[np.argsort(-np.abs(mu), kind="stable")][:cutoff]
    if mu.size == 0:
        return EigenProduct(1.0 + 0j, 0.0, np.zeros(0, complex), np.zeros(0, complex), m)

    factors = 1.0 + mu
    partial = np.cumprod(factors)
    lam = -1.0 / mu
    k = len(lam)
    c = abs(lam[-1]) / k**2
    value = complex(partial[-1])
    tail = abs(value) * math.expm1(1.0 / (c * k))
    logger.info("truncated product over %d eigenvalues (M=%d): %s, tail %.2e", k, m, value, tail)
    return EigenProduct(value=value, tail=tail, eigenvalues=lam, partial_products=partial, size=m)


@dataclass(frozen=True, eq=False)
class HillReport:
    rho1: complex
    rho0: complex
    ratio: complex
    product: EigenProduct
    tolerance: float

    @property
    def discrepancy(self) -> float:
        return abs(self.product.value - self.ratio) / abs(self.ratio)

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def hill_report(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG, cutoff: int | None = None, m: int | None = None,
) -> HillReport:
    """ρ(1)/ρ(0) と固有値積をまとめて比較する. m の既定は max(fd_size, cutoff)."""
    cutoff = config.cutoff if cutoff is None else cutoff
    m = max(config.fd_size, cutoff) if m is None else m
    check_admissible(problem, config)
    rho1 = rho(problem, 1.0, config)
    rho0 = rho(problem, 0.0, config)
    product = truncated_eigenproduct(problem, cutoff, m)
    return HillReport(rho1=rho1, rho0=rho0, ratio=rho1 / rho0, product=product, tolerance=config.check_tol)


def fredholm_size(config: SolverConfig = DEFAULT_CONFIG) -> int:
    """Fredholm行列式の照合と次数に共通の格子点数 max(fd_size, 1024)."""
    return max(config.fd_size, FREDHOLM_SIZE)


@dataclass(frozen=True)
class FredholmCheck:
    z: complex
    lhs: complex
    rhs: complex
    tolerance: float

    @property
    def discrepancy(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.rhs), np.finfo(float).tiny)

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def fredholm_identity_check(
    problem: ValidatedProblem, z: complex, cutoff: int, m: int, config: SolverConfig = DEFAULT_CONFIG,
) -> FredholmCheck:
    """det(1 + (t𝒢₁ + is)𝒜⁻¹) ≈ ∏(1 + ν_j) と ρ(z)/ρ(0) を比較する.

    ν_j は A_h⁻¹(tG₁,h + is·Id) の固有値 (|ν| 降順に K 個)。
    """
    z = complex(z)
    a_h, g1_h = _pencil(problem, m)
    nu = np.linalg.eigvals(np.linalg.solve(a_h, z.real * g1_h + 1j * z.imag * np.eye(len(a_h))))
    nu = nu[np.argsort(-np.abs(nu), kind="stable")][:cutoff]
    lhs = complex(np.prod(1.0 + nu))
    rhs = rho(problem, z, config) / rho(problem, 0.0, config)
    return FredholmCheck(z=z, lhs=lhs, rhs=rhs, tolerance=config.check_tol)


def fredholm_degree(problem: ValidatedProblem, m: int, config: SolverConfig = DEFAULT_CONFIG) -> int:
    """f(z) = det(A_h + tG₁,h + is·Id)/det(A_h) の ∂Ω 上の回転数 deg(f, Ω, 0)."""
    a_h, g1_h = _pencil(problem, m)
    eye = np.eye(len(a_h))
    sign0, log0 = np.linalg.slogdet(a_h)

    def f(z: complex) -> complex:
        sign, logdet = np.linalg.slogdet(a_h + z.real * g1_h + 1j * z.imag * eye)
        return complex(sign / sign0 * np.exp(logdet - log0))

    h = config.height if config.height is not None else problem.height
    winding = trace_boundary(f, (0.0, 1.0, -h, h), config).winding
    logger.info("deg(f, Omega, 0) = %d (M=%d)", winding, m)
    return winding
