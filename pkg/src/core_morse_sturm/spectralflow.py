"""スペクトルフロー ι_SP = sf(𝒜_t, t ∈ [0, 1]) の2通りの計算.

1. 交差形式法: 退化時刻 t₀ ごとに ker 𝒜_{t₀} の基底を作り、
   Γ_ij = ∫₀¹ ⟨∂_tC(t₀,x) u_i, u_j⟩ dx の符号数を足し合わせる (任意の境界条件)。
2. 固有値追跡法: 2次中心差分で離散化した行列の固有値が 0 を横切る回数を
   符号付きで数える (プリセット境界条件のみ)。ρ の計算経路とは独立。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from core_morse_sturm.config import DEFAULT_CONFIG, MIN_FD_SIZE, MIN_TRACK_GRID, SolverConfig
from core_morse_sturm.degree import conjugate_instants, local_scale
from core_morse_sturm.errors import (
    DiscretizationUnresolved,
    EmptyKernel,
    GridTooCoarse,
    IndefiniteP,
    IrregularCrossing,
    UnsupportedBoundary,
    WindowTooSmall,
)
from core_morse_sturm.problem import ValidatedProblem, hamiltonian_coefficients, symplectic_j, validation_grid
from core_morse_sturm.propagator import FundamentalSolution, fundamental_solution, map_concurrently
from core_morse_sturm.quadrature import composite_gauss

logger = logging.getLogger(__name__)

RESIDUAL_POINTS = 257
RESIDUAL_STEP = 1e-3
WINDOW_FACTOR = 10.0
MAX_REFINE_DEPTH = 6
MAX_DOUBLINGS = 3
REFERENCE_POINTS = 9


# ---------------------------------------------------------------------------
# 交差形式法
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class KernelBasis:
    """ker 𝒜_{t₀} の L² 正規直交基底.

    w0 の各列が ker R_{t₀} のベクトル、u は求積節点での第2成分 (m, N, k)。
    """

    t0: float
    w0: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    u: np.ndarray
    solution: FundamentalSolution
    ode_residual: float
    boundary_residual: float

    @property
    def dimension(self) -> int:
        return self.w0.shape[1]

    def paths(self, xs) -> np.ndarray:
        """w(x) = ψ_{t₀}(x) w₀ を (len(xs), 2N, k) で返す."""
        return (self.solution.at_many(xs) @ self.w0).real


@dataclass(frozen=True, eq=False)
class CrossingForm:
    t0: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    n_plus: int
    n_minus: int
    nullity: int

    @property
    def signature(self) -> int:
        return self.n_plus - self.n_minus

    @property
    def regular(self) -> bool:
        return self.nullity == 0


def _ode_residual(problem: ValidatedProblem, kernel_paths, t0: float) -> float:
    """w' − J B w の相対残差を5点差分で評価する."""
    n = problem.n
    j = symplectic_j(n)
    h = RESIDUAL_STEP
    xs = np.linspace(2 * h, 1.0 - 2 * h, RESIDUAL_POINTS)
    stencil = kernel_paths(np.concatenate([xs - 2 * h, xs - h, xs, xs + h, xs + 2 * h]))
    w_m2, w_m1, w_0, w_p1, w_p2 = np.split(stencil, 5)
    derivative = (w_m2 - 8.0 * w_m1 + 8.0 * w_p1 - w_p2) / (12.0 * h)
    worst = 0.0
    for x, dw, w in zip(xs, derivative, w_0):
        jb = (j @ hamiltonian_coefficients(problem, t0, x)).real
        scale = max(1.0, np.linalg.norm(jb, 2) * np.max(np.abs(w)))
        worst = max(worst, float(np.max(np.abs(dw - jb @ w))) / scale)
    return worst


def kernel_basis(
    problem: ValidatedProblem, t0: float, config: SolverConfig = DEFAULT_CONFIG,
) -> KernelBasis:
    """退化時刻 t₀ での ker 𝒜_{t₀} の正規直交基底を作る.

    Raises:
        EmptyKernel: R_{t₀} が数値的に正則な場合
    """
    solution = fundamental_solution(problem, t0, config.integrator.with_dense())
    bc = problem.bc
    r = (bc.r0 + bc.r1 @ solution.terminal).real
    scale = local_scale(bc.r0, bc.r1, solution.terminal)
    _, sigma, vh = np.linalg.svd(r)
    null = sigma < config.rank_tol * scale
    if not np.any(null):
        raise EmptyKernel(
            f"R_t is invertible at t={t0:.10g} (sigma_min / local scale = {sigma[-1] / scale:.3e})",
        )
    w0 = vh[null].T

    nodes, weights = composite_gauss(config.quad_panels, config.quad_order)
    n = problem.n
    u = (solution.at_many(nodes) @ w0).real[:, n:, :]
    gram = np.einsum("m,mik,mil->kl", weights, u, u)
    # L² 正規直交化: 係数変換 T = L⁻ᵀ
    transform = scipy.linalg.solve_triangular(np.linalg.cholesky(gram), np.eye(len(gram)), lower=True).T
    w0 = w0 @ transform
    u = u @ transform

    def kernel_paths(xs):
        return (solution.at_many(xs) @ w0).real

    ode_residual = _ode_residual(problem, kernel_paths, t0)
    w_end = kernel_paths([1.0])[0]
    boundary_residual = float(
        np.linalg.norm(bc.r0 @ w0 + bc.r1 @ w_end) / max(np.linalg.norm(w0), np.linalg.norm(w_end)),
    )
    logger.debug(
        "kernel at t=%.10g: dim %d, ode residual %.2e, boundary residual %.2e",
        t0, w0.shape[1], ode_residual, boundary_residual,
    )
    return KernelBasis(
        t0=float(t0), w0=w0, nodes=nodes, weights=weights, u=u, solution=solution,
        ode_residual=ode_residual, boundary_residual=boundary_residual,
    )


def inertia(
    matrix: np.ndarray, tol: float, reference: float = 0.0,
) -> tuple[np.ndarray, int, int, int]:
    """対称行列の固有値と (n₊, n₋, 零次元).

    |λ| ≤ tol·max(‖A‖, reference) を零とみなす。1×1 の形式では reference が無いと
    退化を検出できないので、呼び出し側が係数の大きさを渡す。
    """
    eigenvalues = np.linalg.eigvalsh(matrix)
    scale = max(float(np.max(np.abs(eigenvalues), initial=0.0)), reference)
    zero = np.abs(eigenvalues) <= tol * scale if scale > 0 else np.ones(len(eigenvalues), bool)
    n_plus = int(np.count_nonzero((eigenvalues > 0) & ~zero))
    n_minus = int(np.count_nonzero((eigenvalues < 0) & ~zero))
    return eigenvalues, n_plus, n_minus, int(np.count_nonzero(zero))


def crossing_form(
    problem: ValidatedProblem, kernel: KernelBasis, config: SolverConfig = DEFAULT_CONFIG,
) -> CrossingForm:
    """Γ_ij = ∫₀¹ ⟨∂_tC(t₀,x) u_i(x), u_j(x)⟩ dx を求積で計算する."""
    dc = problem.family.t_derivatives(kernel.t0, kernel.nodes)
    gamma = np.einsum("m,mik,mij,mjl->kl", kernel.weights, kernel.u, dc, kernel.u)
    gamma = 0.5 * (gamma + gamma.T)
    # u は L² 正規直交なので ‖Γ‖ ≤ max_x ‖∂_tC(t₀,x)‖. 族全体の最大値を零判定の基準にする
    reference = max(
        float(np.max(np.linalg.norm(problem.family.t_derivatives(t, kernel.nodes), ord=2, axis=(1, 2))))
        for t in np.linspace(0.0, 1.0, REFERENCE_POINTS)
    )
    eigenvalues, n_plus, n_minus, nullity = inertia(gamma, config.irregular_tol, reference)
    return CrossingForm(
        t0=kernel.t0, matrix=gamma, eigenvalues=eigenvalues,
        n_plus=n_plus, n_minus=n_minus, nullity=nullity,
    )


def spectral_flow_crossing_method(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG,
) -> tuple[int, list[CrossingForm]]:
    """ι_SP = Σ sgn Γ(t₀) (内部の退化時刻について).

    Raises:
        NotAdmissible: 端点で退化している場合
        IrregularCrossing: Γ が退化している場合
        ClusterUnresolved: 零点が分解できない場合
    """
    forms = []
    for instant in conjugate_instants(problem, config):
        form = crossing_form(problem, kernel_basis(problem, instant.t, config), config)
        if not form.regular:
            raise IrregularCrossing(
                f"crossing form at t={instant.t:.10g} is degenerate "
                f"(eigenvalues {np.array2string(form.eigenvalues, precision=3)}); "
                f"retry with a small --delta-shift",
            )
        forms.append(form)
    total = sum(form.signature for form in forms)
    logger.info("iota_SP (crossing forms) = %d from %d instants", total, len(forms))
    return total, forms


# ---------------------------------------------------------------------------
# 差分離散化
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FiniteDifferenceGrid:
    """差分格子: 節点・質量重み・辺 (節点番号の組, 端点は -1)."""

    nodes: np.ndarray
    weights: np.ndarray
    spacing: float
    edge_left: np.ndarray
    edge_right: np.ndarray

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(len(self.edge_left)) + 0.5) * self.spacing


def fd_grid(kind: str, m: int) -> FiniteDifferenceGrid:
    """プリセット境界条件に対応する差分格子.

    dirichlet: 内点 x_i = i/(M+1), i=1..M (端点は 0 に固定)
    neumann:   x_i = i/(M−1), i=0..M−1 (端点の重みは h/2)
    periodic:  x_i = i/M, i=0..M−1 (最後の辺は x_{M−1} → x_0)
    """
    if m < MIN_FD_SIZE:
        raise ValueError(f"discretization needs at least {MIN_FD_SIZE} points, got {m}")
    idx = np.arange(m)
    if kind == "dirichlet":
        h = 1.0 / (m + 1)
        nodes = (idx + 1) * h
        weights = np.full(m, h)
        left = np.arange(-1, m)
        right = np.append(idx, -1)
    elif kind == "neumann":
        h = 1.0 / (m - 1)
        nodes = idx * h
        weights = np.full(m, h)
        weights[[0, -1]] = 0.5 * h
        left = idx[:-1]
        right = idx[1:]
    elif kind == "periodic":
        h = 1.0 / m
        nodes = idx * h
        weights = np.full(m, h)
        left = idx
        right = np.roll(idx, -1)
    else:
        raise UnsupportedBoundary(f"finite differences support preset boundary conditions only, got {kind}")
    return FiniteDifferenceGrid(nodes, weights, h, left, right)


def _require_preset(problem: ValidatedProblem) -> None:
    if not problem.bc.is_preset:
        raise UnsupportedBoundary(
            "finite-difference methods need a dirichlet, neumann or periodic boundary condition",
        )


def _difference_operators(grid: FiniteDifferenceGrid, n: int) -> tuple[np.ndarray, np.ndarray]:
    """辺上の前進差分 D と平均 S (スカラー版を N 次元にクロネッカー積で拡張)."""
    edges = len(grid.edge_left)
    m = len(grid.nodes)
    d = np.zeros((edges, m))
    s = np.zeros((edges, m))
    for e, (i, k) in enumerate(zip(grid.edge_left, grid.edge_right)):
        if i >= 0:
            d[e, i] -= 1.0 / grid.spacing
            s[e, i] += 0.5
        if k >= 0:
            d[e, k] += 1.0 / grid.spacing
            s[e, k] += 0.5
    eye = np.eye(n)
    return np.kron(d, eye), np.kron(s, eye)


def _stiffness(problem: ValidatedProblem, grid: FiniteDifferenceGrid) -> np.ndarray:
    """t に依らない部分 h[DᵀPD + DᵀQS + SᵀQᵀD] + diag(w G)."""
    n = problem.n
    d, s = _difference_operators(grid, n)
    mid = grid.midpoints
    p_blocks = scipy.linalg.block_diag(*problem.p.evaluate_many(mid))
    q_blocks = scipy.linalg.block_diag(*problem.q.evaluate_many(mid))
    cross = d.T @ q_blocks @ s
    k = grid.spacing * (d.T @ p_blocks @ d + cross + cross.T)
    k += scipy.linalg.block_diag(*(grid.weights[:, None, None] * problem.g.evaluate_many(grid.nodes)))
    return k


def _symmetrize(k: np.ndarray, grid: FiniteDifferenceGrid, n: int) -> np.ndarray:
    scale = np.repeat(1.0 / np.sqrt(grid.weights), n)
    a = scale[:, None] * k * scale[None, :]
    return 0.5 * (a + a.T)


def _potential(problem: ValidatedProblem, grid: FiniteDifferenceGrid, t: float) -> np.ndarray:
    return scipy.linalg.block_diag(*problem.family.values(t, grid.nodes))


def discretize(problem: ValidatedProblem, t: float, m: int) -> np.ndarray:
    """𝒜_t の2次差分離散化 (M·N 次の実対称行列).

    Raises:
        UnsupportedBoundary: general 境界条件の場合
    """
    _require_preset(problem)
    grid = fd_grid(problem.bc.kind, m)
    k = _stiffness(problem, grid)
    k += scipy.linalg.block_diag(
        *(grid.weights[:, None, None] * problem.family.values(t, grid.nodes)),
    )
    return _symmetrize(k, grid, problem.n)


@dataclass(frozen=True, eq=False)
class EigenTrajectories:
    """t 格子上の離散固有値 (窓内の枝のみ)."""

    ts: np.ndarray
    eigenvalues: np.ndarray
    branch_offset: int
    window: float
    flow: int


def _max_family_norm(problem: ValidatedProblem, nodes: np.ndarray, ts: np.ndarray) -> float:
    return max(float(np.max(np.linalg.norm(problem.family.values(t, nodes), ord=2, axis=(1, 2)))) for t in ts)


def _branch_flow(before: np.ndarray, after: np.ndarray) -> int:
    up = np.count_nonzero((before < 0) & (after >= 0))
    down = np.count_nonzero((before >= 0) & (after < 0))
    return int(up - down)


def track_eigenvalues(
    problem: ValidatedProblem, m: int, t_grid: int, config: SolverConfig = DEFAULT_CONFIG,
) -> EigenTrajectories:
    """離散固有値を t 格子上で追跡し、0 を横切った枝を符号付きで数える.

    Raises:
        UnsupportedBoundary: general 境界条件の場合
        GridTooCoarse: 隣接格子間の固有値変化が連続性の上界を超えた場合
        WindowTooSmall: 交差する枝が窓 [−Λ, Λ] の外に出た場合
    """
    _require_preset(problem)
    if t_grid < MIN_TRACK_GRID:
        raise ValueError(f"eigenvalue tracking needs at least {MIN_TRACK_GRID} t-points, got {t_grid}")
    grid = fd_grid(problem.bc.kind, m)
    n = problem.n
    base = _stiffness(problem, grid)

    def spectrum(t: float) -> np.ndarray:
        k = base + scipy.linalg.block_diag(*(grid.weights[:, None, None] * problem.family.values(t, grid.nodes)))
        return np.linalg.eigvalsh(_symmetrize(k, grid, n))

    ts = np.linspace(0.0, 1.0, t_grid + 1)
    spectra = map_concurrently(spectrum, ts, config.jobs)
    window = config.window
    if window is None:
        window = WINDOW_FACTOR * max(_max_family_norm(problem, grid.nodes, ts), 1.0)

    def jump_bound(t_a: float, t_b: float) -> float:
        diff = problem.family.values(t_b, grid.nodes) - problem.family.values(t_a, grid.nodes)
        return float(np.max(np.linalg.norm(diff, ord=2, axis=(1, 2))))

    def flow_between(t_a: float, lam_a: np.ndarray, t_b: float, lam_b: np.ndarray, depth: int) -> int:
        bound = jump_bound(t_a, t_b)
        jumps = np.abs(lam_b - lam_a)
        slack = 1e-9 * max(1.0, float(np.max(np.abs(lam_a))))
        if np.any(jumps > bound + slack):
            raise GridTooCoarse(
                f"eigenvalues move by {np.max(jumps):.3e} over [{t_a:.6g}, {t_b:.6g}] "
                f"but the perturbation bound is {bound:.3e}",
            )
        crossing = (lam_a < 0) != (lam_b < 0)
        if not np.any(crossing):
            return 0
        if np.any(np.abs(lam_a[crossing]) > window) or np.any(np.abs(lam_b[crossing]) > window):
            raise WindowTooSmall(f"a crossing eigenvalue leaves the window [-{window:g}, {window:g}]")
        if np.count_nonzero(crossing) == 1 or depth >= MAX_REFINE_DEPTH:
            return _branch_flow(lam_a, lam_b)
        t_mid = 0.5 * (t_a + t_b)
        lam_mid = spectrum(t_mid)
        return (
            flow_between(t_a, lam_a, t_mid, lam_mid, depth + 1)
            + flow_between(t_mid, lam_mid, t_b, lam_b, depth + 1)
        )

    flow = sum(
        flow_between(ts[i], spectra[i], ts[i + 1], spectra[i + 1], 0) for i in range(len(ts) - 1)
    )

    stacked = np.array(spectra)
    inside = np.any(np.abs(stacked) <= window, axis=0)
    branches = np.flatnonzero(inside)
    offset = int(branches[0]) if branches.size else 0
    kept = stacked[:, branches[0]:branches[-1] + 1] if branches.size else stacked[:, :0]
    logger.info("iota_SP (tracking, M=%d, %d t-points) = %d", m, len(ts), flow)
    return EigenTrajectories(ts=ts, eigenvalues=kept, branch_offset=offset, window=window, flow=flow)


def spectral_flow_tracking(
    problem: ValidatedProblem, m: int, t_grid: int, config: SolverConfig = DEFAULT_CONFIG,
) -> int:
    """差分離散化の固有値追跡による ι_SP."""
    return track_eigenvalues(problem, m, t_grid, config).flow


# ---------------------------------------------------------------------------
# Morse指数
# ---------------------------------------------------------------------------
def _require_positive_p(problem: ValidatedProblem) -> None:
    xs = validation_grid()
    lowest = float(np.min(np.linalg.eigvalsh(problem.p.evaluate_many(xs))))
    if lowest <= 0:
        raise IndefiniteP(f"P(x) is not positive definite (smallest eigenvalue {lowest:.3e})")


def morse_index(problem: ValidatedProblem, t: float, m: int) -> int:
    """m⁻(𝒜_t): 離散化行列の負固有値の個数 (M と 2M で一致するまで倍増).

    Raises:
        IndefiniteP: P(x) が正定値でない場合
        DiscretizationUnresolved: 倍増を繰り返しても個数が安定しない場合
    """
    _require_preset(problem)
    _require_positive_p(problem)

    def count(size: int) -> int:
        return int(np.count_nonzero(np.linalg.eigvalsh(discretize(problem, t, size)) < 0))

    current = count(m)
    for _ in range(MAX_DOUBLINGS):
        m *= 2
        refined = count(m)
        if refined == current:
            logger.debug("morse index at t=%g stable at M=%d: %d", t, m, current)
            return current
        current = refined
    raise DiscretizationUnresolved(f"negative eigenvalue count at t={t:g} did not stabilize up to M={m}")


def morse_index_difference(problem: ValidatedProblem, m: int) -> tuple[int, int]:
    """(m⁻(𝒜₀), m⁻(𝒜₁)). 可容な問題では m⁻(𝒜₀) − m⁻(𝒜₁) = ι_PW."""
    return morse_index(problem, 0.0, m), morse_index(problem, 1.0, m)


__all__ = [
    "CrossingForm",
    "EigenTrajectories",
    "KernelBasis",
    "crossing_form",
    "discretize",
    "fd_grid",
    "inertia",
    "kernel_basis",
    "morse_index",
    "morse_index_difference",
    "spectral_flow_crossing_method",
    "spectral_flow_tracking",
    "track_eigenvalues",
]
