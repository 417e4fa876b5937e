"""Maslov指数 ι^CLM・Sp(2n,ℝ) の成分分類・モノドロミーの線形安定性.

二重空間 ℝ²ⁿ ⊕ ℝ²ⁿ には ω̃ = −ω₀ ⊕ ω₀ (行列 J̃₀ = diag(−J, J)) を入れる。
境界条件は Lagrange 部分空間 L ⊂ ℝ⁴ⁿ、基本解のパスはグラフ Gr ψ(t) で表し、
Gr ψ(t) ∩ L ≠ 0 ⇔ det(R₀ + R₁ψ(t)) = 0 を交差の検出に使う。
"""

from __future__ import annotations

import enum
import functools
import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from core_morse_sturm.config import DEFAULT_CONFIG, SolverConfig
from core_morse_sturm.degree import check_admissible, local_scale, locate_degeneracies, relative_sigma_min
from core_morse_sturm.errors import (
    EmptyKernel,
    IrregularCrossing,
    NotIsotropic,
    NotLinearlyStable,
    NotSymplectic,
    RankDeficientFrame,
)
from core_morse_sturm.problem import ValidatedProblem, symplectic_j
from core_morse_sturm.propagator import monodromy
from core_morse_sturm.spectralflow import (
    inertia,
    spectral_flow_crossing_method,
    spectral_flow_tracking,
)

logger = logging.getLogger(__name__)

ISOTROPY_TOL = 1e-12
SYMPLECTIC_TOL = 1e-8
COMPONENT_TOL = 1e-8
UNIT_CIRCLE_TOL = 1e-8
CLUSTER_RADIUS = 1e-6
SEMISIMPLE_TOL = 1e-8
TRANSVERSAL_WARN = 1e-4
PERTURBATION_DELTAS = (1e-1, 1e-2, 1e-3)


def double_j(n: int) -> np.ndarray:
    """J̃₀ = diag(−J, J) (4n×4n)."""
    j = symplectic_j(n)
    return scipy.linalg.block_diag(-j, j)


def _orthonormal(frame: np.ndarray) -> np.ndarray:
    return scipy.linalg.orth(frame)


# ---------------------------------------------------------------------------
# Lagrange部分空間
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class LagrangianFrame:
    """(ℝ²ⁿ, ω₀) の Lagrange 部分空間の枠 (2n×n)."""

    frame: np.ndarray

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        if frame.ndim != 2 or frame.shape[0] != 2 * frame.shape[1]:
            raise RankDeficientFrame(f"Lagrangian frame must be 2n x n, got shape {frame.shape}")
        if np.linalg.matrix_rank(frame) < frame.shape[1]:
            raise RankDeficientFrame("Lagrangian frame does not have full column rank")
        basis = _orthonormal(frame)
        defect = float(np.max(np.abs(basis.T @ symplectic_j(frame.shape[1]) @ basis), initial=0.0))
        if defect > ISOTROPY_TOL:
            raise NotIsotropic(f"frame is not isotropic (|Z^T J Z| = {defect:.3e})")
        object.__setattr__(self, "frame", frame)

    @property
    def n(self) -> int:
        return self.frame.shape[1]


@dataclass(frozen=True, eq=False)
class DoubleLagrangian:
    """(ℝ²ⁿ⊕ℝ²ⁿ, −ω₀⊕ω₀) の Lagrange 部分空間 L (4n×2n の枠)."""

    frame: np.ndarray

    def __post_init__(self):
        frame = np.asarray(self.frame, dtype=float)
        if frame.ndim != 2 or frame.shape[0] != 2 * frame.shape[1] or frame.shape[1] % 2:
            raise RankDeficientFrame(f"double Lagrangian frame must be 4n x 2n, got shape {frame.shape}")
        if np.linalg.matrix_rank(frame) < frame.shape[1]:
            raise RankDeficientFrame("double Lagrangian frame does not have full column rank")
        basis = _orthonormal(frame)
        defect = float(np.max(np.abs(basis.T @ double_j(frame.shape[1] // 2) @ basis), initial=0.0))
        if defect > ISOTROPY_TOL:
            raise NotIsotropic(
                f"subspace is not isotropic for -omega + omega (defect {defect:.3e}); "
                f"the boundary condition is not self-adjoint",
            )
        object.__setattr__(self, "frame", basis)

    @property
    def n(self) -> int:
        return self.frame.shape[1] // 2

    def boundary_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """L = ker[R₀ | R₁] となる (R₀, R₁). [R₀ | R₁] = Ẑᵀ J̃₀."""
        rows = self.frame.T @ double_j(self.n)
        size = 2 * self.n
        return rows[:, :size], rows[:, size:]

    @classmethod
    def separated(cls, start: LagrangianFrame, end: LagrangianFrame) -> DoubleLagrangian:
        """分離型境界条件 w(0) ∈ Λ₀, w(1) ∈ Λ₁ に対応する Λ₀ ⊕ Λ₁."""
        if start.n != end.n:
            raise RankDeficientFrame(f"Lagrangian dimensions differ: {start.n} and {end.n}")
        return cls(scipy.linalg.block_diag(start.frame, end.frame))

    def conjugated(self, phi: np.ndarray) -> DoubleLagrangian:
        """(Φ ⊕ Φ) L."""
        return DoubleLagrangian(scipy.linalg.block_diag(phi, phi) @ self.frame)


def lagrangian_from_bc(z_frame) -> DoubleLagrangian:
    """部分空間 Z ⊂ ℝⁿ⊕ℝⁿ から L_Z = J̃₀(Z^⊥ ⊕ Z) を作る.

    座標は w = (v, u) を2つ並べた (v₀, u₀, v₁, u₁)。Z の元 (z₀, z₁) は
    (0, z₀, 0, z₁) に、Z^⊥ の元 (y₀, y₁) は (y₀, 0, −y₁, 0) に移る。
    u(0), u(1) ∈ Z かつ (v(0), −v(1)) ∈ Z^⊥ という境界条件に対応する。

    Args:
        z_frame: 2n×k の枠 (k = 0 なら Z = {0})

    Raises:
        RankDeficientFrame: 枠の列が一次従属、または k > 2n の場合
    """
    z = np.asarray(z_frame, dtype=float)
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] == 0:
        raise RankDeficientFrame(f"Z frame must be 2n x k, got shape {z.shape}")
    size, k = z.shape
    n = size // 2
    if k > size:
        raise RankDeficientFrame(f"Z frame has {k} columns but Z lies in a {size}-dimensional space")
    if k and np.linalg.matrix_rank(z) < k:
        raise RankDeficientFrame(f"Z frame has rank {np.linalg.matrix_rank(z)} < {k}")
    z_perp = scipy.linalg.null_space(z.T) if k else np.eye(size)

    inside = np.zeros((4 * n, k))
    inside[n:2 * n] = z[:n]
    inside[3 * n:] = z[n:]
    normal = np.zeros((4 * n, z_perp.shape[1]))
    normal[:n] = z_perp[:n]
    normal[2 * n:3 * n] = -z_perp[n:]
    return DoubleLagrangian(np.hstack([normal, inside]))


def lagrangian_from_boundary(bc) -> DoubleLagrangian:
    """境界条件 (R₀, R₁) から L = ker[R₀ | R₁] を作る.

    Raises:
        RankDeficientFrame: 核の次元が 2N でない場合
        NotIsotropic: 境界条件が自己共役でない場合
    """
    frame = scipy.linalg.null_space(np.hstack([bc.r0, bc.r1]))
    if frame.shape[1] != 2 * bc.n:
        raise RankDeficientFrame(f"ker [R0 | R1] has dimension {frame.shape[1]}, expected {2 * bc.n}")
    return DoubleLagrangian(frame)


# ---------------------------------------------------------------------------
# Sp(2n,ℝ) の成分と線形安定性
# ---------------------------------------------------------------------------
class SpComponent(enum.Enum):
    PLUS = "Sp+"
    MINUS = "Sp-"
    ZERO = "Sp0"


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal-degenerate"


def _require_symplectic(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
        raise NotSymplectic(f"expected a 2n x 2n matrix, got shape {m.shape}")
    j = symplectic_j(m.shape[0] // 2)
    defect = float(np.max(np.abs(m.T @ j @ m - j))) / max(1.0, float(np.max(np.abs(m))) ** 2)
    if defect > SYMPLECTIC_TOL:
        raise NotSymplectic(f"M^T J M deviates from J by {defect:.3e}")
    return m


def sp_component(m) -> SpComponent:
    """det(M − Id) の符号で Sp⁺ / Sp⁻ / Sp⁰ に分類する.

    σ_min(M − Id) ≤ 10⁻⁸·max(1, ‖M‖₂) を Sp⁰ とみなす。

    Raises:
        NotSymplectic: MᵀJM ≠ J の場合
    """
    m = _require_symplectic(m)
    shifted = m - np.eye(len(m))
    sigma = np.linalg.svd(shifted, compute_uv=False)
    if sigma[-1] <= COMPONENT_TOL * max(1.0, float(np.linalg.norm(m, 2))):
        return SpComponent.ZERO
    sign, _ = np.linalg.slogdet(shifted)
    return SpComponent.PLUS if sign > 0 else SpComponent.MINUS


def _clusters(eigenvalues: np.ndarray) -> list[np.ndarray]:
    remaining = list(range(len(eigenvalues)))
    groups = []
    while remaining:
        seed = remaining.pop(0)
        members = [seed] + [i for i in remaining if abs(eigenvalues[i] - eigenvalues[seed]) <= CLUSTER_RADIUS]
        remaining = [i for i in remaining if i not in members]
        groups.append(np.array(members))
    return groups


def _stability(m: np.ndarray, eigenvalues: np.ndarray) -> Stability:
    scale = max(1.0, float(np.linalg.norm(m, 2)))
    for members in _clusters(eigenvalues):
        center = complex(np.mean(eigenvalues[members]))
        if abs(abs(center) - 1.0) > UNIT_CIRCLE_TOL:
            return Stability.UNSTABLE
        sigma = np.linalg.svd(m - center * np.eye(len(m)), compute_uv=False)
        geometric = int(np.count_nonzero(sigma <= SEMISIMPLE_TOL * scale))
        if geometric < len(members):
            return Stability.MARGINAL
    return Stability.STABLE


@dataclass(frozen=True, eq=False)
class MonodromyAnalysis:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    component: SpComponent
    stability: Stability
    condition: float

    @property
    def linearly_stable(self) -> bool:
        return self.stability is Stability.STABLE


def analyze_monodromy(m) -> MonodromyAnalysis:
    """Floquet乗数・成分・安定性をまとめて返す.

    condition は固有ベクトル行列の条件数 (半単純性判定の信頼度の目安)。
    """
    m = _require_symplectic(m)
    eigenvalues, vectors = np.linalg.eig(m)
    stability = _stability(m, eigenvalues)
    condition = float(np.linalg.cond(vectors))
    if stability is Stability.MARGINAL:
        logger.warning("monodromy has a defective eigenvalue on the unit circle (cond %.2e)", condition)
    return MonodromyAnalysis(
        matrix=m,
        eigenvalues=eigenvalues,
        component=sp_component(m),
        stability=stability,
        condition=condition,
    )


def is_linearly_stable(m) -> bool:
    """全固有値が単位円上 (10⁻⁸ 以内) にあり、M が半単純なら True."""
    m = _require_symplectic(m)
    return _stability(m, np.linalg.eigvals(m)) is Stability.STABLE


@dataclass(frozen=True)
class PerturbedComponents:
    delta: float
    minus: SpComponent
    plus: SpComponent


def stable_perturbation_check(m, deltas=PERTURBATION_DELTAS) -> list[PerturbedComponents]:
    """e^{−δJ}M と e^{+δJ}M の成分を各 δ について求める.

    Raises:
        NotLinearlyStable: M が線形安定でない場合
    """
    m = _require_symplectic(m)
    if not is_linearly_stable(m):
        raise NotLinearlyStable("stable perturbation check requires a linearly stable matrix")
    j = symplectic_j(len(m) // 2)
    return [
        PerturbedComponents(
            delta=float(delta),
            minus=sp_component(scipy.linalg.expm(-delta * j) @ m),
            plus=sp_component(scipy.linalg.expm(delta * j) @ m),
        )
        for delta in deltas
    ]


# ---------------------------------------------------------------------------
# 周期解の不安定性判定
# ---------------------------------------------------------------------------
class Orientation(enum.Enum):
    PRESERVING = "preserving"
    REVERSING = "reversing"


class Verdict(enum.Enum):
    UNSTABLE = "linearly-unstable"
    INCONCLUSIVE = "inconclusive"


def instability_verdict(iota_pw: int, n: int, orientation: Orientation) -> Verdict:
    """向きを保つなら ι_PW + n が奇数、保たないなら偶数のとき線形不安定.

    判定は片方向のみで、"stable" は返さない。
    """
    parity = (iota_pw + n) % 2
    if orientation is Orientation.PRESERVING:
        return Verdict.UNSTABLE if parity == 1 else Verdict.INCONCLUSIVE
    return Verdict.UNSTABLE if parity == 0 else Verdict.INCONCLUSIVE


# ---------------------------------------------------------------------------
# Maslov指数 ι^CLM
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SymplecticPath:
    """t ↦ ψ(t) ∈ Sp(2n,ℝ). derivative が無ければ中心差分で ψ̇ を求める."""

    matrix: Callable[[float], np.ndarray]
    t0: float = 0.0
    t1: float = 1.0
    derivative: Callable[[float], np.ndarray] | None = None
    fd_step: float = 1e-4

    def at(self, t: float) -> np.ndarray:
        return np.asarray(self.matrix(t), dtype=float)

    def derivative_at(self, t: float) -> np.ndarray:
        if self.derivative is not None:
            return np.asarray(self.derivative(t), dtype=float)
        h = self.fd_step
        lo, hi = max(self.t0, t - h), min(self.t1, t + h)
        return (self.at(hi) - self.at(lo)) / (hi - lo)


def monodromy_path(problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG) -> SymplecticPath:
    """t ↦ ψ_t(1) (実パラメータのモノドロミー)."""
    return SymplecticPath(lambda t: monodromy(problem, t, config.integrator).real)


@dataclass(frozen=True, eq=False)
class MaslovCrossing:
    t: float
    position: str
    matrix: np.ndarray
    eigenvalues: np.ndarray
    n_plus: int
    n_minus: int
    nullity: int
    transversal_defect: float

    @property
    def contribution(self) -> int:
        if self.position == "start":
            return self.n_plus
        if self.position == "end":
            return -self.n_minus
        return self.n_plus - self.n_minus


@dataclass(frozen=True, eq=False)
class MaslovReport:
    index: int
    crossings: tuple[MaslovCrossing, ...]

    @property
    def endpoint_crossing(self) -> bool:
        return any(c.position != "interior" for c in self.crossings)


def _path_pairing(
    path: SymplecticPath, vectors: np.ndarray, transversal: np.ndarray, tau: float,
) -> np.ndarray:
    """ω̃(v_i, w_j(τ)). w_j(τ) ∈ W は v_j + w_j(τ) ∈ Gr ψ(τ) で定まる."""
    size = len(vectors) // 2
    graph = np.vstack([np.eye(size), path.at(tau)])
    coefficients = np.linalg.solve(np.hstack([graph, -transversal]), vectors)
    w = transversal @ coefficients[size:]
    return (double_j(size // 2) @ vectors).T @ w


def _crossing_matrix(
    path: SymplecticPath, vectors: np.ndarray, transversal: np.ndarray, t: float, position: str, h: float,
) -> np.ndarray:
    def f(tau):
        return _path_pairing(path, vectors, transversal, tau)

    if position == "start":
        q = (-3.0 * f(t) + 4.0 * f(t + h) - f(t + 2 * h)) / (2 * h)
    elif position == "end":
        q = (3.0 * f(t) - 4.0 * f(t - h) + f(t - 2 * h)) / (2 * h)
    else:
        q = (f(t + h) - f(t - h)) / (2 * h)
    return 0.5 * (q + q.T)


def crossing_form_clm(
    path: SymplecticPath,
    lagrangian: DoubleLagrangian,
    t: float,
    position: str = "interior",
    config: SolverConfig = DEFAULT_CONFIG,
) -> MaslovCrossing:
    """Gr ψ(t) ∩ L 上の交差形式 Q(v) = d/dt ω̃(v, w(t)).

    横断的 Lagrange 部分空間 W として J̃₀ℓ と J̃₀ℓ + ½ℓ (ℓ = Gr ψ(t) の正規直交枠)
    の2通りを使い、差を transversal_defect に記録する。

    Raises:
        EmptyKernel: t で交差していない場合
    """
    r0, r1 = lagrangian.boundary_pair()
    psi = path.at(t)
    _, sigma, vh = np.linalg.svd(r0 + r1 @ psi)
    null = sigma < config.rank_tol * local_scale(r0, r1, psi)
    if not np.any(null):
        raise EmptyKernel(f"Gr psi(t) meets L trivially at t={t:.10g}")
    w0 = vh[null].T
    vectors = np.vstack([w0, psi @ w0])

    size = len(psi)
    graph = _orthonormal(np.vstack([np.eye(size), psi]))
    rotated = double_j(size // 2) @ graph
    forms = [
        _crossing_matrix(path, vectors, rotated + shift * graph, t, position, path.fd_step)
        for shift in (0.0, 0.5)
    ]
    scale = max(float(np.max(np.abs(forms[0]))), np.finfo(float).tiny)
    defect = float(np.max(np.abs(forms[0] - forms[1]))) / scale
    if defect > TRANSVERSAL_WARN:
        logger.warning("crossing form at t=%.10g depends on the transversal (defect %.2e)", t, defect)
    reference = np.linalg.norm(path.derivative_at(t), 2) * np.linalg.norm(vectors, 2) ** 2
    eigenvalues, n_plus, n_minus, nullity = inertia(forms[0], config.irregular_tol, reference)
    return MaslovCrossing(
        t=float(t), position=position, matrix=forms[0], eigenvalues=eigenvalues,
        n_plus=n_plus, n_minus=n_minus, nullity=nullity, transversal_defect=defect,
    )


def maslov_clm(
    lagrangian: DoubleLagrangian, path: SymplecticPath, config: SolverConfig = DEFAULT_CONFIG,
) -> MaslovReport:
    """ι^CLM(L, Gr ψ(t); t ∈ [t0, t1]) = n₊(Q(t0)) + Σ sgn Q(t*) − n₋(Q(t1)).

    Raises:
        IrregularCrossing: 内部の交差形式が退化している場合
        ClusterUnresolved: 交差時刻が分解できない場合
    """
    r0, r1 = lagrangian.boundary_pair()
    at = functools.lru_cache(maxsize=None)(path.at)

    def matrix_fn(t):
        return r0 + r1 @ at(float(t))

    def scale_fn(t):
        return local_scale(r0, r1, at(float(t)))

    crossings: list[MaslovCrossing] = []
    endpoints = {}
    for t, position in ((path.t0, "start"), (path.t1, "end")):
        if relative_sigma_min(matrix_fn(t), scale_fn(t)) <= config.rank_tol:
            endpoints[position] = t
            logger.warning("Gr psi meets L at the %s of the path (t=%g)", position, t)
            crossings.append(crossing_form_clm(path, lagrangian, t, position, config))

    guard = max(10 * path.fd_step, 1e3 * config.root_xtol)
    for instant in locate_degeneracies(matrix_fn, path.t0, path.t1, config, scale_fn):
        if any(abs(instant.t - t) < guard for t in endpoints.values()):
            continue
        crossing = crossing_form_clm(path, lagrangian, instant.t, "interior", config)
        if crossing.nullity:
            raise IrregularCrossing(
                f"Maslov crossing form at t={instant.t:.10g} is degenerate "
                f"(eigenvalues {np.array2string(crossing.eigenvalues, precision=3)}); "
                f"retry with a small --delta-shift",
            )
        crossings.append(crossing)

    crossings.sort(key=lambda c: c.t)
    index = sum(c.contribution for c in crossings)
    logger.info("iota_CLM = %d from %d crossings", index, len(crossings))
    return MaslovReport(index=index, crossings=tuple(crossings))


def perturbed_endpoint_components(
    path: SymplecticPath, delta: float = 1e-3,
) -> tuple[SpComponent, SpComponent]:
    """e^{−δJ}ψ(t0) と e^{−δJ}ψ(t1) の成分. 両者が一致すれば周期境界条件の ι^CLM は偶数."""
    start = path.at(path.t0)
    rotation = scipy.linalg.expm(-delta * symplectic_j(len(start) // 2))
    return sp_component(rotation @ start), sp_component(rotation @ path.at(path.t1))


@dataclass(frozen=True, eq=False)
class FormulaCheck:
    iota_sp: int
    method: str
    maslov: MaslovReport

    @property
    def iota_clm(self) -> int:
        return self.maslov.index

    @property
    def passed(self) -> bool:
        return self.iota_clm == -self.iota_sp


def spectral_flow_formula_check(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG,
) -> FormulaCheck:
    """ι^CLM(L, Gr ψ) = −sf(𝒜_t) を照合する.

    sf はプリセット境界条件なら固有値追跡、それ以外は交差形式法で求める
    (ρ の零点を共有しない経路を優先する)。
    """
    check_admissible(problem, config)
    if problem.bc.is_preset:
        iota_sp = spectral_flow_tracking(problem, config.fd_size, config.track_grid, config)
        method = "tracking"
    else:
        iota_sp, _ = spectral_flow_crossing_method(problem, config)
        method = "crossing"
    report = maslov_clm(lagrangian_from_boundary(problem.bc), monodromy_path(problem, config), config)
    check = FormulaCheck(iota_sp=iota_sp, method=method, maslov=report)
    logger.info("iota_CLM = %d, iota_SP = %d (%s): %s", check.iota_clm, iota_sp, method, check.passed)
    return check
