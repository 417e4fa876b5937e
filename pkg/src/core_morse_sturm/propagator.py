"""線形ハミルトン系 ψ' = J B_z(x) ψ, ψ(0) = Id の数値積分.

基本解 ψ_z とモノドロミー ψ_z(1) を返す。複素シンプレクティック性
ψᵀJψ = J (共役ではなく転置) は監視のみ行い、射影による補正はしない。
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import TypeVar

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from core_morse_sturm.errors import StepSizeUnderflow, SymplecticityLost
from core_morse_sturm.problem import ValidatedProblem, hamiltonian_coefficients, symplectic_j

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ADAPTIVE_SCHEMES = ("DOP853", "RK45")
MIN_FIXED_STEPS = 64
DET_FLOOR = 1e-8


@dataclass(frozen=True)
class IntegratorConfig:
    """積分器の設定.

    method="adaptive" は埋め込み型Runge-Kutta (scheme: DOP853 / RK45)、
    method="rk4" は固定刻みの古典的4次Runge-Kutta (steps 分割)。
    """

    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "adaptive"
    scheme: str = "DOP853"
    steps: int = 256
    dense: bool = False
    symplectic_tol: float = 1e-6

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError(f"Tolerances must be positive: rtol={self.rtol}, atol={self.atol}")
        if self.method not in ("adaptive", "rk4"):
            raise ValueError(f"Unknown integration method: {self.method}")
        if self.scheme not in ADAPTIVE_SCHEMES:
            raise ValueError(f"Unknown adaptive scheme: {self.scheme}")
        if self.method == "rk4" and self.steps < MIN_FIXED_STEPS:
            raise ValueError(f"Fixed-step integration needs at least {MIN_FIXED_STEPS} steps")
        if not self.symplectic_tol > 0:
            raise ValueError(f"symplectic_tol must be positive: {self.symplectic_tol}")

    def with_dense(self) -> IntegratorConfig:
        return self if self.dense else replace(self, dense=True)


DEFAULT_INTEGRATOR = IntegratorConfig()


@dataclass(frozen=True, eq=False)
class FundamentalSolution:
    """基本解 ψ_z(x). dense=True で積分した場合のみ任意の x で評価できる."""

    z: complex
    terminal: np.ndarray
    checkpoints: np.ndarray
    matrices: np.ndarray
    error_estimate: float
    symplectic_drift: float
    absolute_drift: float
    interpolant: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.terminal.shape[0]

    def at_many(self, xs) -> np.ndarray:
        """ψ_z(x) を複数点で評価し (len(xs), 2N, 2N) を返す."""
        if self.interpolant is None:
            raise ValueError("dense output was not requested for this solution")
        return self.interpolant(np.atleast_1d(np.asarray(xs, dtype=float)))

    def at(self, x: float) -> np.ndarray:
        return self.at_many([x])[0]

    def inverse_at_many(self, xs) -> np.ndarray:
        """ψ_z(x)⁻¹ = −J ψ_z(x)ᵀ J (複素シンプレクティック行列の逆)."""
        j = symplectic_j(self.size // 2)
        psi = self.at_many(xs)
        return -j @ np.swapaxes(psi, 1, 2) @ j


def symplectic_defect(matrices: np.ndarray, relative: bool = True) -> float:
    """max ‖ψᵀJψ − J‖_max を返す.

    relative=True なら各 ψ について max(1, ‖ψ‖²_max) で割る。
    symplectic_tol との比較は相対値で行う。
    """
    matrices = np.asarray(matrices)
    if matrices.ndim == 2:
        matrices = matrices[None]
    j = symplectic_j(matrices.shape[1] // 2)
    residual = np.max(np.abs(np.swapaxes(matrices, 1, 2) @ j @ matrices - j), axis=(1, 2))
    if relative:
        residual = residual / np.maximum(1.0, np.max(np.abs(matrices), axis=(1, 2)) ** 2)
    return float(np.max(residual))



def _rk4(rhs, y0: np.ndarray, steps: int, span: tuple[float, float]):
    xs = np.linspace(span[0], span[1], steps + 1)
    h = xs[1] - xs[0]
    ys = [y0]
    derivs = [rhs(xs[0], y0)]
    y = y0
    for k in range(steps):
        x = xs[k]
        k1 = derivs[-1]
        k2 = rhs(x + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(x + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(x + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys.append(y)
        derivs.append(rhs(xs[k + 1], y))
    return xs, np.array(ys), np.array(derivs)


def _hermite_interpolant(xs, ys, derivs, size: int):
    real = CubicHermiteSpline(xs, ys.real, derivs.real, axis=0)
    imag = CubicHermiteSpline(xs, ys.imag, derivs.imag, axis=0)

    def evaluate(points: np.ndarray) -> np.ndarray:
        return (real(points) + 1j * imag(points)).reshape(-1, size, size)

    return evaluate


def integrate_hamiltonian(
    coefficients: Callable[[float], np.ndarray],
    size: int,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    z: complex = 0j,
    span: tuple[float, float] = (0.0, 1.0),
) -> FundamentalSolution:
    """任意の係数 B(x) について ψ' = J B(x) ψ を積分する.

    Args:
        coefficients: x → 2N×2N 複素対称行列
        size: 2N
        config: 積分器設定
        z: 記録用のパラメータ値
        span: 積分区間 (ψ(span[0]) = Id)

    Raises:
        StepSizeUnderflow: 適応積分が停止した場合
        SymplecticityLost: ψᵀJψ = J が許容誤差を超えて崩れた場合
    """
    j = symplectic_j(size // 2)
    identity = np.eye(size, dtype=complex)

    def rhs(x, y):
        return (j @ coefficients(x) @ y.reshape(size, size)).ravel()

    if config.method == "adaptive":
        sol = solve_ivp(
            rhs, span, identity.ravel(), method=config.scheme,
            rtol=config.rtol, atol=config.atol, dense_output=config.dense,
        )
        if sol.status != 0:
            raise StepSizeUnderflow(f"integration stalled at z={z}: {sol.message}")
        xs = sol.t
        matrices = sol.y.T.reshape(-1, size, size)
        error = config.rtol * len(xs)
        interpolant = None
        if config.dense:
            dense = sol.sol

            def interpolant(points: np.ndarray) -> np.ndarray:
                return dense(points).T.reshape(-1, size, size)
    else:
        xs, ys, derivs = _rk4(rhs, identity.ravel(), config.steps, span)
        matrices = ys.reshape(-1, size, size)
        error = abs(span[1] - span[0]) ** 5 / config.steps**4
        interpolant = _hermite_interpolant(xs, ys, derivs, size) if config.dense else None

    drift = symplectic_defect(matrices)
    if drift > config.symplectic_tol:
        raise SymplecticityLost(f"psi^T J psi deviates from J by {drift:.3e} at z={z}")
    dets = np.abs(np.linalg.det(matrices))
    if np.min(dets) <= DET_FLOOR:
        raise SymplecticityLost(f"|det psi| fell to {np.min(dets):.3e} at z={z}")

    logger.debug("z=%s: %d checkpoints, symplectic drift %.2e", z, len(xs), drift)
    return FundamentalSolution(
        z=complex(z),
        terminal=matrices[-1].copy(),
        checkpoints=np.asarray(xs),
        matrices=matrices,
        error_estimate=float(error),
        symplectic_drift=drift,
        absolute_drift=symplectic_defect(matrices, relative=False),
        interpolant=interpolant,
    )


def fundamental_solution(
    problem: ValidatedProblem,
    z: complex,
    config: IntegratorConfig = DEFAULT_INTEGRATOR,
    span: tuple[float, float] = (0.0, 1.0),
) -> FundamentalSolution:
    """問題の B_z(x) について基本解を積分する."""
    z = complex(z)

    def coefficients(x: float) -> np.ndarray:
        return hamiltonian_coefficients(problem, z, x)

    return integrate_hamiltonian(coefficients, 2 * problem.n, config, z, span)


def monodromy(
    problem: ValidatedProblem, z: complex, config: IntegratorConfig = DEFAULT_INTEGRATOR,
) -> np.ndarray:
    """ψ_z(1) を返す."""
    return fundamental_solution(problem, z, config).terminal


def map_concurrently(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """fn を items に適用する. jobs > 1 ならスレッドプールで並行実行し、入力順で返す."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))
