"""Morse-Sturm境界値問題の定義・検証・ハミルトン形式への変換.

作用素
    𝒜_t u = −(P u' + Q u)' + Qᵀ u' + (G + C(t,·)) u,   x ∈ [0, 1]
と境界条件 R₀ w(0) + R₁ w(1) = 0 (w = (v, u), v = P u' + Q u) を扱う。
複素化 z = t + is では C_z = C(t,·) + is·Id とする。
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from core_morse_sturm.errors import (
    AsymmetricCoefficient,
    DegenerateP,
    HypothesisError,
    InvalidProblem,
    NonzeroC0,
    RankDeficientBoundary,
)

logger = logging.getLogger(__name__)

VALIDATION_POINTS = 129
DET_P_TOL = 1e-10
SYMMETRY_TOL = 1e-12

PRESET_KINDS = ("dirichlet", "neumann", "periodic")


def symplectic_j(n: int) -> np.ndarray:
    """標準シンプレクティック行列 J = [[0, −I], [I, 0]] (2n×2n)."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def validation_grid() -> np.ndarray:
    return np.linspace(0.0, 1.0, VALIDATION_POINTS)


def _as_matrix_stack(values, name: str) -> np.ndarray:
    """(k, n, n) の実数配列に変換する。2次元なら k=1 とみなす."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(f"{name} must be a stack of square matrices, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# 係数場
# ---------------------------------------------------------------------------
class CoefficientField(abc.ABC):
    """x ∈ [0, 1] → 実 N×N 行列 の評価器."""

    @property
    @abc.abstractmethod
    def n(self) -> int: ...

    @abc.abstractmethod
    def evaluate_many(self, xs) -> np.ndarray:
        """複数点で評価し (len(xs), N, N) の配列を返す."""

    def __call__(self, x: float) -> np.ndarray:
        return self.evaluate_many(np.array([x], dtype=float))[0]

    def symmetry_defect(self, xs) -> float:
        values = self.evaluate_many(xs)
        return float(np.max(np.abs(values - np.swapaxes(values, 1, 2)), initial=0.0))


@dataclass(frozen=True, eq=False)
class PolynomialField(CoefficientField):
    """F(x) = Σ_k A_k x^k. coefficients[k] が A_k."""

    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", _as_matrix_stack(self.coefficients, "polynomial coefficients"),
        )

    @property
    def n(self) -> int:
        return self.coefficients.shape[1]

    def __call__(self, x: float) -> np.ndarray:
        # Horner法 (ODE右辺から頻繁に呼ばれる)
        result = self.coefficients[-1].copy()
        for coeff in self.coefficients[-2::-1]:
            result = result * x + coeff
        return result

    def evaluate_many(self, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        powers = xs[:, None] ** np.arange(len(self.coefficients))[None, :]
        return np.einsum("mk,kij->mij", powers, self.coefficients)


@dataclass(frozen=True, eq=False)
class FourierField(CoefficientField):
    """F(x) = A₀ + Σ_k [C_k cos(2πkx/L) + S_k sin(2πkx/L)]."""

    constant: np.ndarray
    cos_terms: np.ndarray
    sin_terms: np.ndarray
    period: float = 1.0

    def __post_init__(self):
        constant = _as_matrix_stack(self.constant, "fourier constant")[0]
        n = constant.shape[0]
        cos_terms = self._terms(self.cos_terms, n, "fourier cos")
        sin_terms = self._terms(self.sin_terms, n, "fourier sin")
        # 項数を揃える
        k = max(len(cos_terms), len(sin_terms))
        cos_terms = np.concatenate([cos_terms, np.zeros((k - len(cos_terms), n, n))])
        sin_terms = np.concatenate([sin_terms, np.zeros((k - len(sin_terms), n, n))])
        if self.period <= 0:
            raise ValueError(f"Fourier period must be positive: {self.period}")
        object.__setattr__(self, "constant", constant)
        object.__setattr__(self, "cos_terms", cos_terms)
        object.__setattr__(self, "sin_terms", sin_terms)

    @staticmethod
    def _terms(values, n: int, name: str) -> np.ndarray:
        if values is None or len(values) == 0:
            return np.zeros((0, n, n))
        arr = _as_matrix_stack(values, name)
        if arr.shape[1] != n:
            raise ValueError(f"{name} terms must be {n}x{n}, got {arr.shape[1:]}")
        return arr

    @property
    def n(self) -> int:
        return self.constant.shape[0]

    def evaluate_many(self, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        k = np.arange(1, len(self.cos_terms) + 1)
        phase = 2.0 * np.pi * xs[:, None] * k[None, :] / self.period
        return (
            self.constant[None]
            + np.einsum("mk,kij->mij", np.cos(phase), self.cos_terms)
            + np.einsum("mk,kij->mij", np.sin(phase), self.sin_terms)
        )


@dataclass(frozen=True, eq=False)
class SampledField(CoefficientField):
    """格子上の標本値をB-スプライン補間する係数場 (order: 1 または 3)."""

    grid: np.ndarray
    values: np.ndarray
    order: int = 3

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = _as_matrix_stack(self.values, "sampled values")
        if self.order not in (1, 3):
            raise ValueError(f"Unsupported interpolation order: {self.order}")
        if grid.ndim != 1 or len(grid) != len(values):
            raise ValueError("sampled grid and values must have matching length")
        if len(grid) <= self.order:
            raise ValueError(f"order {self.order} interpolation needs more than {self.order} samples")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("sampled grid must be strictly increasing")
        if grid[0] > 0.0 or grid[-1] < 1.0:
            raise ValueError("sampled grid must cover [0, 1]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spline", make_interp_spline(grid, values, k=self.order, axis=0))

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def evaluate_many(self, xs) -> np.ndarray:
        return self._spline(np.atleast_1d(np.asarray(xs, dtype=float)))


@dataclass(frozen=True, eq=False)
class LinearCombinationField(CoefficientField):
    """Σ_k a_k F_k(x). 部分パス・スペクトルシフトで基底係数を組み替えるのに使う."""

    terms: tuple[tuple[float, CoefficientField], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("linear combination needs at least one term")
        dims = {field.n for _, field in self.terms}
        if len(dims) != 1:
            raise ValueError(f"Mismatched coefficient dimensions: {sorted(dims)}")

    @property
    def n(self) -> int:
        return self.terms[0][1].n

    def __call__(self, x: float) -> np.ndarray:
        return sum(scale * field(x) for scale, field in self.terms)

    def evaluate_many(self, xs) -> np.ndarray:
        return sum(scale * field.evaluate_many(xs) for scale, field in self.terms)


def constant_field(matrix) -> PolynomialField:
    """定数係数場. スカラーは 1×1 行列として扱う."""
    return PolynomialField(np.atleast_2d(np.asarray(matrix, dtype=float)))


# ---------------------------------------------------------------------------
# 摂動族 C(t, x)
# ---------------------------------------------------------------------------
class PerturbationFamily(abc.ABC):
    """C(t, x) と ∂_t C(t, x) の評価器. C(0, ·) = 0 を仮定する."""

    @property
    @abc.abstractmethod
    def n(self) -> int: ...

    @abc.abstractmethod
    def values(self, t: float, xs) -> np.ndarray: ...

    @abc.abstractmethod
    def t_derivatives(self, t: float, xs) -> np.ndarray: ...

    def value(self, t: float, x: float) -> np.ndarray:
        return self.values(t, np.array([x], dtype=float))[0]

    def t_derivative(self, t: float, x: float) -> np.ndarray:
        return self.t_derivatives(t, np.array([x], dtype=float))[0]


@dataclass(frozen=True, eq=False)
class LinearFamily(PerturbationFamily):
    """C(t, x) = t·C₁(x)."""

    c1: CoefficientField

    @property
    def n(self) -> int:
        return self.c1.n

    def value(self, t: float, x: float) -> np.ndarray:
        return t * self.c1(x)

    def values(self, t: float, xs) -> np.ndarray:
        return t * self.c1.evaluate_many(xs)

    def t_derivatives(self, t: float, xs) -> np.ndarray:
        return self.c1.evaluate_many(xs)


@dataclass(frozen=True, eq=False)
class GridFamily(PerturbationFamily):
    """(t, x) 格子上の標本値を双線形補間する摂動族.

    values の形状は (len(ts), len(xs), N, N)。格子外の t は端のセルから線形外挿する。
    """

    ts: np.ndarray
    xs: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=float)
        xs = np.asarray(self.xs, dtype=float)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 4 or samples.shape[:2] != (len(ts), len(xs)):
            raise ValueError(
                f"grid samples must have shape (len(t), len(x), N, N), got {samples.shape}",
            )
        if samples.shape[2] != samples.shape[3]:
            raise ValueError("grid samples must be square matrices")
        if len(ts) < 2 or len(xs) < 2:
            raise ValueError("grid family needs at least two t and two x nodes")
        if np.any(np.diff(ts) <= 0) or np.any(np.diff(xs) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if ts[0] != 0.0 or ts[-1] != 1.0:
            raise ValueError("grid family t nodes must start at 0 and end at 1")
        if xs[0] > 0.0 or xs[-1] < 1.0:
            raise ValueError("grid family x nodes must cover [0, 1]")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "samples", samples)

    @property
    def n(self) -> int:
        return self.samples.shape[2]

    def _rows(self, t: float, xs) -> tuple[np.ndarray, np.ndarray, float, float]:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        i = int(np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0, len(self.ts) - 2))
        j = np.clip(np.searchsorted(self.xs, xs, side="right") - 1, 0, len(self.xs) - 2)
        phi = ((xs - self.xs[j]) / (self.xs[j + 1] - self.xs[j]))[:, None, None]
        lower = (1.0 - phi) * self.samples[i, j] + phi * self.samples[i, j + 1]
        upper = (1.0 - phi) * self.samples[i + 1, j] + phi * self.samples[i + 1, j + 1]
        dt = self.ts[i + 1] - self.ts[i]
        return lower, upper, (t - self.ts[i]) / dt, dt

    def values(self, t: float, xs) -> np.ndarray:
        lower, upper, theta, _ = self._rows(t, xs)
        return (1.0 - theta) * lower + theta * upper

    def t_derivatives(self, t: float, xs) -> np.ndarray:
        lower, upper, _, dt = self._rows(t, xs)
        return (upper - lower) / dt


@dataclass(frozen=True, eq=False)
class ReparametrizedFamily(PerturbationFamily):
    """C'(τ, x) = C(a + τ(b − a), x) − C(a, x)."""

    base: PerturbationFamily
    a: float
    b: float

    @property
    def n(self) -> int:
        return self.base.n

    def values(self, t: float, xs) -> np.ndarray:
        return self.base.values(self.a + t * (self.b - self.a), xs) - self.base.values(self.a, xs)

    def t_derivatives(self, t: float, xs) -> np.ndarray:
        return (self.b - self.a) * self.base.t_derivatives(self.a + t * (self.b - self.a), xs)


@dataclass(frozen=True, eq=False)
class FamilySlice(CoefficientField):
    """固定した t での x ↦ C(t, x)."""

    family: PerturbationFamily
    t: float

    @property
    def n(self) -> int:
        return self.family.n

    def __call__(self, x: float) -> np.ndarray:
        return self.family.value(self.t, x)

    def evaluate_many(self, xs) -> np.ndarray:
        return self.family.values(self.t, xs)


# ---------------------------------------------------------------------------
# 境界条件
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BoundaryCondition:
    """R₀ w(0) + R₁ w(1) = 0. kind は dirichlet / neumann / periodic / general."""

    r0: np.ndarray
    r1: np.ndarray
    kind: str = "general"

    def __post_init__(self):
        r0 = np.asarray(self.r0, dtype=float)
        r1 = np.asarray(self.r1, dtype=float)
        if r0.ndim != 2 or r0.shape[0] != r0.shape[1] or r0.shape[0] % 2:
            raise ValueError(f"R0 must be 2N x 2N, got shape {r0.shape}")
        if r1.shape != r0.shape:
            raise ValueError(f"R1 shape {r1.shape} does not match R0 shape {r0.shape}")
        if self.kind not in (*PRESET_KINDS, "general"):
            raise ValueError(f"Unknown boundary kind: {self.kind}")
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "r1", r1)

    @property
    def n(self) -> int:
        return self.r0.shape[0] // 2

    @property
    def is_preset(self) -> bool:
        return self.kind in PRESET_KINDS

    @classmethod
    def dirichlet(cls, n: int) -> BoundaryCondition:
        eye, zero = np.eye(n), np.zeros((n, n))
        return cls(np.block([[zero, eye], [zero, zero]]), np.block([[zero, zero], [zero, eye]]), "dirichlet")

    @classmethod
    def neumann(cls, n: int) -> BoundaryCondition:
        eye, zero = np.eye(n), np.zeros((n, n))
        return cls(np.block([[eye, zero], [zero, zero]]), np.block([[zero, zero], [eye, zero]]), "neumann")

    @classmethod
    def periodic(cls, n: int) -> BoundaryCondition:
        return cls(np.eye(2 * n), -np.eye(2 * n), "periodic")

    @classmethod
    def preset(cls, kind: str, n: int) -> BoundaryCondition:
        if kind not in PRESET_KINDS:
            raise ValueError(f"Unknown boundary preset: {kind}")
        return getattr(cls, kind)(n)


# ---------------------------------------------------------------------------
# 問題
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class MorseSturmProblem:
    """係数 P, Q, G, 摂動族, 境界条件, 矩形 Ω = [0,1]×[−h,h] の半高さ h."""

    p: CoefficientField
    q: CoefficientField
    g: CoefficientField
    family: PerturbationFamily
    bc: BoundaryCondition
    height: float = 1.0
    name: str = ""

    def __post_init__(self):
        dims = {
            "P": self.p.n, "Q": self.q.n, "G": self.g.n,
            "perturbation": self.family.n, "boundary": self.bc.n,
        }
        if len(set(dims.values())) != 1:
            raise ValueError(f"Inconsistent problem dimensions: {dims}")
        if not self.height > 0:
            raise ValueError(f"Rectangle half-height must be positive: {self.height}")

    @property
    def n(self) -> int:
        return self.p.n

    @classmethod
    def constant_coefficients(
        cls,
        p,
        q,
        g,
        c1,
        bc: BoundaryCondition | str,
        height: float = 1.0,
        name: str = "",
    ) -> MorseSturmProblem:
        """定数係数・線形族 C(t,x) = t·C₁ の問題を組み立てる.

        bc にプリセット名を渡した場合は次元 N から境界行列を展開する。
        """
        p_field = constant_field(p)
        if isinstance(bc, str):
            bc = BoundaryCondition.preset(bc, p_field.n)
        return cls(
            p=p_field,
            q=constant_field(q),
            g=constant_field(g),
            family=LinearFamily(constant_field(c1)),
            bc=bc,
            height=height,
            name=name,
        )


@dataclass(frozen=True, eq=False)
class ValidatedProblem:
    """validate() を通過した問題. 構築後は不変で、並行ワーカー間で共有してよい."""

    problem: MorseSturmProblem

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def p(self) -> CoefficientField:
        return self.problem.p

    @property
    def q(self) -> CoefficientField:
        return self.problem.q

    @property
    def g(self) -> CoefficientField:
        return self.problem.g

    @property
    def family(self) -> PerturbationFamily:
        return self.problem.family

    @property
    def bc(self) -> BoundaryCondition:
        return self.problem.bc

    @property
    def height(self) -> float:
        return self.problem.height

    @property
    def name(self) -> str:
        return self.problem.name


def _family_samples(family: PerturbationFamily, xs: np.ndarray) -> list[np.ndarray]:
    if isinstance(family, LinearFamily):
        return [family.c1.evaluate_many(xs)]
    if isinstance(family, GridFamily):
        return list(family.samples)
    return [family.values(t, xs) for t in np.linspace(0.0, 1.0, 9)]


def check(problem: MorseSturmProblem) -> list[HypothesisError]:
    """全ての仮定を検査し、違反をリストで返す (違反がなければ空リスト)."""
    xs = validation_grid()
    violations: list[HypothesisError] = []

    p_values = problem.p.evaluate_many(xs)
    p_defect = float(np.max(np.abs(p_values - np.swapaxes(p_values, 1, 2))))
    if p_defect >= SYMMETRY_TOL:
        violations.append(AsymmetricCoefficient(f"P is not symmetric (deviation {p_defect:.3e})"))
    det_p = np.abs(np.linalg.det(p_values))
    bad = np.flatnonzero(det_p <= DET_P_TOL)
    if bad.size:
        violations.append(DegenerateP(f"|det P(x)| <= {DET_P_TOL:g} at x = {xs[bad[0]]:.6g}"))

    g_defect = problem.g.symmetry_defect(xs)
    if g_defect >= SYMMETRY_TOL:
        violations.append(AsymmetricCoefficient(f"G is not symmetric (deviation {g_defect:.3e})"))

    c_defect = max(
        float(np.max(np.abs(block - np.swapaxes(block, -1, -2)), initial=0.0))
        for block in _family_samples(problem.family, xs)
    )
    if c_defect >= SYMMETRY_TOL:
        violations.append(AsymmetricCoefficient(f"C(t,x) is not symmetric (deviation {c_defect:.3e})"))

    c0 = float(np.max(np.abs(problem.family.values(0.0, xs))))
    if c0 > SYMMETRY_TOL:
        violations.append(NonzeroC0(f"C(0,x) must vanish (max |C(0,x)| = {c0:.3e})"))

    rank = np.linalg.matrix_rank(np.hstack([problem.bc.r0, problem.bc.r1]))
    if rank < 2 * problem.n:
        violations.append(RankDeficientBoundary(f"rank [R0 | R1] = {rank} < {2 * problem.n}"))

    return violations


def validate(problem: MorseSturmProblem) -> ValidatedProblem:
    """問題の仮定を検査する.

    Raises:
        InvalidProblem: 1つ以上の仮定が破れている場合 (violations に全件を保持)
    """
    violations = check(problem)
    if violations:
        raise InvalidProblem(violations)
    logger.debug("validated problem %r (N=%d, bc=%s)", problem.name, problem.n, problem.bc.kind)
    return ValidatedProblem(problem)


# ---------------------------------------------------------------------------
# ハミルトン形式
# ---------------------------------------------------------------------------
def evaluate_C(problem: ValidatedProblem, z: complex, x: float) -> np.ndarray:
    """C_z(x) = C(t, x) + is·Id."""
    z = complex(z)
    c = problem.family.value(z.real, x).astype(complex)
    return c + 1j * z.imag * np.eye(problem.n)


def hamiltonian_coefficients(problem: ValidatedProblem, z: complex, x: float) -> np.ndarray:
    """B_z(x) = [[P⁻¹, −P⁻¹Q], [−QᵀP⁻¹, QᵀP⁻¹Q − G − C_z]] (複素対称)."""
    z = complex(z)
    return assemble_hamiltonian(
        problem.p(x), problem.q(x), problem.g(x), problem.family.value(z.real, x), z.imag,
    )


def assemble_hamiltonian(
    p: np.ndarray, q: np.ndarray, g: np.ndarray, c: np.ndarray, s: float,
) -> np.ndarray:
    """係数行列の値から B を組み立てる. 転置ブロックをそのまま使うので厳密に対称."""
    n = p.shape[0]
    p_inv = np.linalg.inv(p)
    p_inv = 0.5 * (p_inv + p_inv.T)
    upper_right = -p_inv @ q
    lower_right = q.T @ p_inv @ q - g - c
    lower_right = 0.5 * (lower_right + lower_right.T)

    b = np.empty((2 * n, 2 * n), dtype=complex)
    b[:n, :n] = p_inv
    b[:n, n:] = upper_right
    b[n:, :n] = upper_right.T
    b[n:, n:] = lower_right
    b[n:, n:] -= 1j * s * np.eye(n)
    return b


# ---------------------------------------------------------------------------
# 問題の変換
# ---------------------------------------------------------------------------
def subpath(problem: ValidatedProblem, a: float, b: float) -> ValidatedProblem:
    """パラメータ区間 [a, b] (a > b なら逆向き) に制限した問題を返す.

    G' = G + C(a,·), C'(τ,·) = C(a + τ(b−a),·) − C(a,·)。線形族は線形族のまま保つ。
    """
    base = problem.problem
    family = base.family
    if isinstance(family, LinearFamily):
        g = LinearCombinationField(((1.0, base.g), (a, family.c1)))
        new_family: PerturbationFamily = LinearFamily(LinearCombinationField(((b - a, family.c1),)))
    else:
        g = LinearCombinationField(((1.0, base.g), (1.0, FamilySlice(family, a))))
        new_family = ReparametrizedFamily(family, a, b)
    return validate(
        MorseSturmProblem(
            p=base.p, q=base.q, g=g, family=new_family, bc=base.bc,
            height=base.height, name=f"{base.name}[{a:g},{b:g}]",
        )
    )


def with_spectral_shift(problem: ValidatedProblem, delta: float) -> ValidatedProblem:
    """𝒜_t を 𝒜_t − δ に置き換えた問題 (G' = G − δ·Id) を返す."""
    if delta == 0.0:
        return problem
    base = problem.problem
    g = LinearCombinationField(((1.0, base.g), (-delta, constant_field(np.eye(base.n)))))
    return validate(
        MorseSturmProblem(
            p=base.p, q=base.q, g=g, family=base.family, bc=base.bc,
            height=base.height, name=base.name,
        )
    )
