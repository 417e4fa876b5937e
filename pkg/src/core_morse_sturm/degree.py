"""行列式写像 ρ(z) = det(R₀ + R₁ψ_z(1)) と次数指数 ι_PW.

ι_PW は矩形 Ω = [0,1]×[−h,h] の境界を反時計回り
(0,−h) → (1,−h) → (1,h) → (0,h) → (0,−h) に一周したときの ρ の回転数。
隣接標本間の偏角変化が safe_step (既定 π/2) 以下になるまで二分細分する。
"""

from __future__ import annotations

import functools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from core_morse_sturm.config import DEFAULT_CONFIG, SolverConfig
from core_morse_sturm.errors import (
    BoundaryZero,
    ClusterUnresolved,
    NotAdmissible,
    RefinementBudgetExceeded,
    WindingUnstable,
)
from core_morse_sturm.problem import ValidatedProblem
from core_morse_sturm.propagator import map_concurrently, monodromy

logger = logging.getLogger(__name__)

WINDING_TOL = 1e-6
MIN_SEGMENT = 1e-13
MAX_DENSITY_DOUBLINGS = 4
THIN_STRIP = 1e-3
SHARPEN_WIDTH = 1e-6

Rectangle = tuple[float, float, float, float]


@dataclass(frozen=True)
class BoundarySample:
    edge: int
    u: float
    z: complex
    value: complex


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """∂Ω 上の標本列 (反時計回り) と累積偏角."""

    samples: tuple[BoundarySample, ...]
    arguments: np.ndarray
    max_steps: tuple[float, float, float, float]
    winding: int
    min_modulus: float
    max_modulus: float
    rectangle: Rectangle

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        """CSV出力用の行 (t, s, Re ρ, Im ρ, unwrapped_arg)."""
        return [
            (s.z.real, s.z.imag, s.value.real, s.value.imag, float(arg))
            for s, arg in zip(self.samples, self.arguments)
        ]


@dataclass(frozen=True)
class CrossingInstant:
    """実軸上の退化時刻 t₀ (ρ(t₀) = 0)."""

    t: float
    multiplicity: int
    width: float
    sign_change: bool
    residual: float

    @property
    def degenerate(self) -> bool:
        """符号変化を伴わない (偶数重複の疑いがある) 零点."""
        return not self.sign_change


def boundary_matrix(
    problem: ValidatedProblem, z: complex, config: SolverConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """R_z = R₀ + R₁ψ_z(1)."""
    bc = problem.bc
    return bc.r0 + bc.r1 @ monodromy(problem, z, config.integrator)


def rho(problem: ValidatedProblem, z: complex, config: SolverConfig = DEFAULT_CONFIG) -> complex:
    """ρ(z) = det R_z (部分ピボット付きLU分解による行列式)."""
    return complex(np.linalg.det(boundary_matrix(problem, z, config)))


def sigma_ratio(matrix: np.ndarray) -> float:
    """σ_min / σ_max. 尺度に依らない特異性の指標."""
    sigma = np.linalg.svd(matrix, compute_uv=False)
    return float(sigma[-1] / sigma[0]) if sigma[0] > 0 else 0.0


def local_scale(r0: np.ndarray, r1: np.ndarray, psi: np.ndarray) -> float:
    """R₀ + R₁ψ の局所尺度 ‖R₀‖ + ‖R₁‖‖ψ‖."""
    return float(np.linalg.norm(r0, 2) + np.linalg.norm(r1, 2) * np.linalg.norm(psi, 2))


def relative_sigma_min(matrix: np.ndarray, scale: float) -> float:
    """σ_min(R) / scale.

    周期条件の二重交差では R 全体が消えて σ_min/σ_max が O(1) に留まるため、
    特異性は局所尺度に対して測る。
    """
    sigma_min = float(np.linalg.svd(matrix, compute_uv=False)[-1])
    return sigma_min / scale if scale > 0 else 0.0


def check_admissible(problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG) -> None:
    """端点 z = 0, 1 で R_z が正則であることを確認する.

    Raises:
        NotAdmissible: σ_min(R_z) が局所尺度の floor 倍以下の場合
    """
    bc = problem.bc
    for t in (0.0, 1.0):
        psi = monodromy(problem, t, config.integrator)
        value = relative_sigma_min(bc.r0 + bc.r1 @ psi, local_scale(bc.r0, bc.r1, psi))
        if value <= config.floor:
            raise NotAdmissible(
                f"|rho({t:g})| below floor (sigma_min / local scale = {value:.3e})",
            )


def _rectangle_point(edge: int, u: float, rect: Rectangle) -> complex:
    t0, t1, s0, s1 = rect
    corners = (complex(t0, s0), complex(t1, s0), complex(t1, s1), complex(t0, s1))
    start = corners[edge]
    end = corners[(edge + 1) % 4]
    return start + u * (end - start)


def _grid_keys(nodes: int) -> list[tuple[int, float]]:
    return [(edge, k / nodes) for edge in range(4) for k in range(nodes)]


def _refine(
    values: dict[tuple[int, float], complex],
    evaluate: Callable[[list[tuple[int, float]]], None],
    rect: Rectangle,
    config: SolverConfig,
) -> tuple[list[tuple[int, float]], np.ndarray, np.ndarray]:
    """隣接標本間の偏角変化が safe_step 以下になるまで二分細分する."""
    rounds = 0
    while True:
        ordered = sorted(values)
        vals = np.array([values[key] for key in ordered])
        moduli = np.abs(vals)
        top = float(np.max(moduli))
        lowest = int(np.argmin(moduli))
        if moduli[lowest] <= config.floor * top:
            z = _rectangle_point(*ordered[lowest], rect)
            raise BoundaryZero(
                f"|rho| = {moduli[lowest]:.3e} at z = {z:.6g} is below floor "
                f"(non-real zero or boundary degeneracy)",
            )
        steps = np.angle(np.roll(vals, -1) * np.conj(vals))
        bad = np.flatnonzero(np.abs(steps) > config.safe_step)
        if bad.size == 0:
            return ordered, vals, steps

        new_keys = []
        for i in bad:
            edge, u = ordered[i]
            next_edge, next_u = ordered[(i + 1) % len(ordered)]
            upper = next_u if next_edge == edge else 1.0
            if upper - u < MIN_SEGMENT:
                z = _rectangle_point(edge, u, rect)
                raise BoundaryZero(f"argument jumps by {steps[i]:.3f} across a vanishing segment at z = {z:.6g}")
            new_keys.append((edge, 0.5 * (u + upper)))
        rounds += 1
        logger.debug("refinement round %d: %d new samples", rounds, len(new_keys))
        evaluate(new_keys)


def _winding(steps: np.ndarray) -> int:
    total = float(np.sum(steps))
    turns = total / (2.0 * math.pi)
    winding = round(turns)
    if abs(turns - winding) > WINDING_TOL:
        raise BoundaryZero(f"accumulated argument {total:.6g} is not a multiple of 2*pi")
    return winding


def trace_boundary(
    fn: Callable[[complex], complex],
    rect: Rectangle,
    config: SolverConfig = DEFAULT_CONFIG,
) -> BoundaryTrace:
    """矩形の境界を反時計回りに一周したときの fn の回転数を求める.

    偏角変化の規則だけでは初期標本の間で一周する偏角を見落とすので、
    初期標本密度を倍にして細分し直し、回転数が2回続けて一致するまで繰り返す。

    Args:
        fn: 境界上で零点を持たない複素関数
        rect: (t0, t1, s0, s1)
        config: 細分の設定 (boundary_nodes, safe_step, floor, max_boundary_samples, jobs)

    Raises:
        BoundaryZero: 境界上で |fn| が floor·max|fn| 以下になった場合
        RefinementBudgetExceeded: 標本数が上限を超えた場合
        WindingUnstable: 密度を倍にしても回転数が定まらない場合
    """
    values: dict[tuple[int, float], complex] = {}

    def evaluate(new_keys: list[tuple[int, float]]) -> None:
        if len(values) + len(new_keys) > config.max_boundary_samples:
            raise RefinementBudgetExceeded(
                f"boundary refinement needs more than {config.max_boundary_samples} samples",
            )
        results = map_concurrently(
            lambda key: complex(fn(_rectangle_point(key[0], key[1], rect))), new_keys, config.jobs,
        )
        values.update(zip(new_keys, results))

    nodes = config.boundary_nodes
    evaluate(_grid_keys(nodes))
    ordered, vals, steps = _refine(values, evaluate, rect, config)
    winding = _winding(steps)
    for _ in range(MAX_DENSITY_DOUBLINGS):
        nodes *= 2
        evaluate([key for key in _grid_keys(nodes) if key not in values])
        ordered, vals, steps = _refine(values, evaluate, rect, config)
        previous, winding = winding, _winding(steps)
        if winding == previous:
            break
        logger.debug("winding changed from %d to %d at %d nodes per edge", previous, winding, nodes)
    else:
        raise WindingUnstable(
            f"winding number still changes at {nodes} initial nodes per edge ({previous} -> {winding})",
        )

    moduli = np.abs(vals)
    arguments = np.angle(vals[0]) + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    max_steps = tuple(
        float(np.max(np.abs(steps[[i for i, key in enumerate(ordered) if key[0] == edge]]), initial=0.0))
        for edge in range(4)
    )
    samples = tuple(
        BoundarySample(edge, u, _rectangle_point(edge, u, rect), values[(edge, u)])
        for edge, u in ordered
    )
    return BoundaryTrace(
        samples=samples,
        arguments=arguments,
        max_steps=max_steps,
        winding=winding,
        min_modulus=float(np.min(moduli)),
        max_modulus=float(np.max(moduli)),
        rectangle=rect,
    )


def winding_number(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG,
) -> tuple[int, BoundaryTrace]:
    """ι_PW = deg(ρ, Ω, 0) と境界標本列を返す.

    Raises:
        NotAdmissible: z = 0 または z = 1 で R_z が特異な場合
        BoundaryZero, RefinementBudgetExceeded: trace_boundary 参照
    """
    check_admissible(problem, config)
    h = config.height if config.height is not None else problem.height
    trace = trace_boundary(lambda z: rho(problem, z, config), (0.0, 1.0, -h, h), config)
    logger.info(
        "iota_PW = %d over [0,1]x[-%g,%g] (%d samples)", trace.winding, h, h, len(trace.samples),
    )
    return trace.winding, trace


def offaxis_diagnostic(problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG) -> bool:
    """ρ の零点が実軸から離れていないかを調べる.

    全体の矩形と高さ h·10⁻³ の細い帯とで回転数が一致すれば True。
    一致しない場合は警告を出す (自己共役性の経験的診断であり、判定はしない)。
    """
    full, trace = winding_number(problem, config)
    h = trace.rectangle[3] * THIN_STRIP
    thin = trace_boundary(lambda z: rho(problem, z, config), (0.0, 1.0, -h, h), config).winding
    if thin != full:
        logger.warning(
            "zeros of rho leave the real axis: winding %d over the full rectangle, %d over |s| <= %g",
            full, thin, h,
        )
    return thin == full


def _degeneracy(sigma: np.ndarray, scale: float, rank_tol: float) -> tuple[int, float]:
    if scale <= 0:
        return len(sigma), 0.0
    return int(np.count_nonzero(sigma < rank_tol * scale)), float(sigma[-1] / scale)


def _sharpen(matrix_fn: Callable[[float], np.ndarray], t: float, width: float, xtol: float) -> float:
    """極小の近くで uᵀR(s)v (u, v は σ_min の特異ベクトル) の符号変化を brentq で詰める."""
    u, _, vt = np.linalg.svd(matrix_fn(t))
    left, right = u[:, -1], vt[-1]

    def paired(s: float) -> float:
        return float(np.real(left.conj() @ matrix_fn(s) @ right.conj()))

    lo, hi = t - width, t + width
    if paired(lo) * paired(hi) >= 0:
        return t
    return float(brentq(paired, lo, hi, xtol=xtol))


def locate_degeneracies(
    matrix_fn: Callable[[float], np.ndarray],
    a: float,
    b: float,
    config: SolverConfig = DEFAULT_CONFIG,
    scale_fn: Callable[[float], float] | None = None,
) -> list[CrossingInstant]:
    """開区間 (a, b) で実行列 R(t) が特異になる時刻を列挙する.

    σ_min(R(t)) を局所尺度 scale_fn(t) (省略時は σ_max(R(t))) で割った量を走査する。
    det R の符号変化は brentq で、符号変化のない零点は走査格子上の極小を
    minimize_scalar で精密化し、rank_tol 未満なら採用する。採用した極小は
    σ_min の特異ベクトル対 u, v について uᵀR(t)v の零点として詰め直す。
    重複度は σ < rank_tol·scale の個数。

    Raises:
        ClusterUnresolved: 分解能内に複数の零点がある場合
    """

    def measure(t: float) -> tuple[np.ndarray, np.ndarray, float]:
        matrix = matrix_fn(t)
        sigma = np.linalg.svd(matrix, compute_uv=False)
        scale = float(scale_fn(t)) if scale_fn is not None else float(sigma[0])
        return matrix, sigma, scale

    def relative(sigma: np.ndarray, scale: float) -> float:
        return float(sigma[-1] / scale) if scale > 0 else 0.0

    def det_at(t: float) -> float:
        return float(np.linalg.det(matrix_fn(t)).real)

    def relative_at(t: float) -> float:
        _, sigma, scale = measure(t)
        return relative(sigma, scale)

    ts = np.linspace(a, b, config.scan_grid + 1)
    scan = map_concurrently(measure, ts, config.jobs)
    dets = np.array([np.linalg.det(matrix).real for matrix, _, _ in scan])
    dips = np.array([relative(sigma, scale) for _, sigma, scale in scan])

    instants: list[CrossingInstant] = []
    changes = dets[:-1] * dets[1:] < 0
    for i in np.flatnonzero(changes):
        root = brentq(det_at, ts[i], ts[i + 1], xtol=config.root_xtol)
        _, sigma, scale = measure(root)
        multiplicity, residual = _degeneracy(sigma, scale, config.rank_tol)
        if multiplicity == 0:
            logger.warning("sign change of rho at t=%.12g with relative sigma_min %.2e", root, residual)
            multiplicity = 1
        logger.debug("sign change bracket [%g, %g] -> t=%.12g", ts[i], ts[i + 1], root)
        instants.append(CrossingInstant(float(root), multiplicity, config.root_xtol, True, residual))

    for i in range(1, len(ts) - 1):
        if changes[i - 1] or changes[i]:
            continue
        if not (dips[i] <= dips[i - 1] and dips[i] <= dips[i + 1]):
            continue
        if dips[i] == dips[i - 1] and dips[i] == dips[i + 1]:
            continue
        result = minimize_scalar(
            relative_at, bounds=(ts[i - 1], ts[i + 1]), method="bounded",
            options={"xatol": config.root_xtol},
        )
        if result.fun >= config.rank_tol:
            continue
        width = min(SHARPEN_WIDTH, float(result.x) - a, b - float(result.x))
        t0 = _sharpen(matrix_fn, float(result.x), width, config.root_xtol)
        _, sigma, scale = measure(t0)
        multiplicity, residual = _degeneracy(sigma, scale, config.rank_tol)
        multiplicity = max(multiplicity, 1)
        if multiplicity % 2:
            raise ClusterUnresolved(
                f"rho touches zero near t={t0:.10g} without changing sign; "
                f"zeros are clustered within resolution (try --delta-shift)",
            )
        logger.debug("modulus dip near t=%.12g with multiplicity %d", t0, multiplicity)
        instants.append(CrossingInstant(t0, multiplicity, config.root_xtol, False, residual))

    instants.sort(key=lambda inst: inst.t)
    merged: list[CrossingInstant] = []
    for inst in instants:
        if merged and inst.t - merged[-1].t < 10 * config.root_xtol:
            raise ClusterUnresolved(
                f"two degeneracy instants within resolution at t={merged[-1].t:.10g}, {inst.t:.10g}",
            )
        merged.append(inst)
    return merged


def conjugate_instants(
    problem: ValidatedProblem, config: SolverConfig = DEFAULT_CONFIG,
) -> list[CrossingInstant]:
    """(0, 1) 上の ρ(t) の零点 (ker 𝒜_t ≠ 0 となる時刻) を返す.

    特異性は局所尺度 ‖R₀‖ + ‖R₁‖‖ψ_t(1)‖ に対して測るので、
    周期条件で R_t 全体が消える二重の退化も検出される。
    """
    check_admissible(problem, config)
    bc = problem.bc

    @functools.lru_cache(maxsize=None)
    def terminal(t: float) -> np.ndarray:
        return monodromy(problem, t, config.integrator)

    instants = locate_degeneracies(
        lambda t: (bc.r0 + bc.r1 @ terminal(float(t))).real, 0.0, 1.0, config,
        scale_fn=lambda t: local_scale(bc.r0, bc.r1, terminal(float(t))),
    )
    logger.info("found %d degeneracy instants", len(instants))
    return instants
