"""YAML問題ファイルの読み込み・係数場の組み立てモジュール."""

from __future__ import annotations

import functools
from pathlib import Path

import numpy as np
import yaml

from core_morse_sturm.errors import ProblemFileError
from core_morse_sturm.problem import (
    BoundaryCondition,
    CoefficientField,
    FourierField,
    GridFamily,
    LinearFamily,
    MorseSturmProblem,
    PerturbationFamily,
    PolynomialField,
    SampledField,
    constant_field,
)

_PROBLEMS_DIR = Path(__file__).parent / "problems"


def _require(raw: dict, key: str, where: str):
    if not isinstance(raw, dict) or key not in raw:
        raise ProblemFileError(f"Missing key '{key}' in {where}")
    return raw[key]


def _resolve_matrix(value, n: int, where: str) -> np.ndarray:
    """スカラーまたは N×N のリストを行列に解決する.

    Args:
        value: スカラー (value·Id とみなす) または入れ子リスト
        n: 問題の次元 N
        where: エラーメッセージ用の位置

    Returns:
        N×N 実行列

    Raises:
        ProblemFileError: 形状が合わない場合
    """
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ProblemFileError(f"Non-numeric matrix in {where}: {value!r}") from e
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.shape != (n, n):
        raise ProblemFileError(f"{where} must be {n}x{n}, got shape {arr.shape}")
    return arr


def _resolve_stack(values, n: int, where: str) -> np.ndarray:
    if not isinstance(values, list) or not values:
        raise ProblemFileError(f"{where} must be a non-empty list")
    return np.array([_resolve_matrix(v, n, f"{where}[{i}]") for i, v in enumerate(values)])


def _resolve_field(raw, n: int, where: str) -> CoefficientField:
    """係数場の記述 (定数の省略形、polynomial, fourier, sampled) を解決する."""
    if not isinstance(raw, dict):
        return constant_field(_resolve_matrix(raw, n, where))

    kind = _require(raw, "type", where)
    try:
        if kind == "polynomial":
            return PolynomialField(_resolve_stack(_require(raw, "coefficients", where), n, f"{where}.coefficients"))
        if kind == "fourier":
            return FourierField(
                constant=_resolve_matrix(raw.get("constant", 0.0), n, f"{where}.constant"),
                cos_terms=_resolve_stack(raw["cos"], n, f"{where}.cos") if raw.get("cos") else None,
                sin_terms=_resolve_stack(raw["sin"], n, f"{where}.sin") if raw.get("sin") else None,
                period=float(raw.get("period", 1.0)),
            )
        if kind == "sampled":
            return SampledField(
                grid=_require(raw, "grid", where),
                values=_resolve_stack(_require(raw, "values", where), n, f"{where}.values"),
                order=int(raw.get("order", 3)),
            )
    except ValueError as e:
        if isinstance(e, ProblemFileError):
            raise
        raise ProblemFileError(f"Invalid field {where}: {e}") from e
    raise ProblemFileError(f"Unknown field type in {where}: {kind}")


def _resolve_family(raw, n: int) -> PerturbationFamily:
    mode = _require(raw, "mode", "perturbation")
    if mode == "linear":
        return LinearFamily(_resolve_field(_require(raw, "c1", "perturbation"), n, "perturbation.c1"))
    if mode == "grid":
        ts = _require(raw, "t", "perturbation")
        xs = _require(raw, "x", "perturbation")
        rows = _require(raw, "values", "perturbation")
        if not isinstance(rows, list) or len(rows) != len(ts):
            raise ProblemFileError(f"perturbation.values must have {len(ts)} rows (one per t node)")
        samples = np.array([
            _resolve_stack(row, n, f"perturbation.values[{i}]") for i, row in enumerate(rows)
        ])
        try:
            return GridFamily(ts, xs, samples)
        except ValueError as e:
            raise ProblemFileError(f"Invalid perturbation grid: {e}") from e
    raise ProblemFileError(f"Unknown perturbation mode: {mode}")


def _resolve_boundary(raw, n: int) -> BoundaryCondition:
    if not isinstance(raw, dict):
        raise ProblemFileError("boundary must be a mapping")
    if "preset" in raw:
        try:
            return BoundaryCondition.preset(raw["preset"], n)
        except ValueError as e:
            raise ProblemFileError(str(e)) from e
    r0 = np.asarray(_require(raw, "r0", "boundary"), dtype=float)
    r1 = np.asarray(_require(raw, "r1", "boundary"), dtype=float)
    if r0.shape != (2 * n, 2 * n) or r1.shape != (2 * n, 2 * n):
        raise ProblemFileError(f"boundary r0/r1 must be {2 * n}x{2 * n}, got {r0.shape} and {r1.shape}")
    return BoundaryCondition(r0, r1, "general")


def parse_problem(raw: dict, where: str = "<problem>") -> MorseSturmProblem:
    """読み込み済みのYAML辞書から問題を組み立てる (仮定の検証はしない).

    Raises:
        ProblemFileError: 必須キーの欠落や形状の不一致
    """
    if not isinstance(raw, dict):
        raise ProblemFileError(f"{where}: top level must be a mapping")
    header = _require(raw, "problem", where)
    n = int(_require(header, "n", "problem"))
    if n < 1:
        raise ProblemFileError(f"problem.n must be positive, got {n}")

    coefficients = _require(raw, "coefficients", where)
    _require(coefficients, "P", "coefficients")
    # Q, G は省略時 0
    fields = {
        key: _resolve_field(coefficients.get(key, 0.0), n, f"coefficients.{key}")
        for key in ("P", "Q", "G")
    }

    try:
        return MorseSturmProblem(
            p=fields["P"],
            q=fields["Q"],
            g=fields["G"],
            family=_resolve_family(_require(raw, "perturbation", where), n),
            bc=_resolve_boundary(_require(raw, "boundary", where), n),
            height=float(header.get("height", 1.0)),
            name=str(raw.get("name", where)),
        )
    except ValueError as e:
        if isinstance(e, ProblemFileError):
            raise
        raise ProblemFileError(f"{where}: {e}") from e


def _load_single(path: Path) -> MorseSturmProblem:
    """YAML 1ファイルを読み込み、問題を返す.

    Args:
        path: YAMLファイルのパス

    Raises:
        ProblemFileError: 読み込み・構文・内容のエラー
    """
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ProblemFileError(f"Cannot read problem file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ProblemFileError(f"Malformed YAML in {path}: {e}") from e
    return parse_problem(raw, str(path))


def load_problem(path: str | Path) -> MorseSturmProblem:
    return _load_single(Path(path))


@functools.cache
def load_all_problems() -> dict[str, tuple[MorseSturmProblem, Path]]:
    """problems/ 内の全YAMLを読み込む.

    Returns:
        {problem_name: (problem, yaml_path), ...}
    """
    problems: dict[str, tuple[MorseSturmProblem, Path]] = {}
    for yaml_path in sorted(_PROBLEMS_DIR.glob("*.yaml")):
        problem = _load_single(yaml_path)
        problems[problem.name] = (problem, yaml_path)
    return problems


def resolve_problem(arg: str) -> tuple[MorseSturmProblem, Path]:
    """ファイルパスまたは同梱問題名から問題を解決する.

    Raises:
        ProblemFileError: どちらにも該当しない場合
    """
    path = Path(arg)
    if path.is_file():
        return _load_single(path), path
    bundled = load_all_problems()
    if arg in bundled:
        return bundled[arg]
    raise ProblemFileError(f"Unknown problem: {arg} (not a file and not one of {sorted(bundled)})")
