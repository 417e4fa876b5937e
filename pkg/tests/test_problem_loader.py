"""problem_loaderモジュールの単体テスト."""

import numpy as np
import pytest

from core_morse_sturm.errors import ProblemFileError
from core_morse_sturm.problem import FourierField, GridFamily, LinearFamily, PolynomialField, SampledField
from core_morse_sturm.problem_loader import (
    _resolve_matrix,
    load_all_problems,
    load_problem,
    parse_problem,
    resolve_problem,
)


def minimal(**overrides) -> dict:
    raw = {
        "name": "minimal",
        "problem": {"n": 1},
        "coefficients": {"P": 1.0},
        "perturbation": {"mode": "linear", "c1": -15.0},
        "boundary": {"preset": "dirichlet"},
    }
    raw.update(overrides)
    return raw


class TestResolveMatrix:
    """行列記法の解決テスト."""

    def test_scalar_is_multiple_of_identity(self):
        """スカラーは value·Id に展開されること."""
        np.testing.assert_allclose(_resolve_matrix(2.0, 3, "G"), 2.0 * np.eye(3))

    def test_nested_list(self):
        """入れ子リストはそのまま行列になること."""
        np.testing.assert_allclose(_resolve_matrix([[1, 2], [2, 1]], 2, "G"), [[1, 2], [2, 1]])

    def test_shape_mismatch_raises_error(self):
        """形状の不一致でProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="must be 2x2"):
            _resolve_matrix([[1, 2, 3]], 2, "G")

    def test_non_numeric_raises_error(self):
        """数値でない要素でProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Non-numeric"):
            _resolve_matrix("abc", 1, "G")


class TestParseProblem:
    """YAML辞書からの問題組み立てテスト."""

    def test_minimal_problem(self):
        """最小構成 (Q, G 省略) が読み込めること."""
        problem = parse_problem(minimal())
        assert problem.n == 1
        assert problem.bc.kind == "dirichlet"
        assert isinstance(problem.family, LinearFamily)
        assert problem.q(0.5)[0, 0] == 0.0
        assert problem.height == 1.0

    def test_missing_p_raises_error(self):
        """P が無い場合にProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Missing key 'P'"):
            parse_problem(minimal(coefficients={"G": 1.0}))

    def test_missing_boundary_raises_error(self):
        """boundary が無い場合にProblemFileErrorが出ること."""
        raw = minimal()
        del raw["boundary"]
        with pytest.raises(ProblemFileError, match="Missing key 'boundary'"):
            parse_problem(raw)

    def test_field_types(self):
        """polynomial / fourier / sampled の係数場が解決されること."""
        raw = minimal(coefficients={
            "P": {"type": "polynomial", "coefficients": [1.0, 0.5]},
            "Q": {"type": "fourier", "constant": 0.0, "cos": [0.1]},
            "G": {"type": "sampled", "grid": [0.0, 0.5, 1.0], "values": [0.0, 1.0, 0.0], "order": 1},
        })
        problem = parse_problem(raw)
        assert isinstance(problem.p, PolynomialField)
        assert isinstance(problem.q, FourierField)
        assert isinstance(problem.g, SampledField)
        assert problem.p(1.0)[0, 0] == pytest.approx(1.5)

    def test_unknown_field_type(self):
        """未知の係数場の型でProblemFileErrorが出ること."""
        raw = minimal(coefficients={"P": {"type": "chebyshev", "coefficients": [1.0]}})
        with pytest.raises(ProblemFileError, match="Unknown field type"):
            parse_problem(raw)

    def test_grid_family(self):
        """mode: grid の摂動族が読み込めること."""
        raw = minimal(perturbation={
            "mode": "grid", "t": [0.0, 1.0], "x": [0.0, 1.0],
            "values": [[0.0, 0.0], [-10.0, -10.0]],
        })
        problem = parse_problem(raw)
        assert isinstance(problem.family, GridFamily)
        assert problem.family.value(0.5, 0.5)[0, 0] == pytest.approx(-5.0)

    def test_grid_family_row_count(self):
        """t 節点数と行数の不一致でProblemFileErrorが出ること."""
        raw = minimal(perturbation={"mode": "grid", "t": [0.0, 1.0], "x": [0.0, 1.0], "values": [[0.0, 0.0]]})
        with pytest.raises(ProblemFileError, match="rows"):
            parse_problem(raw)

    def test_unknown_mode(self):
        """未知の摂動モードでProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Unknown perturbation mode"):
            parse_problem(minimal(perturbation={"mode": "quadratic"}))

    def test_general_boundary(self):
        """r0, r1 による一般の境界条件が読み込めること."""
        raw = minimal(boundary={"r0": [[0, 1], [0, 0]], "r1": [[0, 0], [1, 1]]})
        problem = parse_problem(raw)
        assert problem.bc.kind == "general"
        assert not problem.bc.is_preset

    def test_general_boundary_shape(self):
        """r0, r1 の形状の誤りでProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="must be 2x2"):
            parse_problem(minimal(boundary={"r0": [[1.0]], "r1": [[1.0]]}))

    def test_unknown_preset(self):
        """未知のプリセット名でProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Unknown boundary preset"):
            parse_problem(minimal(boundary={"preset": "robin"}))

    def test_inconsistent_dimensions(self):
        """係数の次元の不一致がProblemFileErrorとして報告されること."""
        raw = minimal(problem={"n": 2}, perturbation={"mode": "linear", "c1": [[1.0]]})
        with pytest.raises(ProblemFileError):
            parse_problem(raw)


class TestLoadFiles:
    """ファイル読み込みのテスト."""

    def test_malformed_yaml(self, tmp_path):
        """不正なYAMLでProblemFileErrorが出ること."""
        path = tmp_path / "bad.yaml"
        path.write_text("problem: [unclosed\n")
        with pytest.raises(ProblemFileError, match="Malformed YAML"):
            load_problem(path)

    def test_missing_file(self, tmp_path):
        """存在しないファイルでProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Cannot read"):
            load_problem(tmp_path / "missing.yaml")

    def test_bundled_problems(self):
        """同梱問題が全て読み込めること."""
        problems = load_all_problems()
        for name in ("running_example", "double_crossing", "robin_mixed", "grid_ramp", "periodic_oscillator"):
            assert name in problems
        problem, path = problems["neumann_coupled"]
        assert problem.n == 2
        assert problem.height == 2.0
        assert path.suffix == ".yaml"

    def test_resolve_by_name_and_path(self, tmp_path):
        """同梱問題名とファイルパスの両方で解決できること."""
        problem, _ = resolve_problem("running_example")
        assert problem.family.value(1.0, 0.5)[0, 0] == pytest.approx(-15.0)

        path = tmp_path / "mine.yaml"
        path.write_text(
            "name: mine\nproblem: {n: 1}\ncoefficients: {P: 2.0}\n"
            "perturbation: {mode: linear, c1: 1.0}\nboundary: {preset: neumann}\n"
        )
        problem, resolved = resolve_problem(str(path))
        assert problem.name == "mine"
        assert resolved == path

    def test_resolve_unknown(self):
        """どちらにも該当しない引数でProblemFileErrorが出ること."""
        with pytest.raises(ProblemFileError, match="Unknown problem"):
            resolve_problem("no_such_problem")
