"""CLI (main モジュール) のテスト."""

import pytest

from core_morse_sturm.errors import ProblemFileError
from core_morse_sturm.main import RunConfig, _parse_complex, cli_main
from core_morse_sturm.symplectic import Orientation


def run_cli(capsys, *argv):
    cli_main(list(argv))
    return capsys.readouterr().out


def exit_code(*argv) -> int:
    with pytest.raises(SystemExit) as excinfo:
        cli_main(list(argv))
    return excinfo.value.code


class TestRunConfig:
    """実行設定のテスト."""

    def test_from_mapping(self):
        """ソルバ・積分器・実行の設定に振り分けられること."""
        run = RunConfig.from_mapping({
            "command": "degree", "problem": "running_example", "rtol": 1e-9, "fd_size": 128,
            "orientation": "reversing", "zs": ["0.5+0.5j"],
        })
        assert run.integrator == {"rtol": 1e-9}
        assert run.solver == {"fd_size": 128}
        assert run.orientation is Orientation.REVERSING
        assert run.zs == (0.5 + 0.5j,)
        config = run.solver_config()
        assert config.fd_size == 128
        assert config.integrator.rtol == 1e-9

    def test_unknown_key(self):
        """未知のキーで ProblemFileError が出ること."""
        with pytest.raises(ProblemFileError, match="bogus"):
            RunConfig.from_mapping({"command": "degree", "problem": "running_example", "bogus": 1})

    def test_non_positive_value(self):
        """正でない数値で ProblemFileError が出ること."""
        with pytest.raises(ProblemFileError, match="must be positive"):
            RunConfig.from_mapping({"command": "degree", "problem": "running_example", "cutoff": 0})

    @pytest.mark.parametrize("n", [0, -1, 1.5])
    def test_invalid_degrees_of_freedom(self, n):
        """n は正の整数."""
        with pytest.raises(ProblemFileError, match="n must be a positive integer"):
            RunConfig.from_mapping({"command": "stability", "problem": "periodic_oscillator", "n": n})

    def test_unknown_orientation(self):
        """未知の向きで ProblemFileError が出ること."""
        with pytest.raises(ProblemFileError, match="orientation"):
            RunConfig.from_mapping({"command": "stability", "problem": "x", "orientation": "sideways"})

    def test_invalid_solver_value(self):
        """設定の検証に通らない値は ProblemFileError になること."""
        run = RunConfig.from_mapping({"command": "degree", "problem": "x", "scheme": "Euler"})
        with pytest.raises(ProblemFileError, match="Invalid configuration"):
            run.solver_config()

    def test_digest(self):
        """設定または問題ファイルが変われば digest も変わること."""
        base = RunConfig(command="degree", problem="running_example")
        tuned = RunConfig(command="degree", problem="running_example", solver={"fd_size": 128})
        assert base.digest(b"a") == base.digest(b"a")
        assert base.digest(b"a") != tuned.digest(b"a")
        assert base.digest(b"a") != base.digest(b"b")

    @pytest.mark.parametrize(("text", "expected"), [("0.3+0.4i", 0.3 + 0.4j), ("1", 1 + 0j), ("-2j", -2j)])
    def test_parse_complex(self, text, expected):
        assert _parse_complex(text) == expected


class TestCommands:
    """サブコマンドの出力テスト."""

    def test_degree(self, capsys):
        """degree は ι_PW と境界の統計を出力すること."""
        out = run_cli(capsys, "degree", "running_example")
        assert "iota_PW = -1" in out
        assert "boundary.samples = " in out
        assert "config_hash = " in out

    def test_degree_output_directory(self, tmp_path, capsys):
        """--out に report.kv と boundary.csv が書き出され、内容は再現可能であること."""
        out_dir = tmp_path / "out"
        run_cli(capsys, "degree", "double_crossing", "--out", str(out_dir), "--dump-boundary")
        first = (out_dir / "report.kv").read_text()
        assert "command=degree" in first
        assert "iota_PW=-2" in first
        assert (out_dir / "boundary.csv").read_text().startswith("t,s,re_rho,im_rho,unwrapped_arg")
        run_cli(capsys, "degree", "double_crossing", "--out", str(out_dir))
        assert (out_dir / "report.kv").read_text() == first

    def test_sf(self, capsys):
        """sf は2つの方法と ι_PW を照合すること."""
        out = run_cli(capsys, "sf", "running_example", "--fd-size", "128")
        assert "iota_SP.crossing = -1" in out
        assert "iota_SP.tracking = -1" in out
        assert "main_theorem = VERIFIED" in out

    def test_sf_general_boundary(self, capsys):
        """一般の境界条件では追跡を省略して交差形式法だけで照合すること."""
        cli_main(["sf", "robin_mixed"])
        captured = capsys.readouterr()
        assert "iota_SP.tracking = unsupported" in captured.out
        assert "main_theorem = VERIFIED" in captured.out
        assert "UnsupportedBoundary" in captured.err

    def test_morse(self, capsys):
        """morse は m⁻(𝒜₀) − m⁻(𝒜₁) = ι_PW を確認すること."""
        out = run_cli(capsys, "morse", "running_example", "--fd-size", "128")
        assert "morse.t0 = 0" in out
        assert "morse.t1 = 1" in out
        assert "morse_corollary = PASS" in out

    def test_conjugate_points(self, capsys):
        """conjugate-points は退化時刻と符号数を出力すること."""
        out = run_cli(capsys, "conjugate-points", "running_example")
        assert "instants = 1" in out
        assert "instant.1.t = 0.6579736267" in out
        assert "instant.1.signature = -1" in out

    def test_stability(self, capsys):
        """向きを保つ周期解で ι_PW + n が偶数なら判定できないこと."""
        out = run_cli(capsys, "stability", "periodic_oscillator")
        assert "iota_PW = -1" in out
        assert "verdict = inconclusive" in out
        assert "monodromy.stability = stable" in out
        assert "cross_check = PASS" in out

    def test_validate(self, capsys):
        """validate は仮定違反の数と可容性を出力すること."""
        out = run_cli(capsys, "validate", "running_example")
        assert "violations = 0" in out
        assert "admissible = PASS" in out

    def test_validate_not_admissible(self, capsys):
        """端点で退化する問題は admissible = FAIL で理由を添えること."""
        out = run_cli(capsys, "validate", "degenerate_endpoint")
        assert "admissible = FAIL" in out
        assert "below floor" in out


class TestExitCodes:
    """終了コードのテスト."""

    def test_usage_error(self):
        """引数の誤りは 1."""
        assert exit_code("degree") == 1
        assert exit_code("unknown-command", "running_example") == 1

    def test_unknown_problem(self, capsys):
        """存在しない問題は ProblemFileError で 1."""
        assert exit_code("degree", "no_such_problem") == 1
        assert "ProblemFileError" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        """設定ファイルの未知のキーは 1."""
        config = tmp_path / "config.yaml"
        config.write_text("bogus: 1\n")
        assert exit_code("degree", "running_example", "--config", str(config)) == 1
        assert "Unknown configuration keys: bogus" in capsys.readouterr().err

    def test_hypothesis_error(self, capsys):
        """可容でない問題は NotAdmissible で 2."""
        assert exit_code("degree", "degenerate_endpoint") == 2
        assert "NotAdmissible" in capsys.readouterr().err

    def test_numerical_error(self, capsys):
        """∂Ω が実軸上の零点をかすめると BoundaryZero 等の数値エラーで 3."""
        assert exit_code("degree", "running_example", "--height", "1e-12") == 3

    @pytest.mark.parametrize(
        ("argv", "message"),
        [
            (("morse", "running_example", "--fd-size", "32"), "fd_size must be at least 64"),
            (("sf", "running_example", "--grid", "100"), "track_grid must be at least 256"),
            (("stability", "periodic_oscillator", "--n", "-1"), "n must be a positive integer"),
        ],
    )
    def test_out_of_range_override(self, capsys, argv, message):
        """下限を下回る数値の上書きはトレースバックではなく 1 で終了すること."""
        assert exit_code(*argv) == 1
        err = capsys.readouterr().err
        assert message in err
        assert "Traceback" not in err
