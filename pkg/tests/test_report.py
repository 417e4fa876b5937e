"""reportモジュールの単体テスト."""

import csv
from types import SimpleNamespace

import numpy as np

from core_morse_sturm.problem import validate
from core_morse_sturm.problem_loader import resolve_problem
from core_morse_sturm.hilltrace import truncated_eigenproduct
from core_morse_sturm.report import Report, write_eigen_csv, write_product_csv, write_psi_csv
from core_morse_sturm.symplectic import Verdict


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestReportFormats:
    """テキスト・key=value 形式のテスト."""

    def test_text(self):
        """テキスト形式は "key = value" を追加順に並べること."""
        report = Report("degree").add("iota_PW", -1).add("hill", True).add("ratio", 0.5 - 0.25j)
        assert report.to_text() == "iota_PW = -1\nhill = PASS\nratio = 0.5-0.25i\n"

    def test_kv_splits_complex(self):
        """複素数は .re / .im の2キーに分かれること."""
        kv = Report("hill").add("ratio", 1.0 + 2.0j).to_kv()
        assert kv.splitlines() == ["command=hill", "ratio.re=1", "ratio.im=2"]

    def test_kv_full_precision(self):
        """浮動小数点数は17桁で出力されること."""
        assert "x=0.10000000000000001" in Report("trace").add("x", 0.1).to_kv()

    def test_kv_enum_and_bool(self):
        """列挙型は値、真偽値は true / false."""
        kv = Report("stability").update({"verdict": Verdict.UNSTABLE, "cross_check": np.bool_(False)}).to_kv()
        assert "verdict=linearly-unstable" in kv
        assert "cross_check=false" in kv

    def test_deterministic(self):
        """同じ内容からは同じ出力になること."""
        first = Report("sf").update({"iota_PW": -2, "t": 0.658}).to_kv()
        second = Report("sf").update({"iota_PW": -2, "t": 0.658}).to_kv()
        assert first == second

    def test_write(self, tmp_path):
        """report.txt と report.kv が書き出されること."""
        Report("degree").add("iota_PW", -1).write(tmp_path / "out")
        assert (tmp_path / "out" / "report.txt").read_text() == "iota_PW = -1\n"
        assert (tmp_path / "out" / "report.kv").read_text() == "command=degree\niota_PW=-1\n"


class TestCsvWriters:
    """CSV出力のテスト."""

    def test_product_csv(self, tmp_path):
        """Hill積の途中経過が j 順に書き出されること."""
        problem, _ = resolve_problem("sinh_hill")
        product = truncated_eigenproduct(validate(problem), 3, 64)
        path = tmp_path / "product.csv"
        write_product_csv(path, product)
        rows = read_csv(path)
        assert rows[0] == ["j", "re_lambda", "im_lambda", "re_partial", "im_partial"]
        assert [row[0] for row in rows[1:]] == ["1", "2", "3"]
        assert float(rows[-1][3]) == product.value.real

    def test_eigen_csv(self, tmp_path):
        """窓内の枝番号が列名に反映されること."""
        trajectories = SimpleNamespace(
            ts=np.array([0.0, 1.0]), eigenvalues=np.array([[1.0, 2.0], [0.5, 1.5]]), branch_offset=2,
        )
        path = tmp_path / "eigen.csv"
        write_eigen_csv(path, trajectories)
        rows = read_csv(path)
        assert rows[0] == ["t", "lambda_3", "lambda_4"]
        assert rows[2] == ["1", "0.5", "1.5"]

    def test_psi_csv(self, tmp_path):
        """ψ の成分が行優先で実部・虚部の順に並ぶこと."""
        path = tmp_path / "psi.csv"
        matrices = np.array([np.eye(2), np.array([[1.0, 2.0j], [0.0, 1.0]])])
        write_psi_csv(path, [0.0, 1.0], matrices)
        rows = read_csv(path)
        assert rows[0] == ["x", "re_00", "im_00", "re_01", "im_01", "re_10", "im_10", "re_11", "im_11"]
        assert rows[2] == ["1", "1", "0", "0", "2", "0", "0", "1", "0"]
