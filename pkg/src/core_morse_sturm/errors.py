"""例外クラス定義.

全ての例外は MorseSturmError を基底とし、CLIの終了コードを exit_code に持つ。

- 仮定違反 (HypothesisError, ValueError系): 終了コード 2
- 数値計算の失敗 (NumericalError, RuntimeError系): 終了コード 3
- 問題ファイル・設定ファイルの書式エラー (ProblemFileError): 終了コード 1
"""

from __future__ import annotations


class MorseSturmError(Exception):
    """本パッケージが送出する例外の基底クラス."""

    exit_code = 3


class HypothesisError(MorseSturmError, ValueError):
    """問題が数学的な前提を満たさない場合の基底クラス."""

    exit_code = 2


class NumericalError(MorseSturmError, RuntimeError):
    """数値計算が信頼できる結果を出せなかった場合の基底クラス."""

    exit_code = 3


class ProblemFileError(MorseSturmError, ValueError):
    """問題ファイル・設定ファイルの書式エラー."""

    exit_code = 1


# ---------------------------------------------------------------------------
# 仮定違反
# ---------------------------------------------------------------------------
class DegenerateP(HypothesisError):
    pass


class AsymmetricCoefficient(HypothesisError):
    pass


class RankDeficientBoundary(HypothesisError):
    pass


class NonzeroC0(HypothesisError):
    pass


class InvalidProblem(HypothesisError):
    """validate() で検出された全ての違反をまとめて保持する."""

    def __init__(self, violations: list[HypothesisError]):
        self.violations = list(violations)
        names = ", ".join(f"{type(v).__name__} ({v})" for v in self.violations)
        super().__init__(f"{len(self.violations)} violated hypotheses: {names}")


class NotAdmissible(HypothesisError):
    pass


class SingularRz(HypothesisError):
    pass


class UnsupportedBoundary(HypothesisError):
    pass


class UnsupportedFamily(HypothesisError):
    pass


class IndefiniteP(HypothesisError):
    pass


class RankDeficientFrame(HypothesisError):
    pass


class NotIsotropic(HypothesisError):
    pass


class NotSymplectic(HypothesisError):
    pass


class NotLinearlyStable(HypothesisError):
    pass


# ---------------------------------------------------------------------------
# 数値計算の失敗
# ---------------------------------------------------------------------------
class StepSizeUnderflow(NumericalError):
    pass


class SymplecticityLost(NumericalError):
    pass


class BoundaryZero(NumericalError):
    pass


class RefinementBudgetExceeded(NumericalError):
    pass


class ClusterUnresolved(NumericalError):
    pass


class EmptyKernel(NumericalError):
    pass


class IrregularCrossing(NumericalError):
    pass


class WindowTooSmall(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class DiscretizationUnresolved(NumericalError):
    pass


class WindingUnstable(NumericalError):
    pass
