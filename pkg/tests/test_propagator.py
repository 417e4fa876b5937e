"""propagatorモジュールの単体テスト.

−u'' − 15t·u (P=1, Q=G=0) の基本解は ω² = 15t − is として
    ψ_z(x) = [[cos ωx, −ω sin ωx], [sin ωx / ω, cos ωx]]
で与えられる。
"""

import numpy as np
import pytest

from core_morse_sturm.errors import SymplecticityLost
from core_morse_sturm.problem import MorseSturmProblem, symplectic_j, validate
from core_morse_sturm.propagator import (
    IntegratorConfig,
    fundamental_solution,
    integrate_hamiltonian,
    map_concurrently,
    monodromy,
    symplectic_defect,
)


def running_example():
    return validate(MorseSturmProblem.constant_coefficients(1.0, 0.0, 0.0, -15.0, "dirichlet"))


def closed_form(z: complex, x: float) -> np.ndarray:
    omega = np.sqrt(complex(15.0 * z.real - 1j * z.imag))
    sin_over = np.sin(omega * x) / omega if omega != 0 else x
    return np.array([
        [np.cos(omega * x), -omega * np.sin(omega * x)],
        [sin_over, np.cos(omega * x)],
    ])


class TestIntegratorConfig:
    """積分器設定の検証テスト."""

    def test_defaults(self):
        """デフォルトは DOP853, rtol=1e-10."""
        config = IntegratorConfig()
        assert config.method == "adaptive"
        assert config.scheme == "DOP853"
        assert config.rtol == 1e-10

    def test_non_positive_tolerance(self):
        """正でない許容誤差でValueErrorが出ること."""
        with pytest.raises(ValueError, match="Tolerances must be positive"):
            IntegratorConfig(rtol=0.0)

    def test_unknown_scheme(self):
        """未知のスキームでValueErrorが出ること."""
        with pytest.raises(ValueError, match="Unknown adaptive scheme"):
            IntegratorConfig(scheme="Euler")

    def test_rk4_needs_enough_steps(self):
        """固定刻みの分割数が少なすぎる場合にValueErrorが出ること."""
        with pytest.raises(ValueError, match="at least"):
            IntegratorConfig(method="rk4", steps=8)

    def test_with_dense(self):
        """with_dense は dense=True の設定を返すこと."""
        config = IntegratorConfig()
        assert config.with_dense().dense
        assert config.with_dense().with_dense() == config.with_dense()


class TestFundamentalSolution:
    """基本解の精度テスト."""

    @pytest.mark.parametrize("z", [0.0, 0.4, 1.0, 0.4 + 0.3j, 0.9 - 0.5j])
    def test_monodromy_matches_closed_form(self, z):
        """ψ_z(1) が閉形式と一致すること."""
        np.testing.assert_allclose(
            monodromy(running_example(), z), closed_form(complex(z), 1.0), rtol=1e-8, atol=1e-9,
        )

    def test_rk4_matches_closed_form(self):
        """固定刻みRK4でも閉形式と一致すること."""
        config = IntegratorConfig(method="rk4", steps=512)
        np.testing.assert_allclose(
            monodromy(running_example(), 0.6, config), closed_form(0.6 + 0j, 1.0), atol=1e-8,
        )

    def test_dense_output(self):
        """dense=True なら途中の x で評価できること."""
        solution = fundamental_solution(running_example(), 0.5 + 0.2j, IntegratorConfig(dense=True))
        np.testing.assert_allclose(solution.at(0.37), closed_form(0.5 + 0.2j, 0.37), rtol=1e-6, atol=1e-8)

    def test_dense_output_rk4(self):
        """RK4 のHermite補間でも途中の x で評価できること."""
        config = IntegratorConfig(method="rk4", steps=256, dense=True)
        solution = fundamental_solution(running_example(), 0.3, config)
        np.testing.assert_allclose(solution.at(0.5), closed_form(0.3 + 0j, 0.5), atol=1e-7)

    def test_without_dense_output(self):
        """dense を要求していない場合はValueErrorが出ること."""
        solution = fundamental_solution(running_example(), 0.5)
        with pytest.raises(ValueError, match="dense output"):
            solution.at(0.5)

    def test_inverse(self):
        """ψ⁻¹ = −JψᵀJ が逆行列になること."""
        solution = fundamental_solution(running_example(), 0.7 + 0.4j, IntegratorConfig(dense=True))
        xs = np.array([0.1, 0.5, 0.9])
        products = solution.at_many(xs) @ solution.inverse_at_many(xs)
        for product in products:
            np.testing.assert_allclose(product, np.eye(2), atol=1e-7)

    def test_symplectic_drift_is_small(self):
        """記録されたシンプレクティック性の崩れが小さいこと."""
        solution = fundamental_solution(running_example(), 0.8 - 0.3j)
        assert solution.symplectic_drift < 1e-8
        assert solution.size == 2
        assert solution.checkpoints[0] == 0.0
        assert solution.checkpoints[-1] == pytest.approx(1.0)

    def test_composition_over_span(self):
        """[½, 1] の基本解と [0, ½] の基本解の積が ψ_z(1) に一致すること."""
        problem = running_example()
        z = 0.4 + 0.3j
        first = fundamental_solution(problem, z, span=(0.0, 0.5))
        second = fundamental_solution(problem, z, span=(0.5, 1.0))
        assert first.checkpoints[-1] == pytest.approx(0.5)
        np.testing.assert_allclose(first.terminal, closed_form(z, 0.5), rtol=1e-8, atol=1e-9)
        np.testing.assert_allclose(second.terminal @ first.terminal, monodromy(problem, z), rtol=1e-8, atol=1e-9)

    def test_rk4_step_halving(self):
        """RK4 の刻みを半分にすると誤差はおよそ 1/16 になること."""
        exact = closed_form(0.6 + 0j, 1.0)
        errors = [
            np.max(np.abs(monodromy(running_example(), 0.6, IntegratorConfig(method="rk4", steps=steps)) - exact))
            for steps in (64, 128)
        ]
        assert 12.0 < errors[0] / errors[1] < 20.0


class TestSymplecticity:
    """シンプレクティック性の監視テスト."""

    def test_defect_of_identity(self):
        """単位行列の崩れは 0."""
        assert symplectic_defect(np.eye(4)) == 0.0

    def test_defect_of_non_symplectic(self):
        """2倍した単位行列は ψᵀJψ = 4J なので崩れは 3/4 (正規化後)."""
        assert symplectic_defect(2.0 * np.eye(2)) == pytest.approx(0.75)

    def test_absolute_defect(self):
        """relative=False では ‖ψ‖ で割らない."""
        assert symplectic_defect(2.0 * np.eye(2), relative=False) == pytest.approx(3.0)

    @pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 0.8 - 0.3j])
    def test_absolute_drift_on_checkpoints(self, z):
        """すべての記録点で |ψᵀJψ − J| ≤ 1e-6 (正規化なし)."""
        solution = fundamental_solution(running_example(), z)
        j = symplectic_j(1)
        residual = np.swapaxes(solution.matrices, 1, 2) @ j @ solution.matrices - j
        assert np.max(np.abs(residual)) <= 1e-6
        assert solution.absolute_drift == pytest.approx(float(np.max(np.abs(residual))), abs=1e-15)

    def test_non_hamiltonian_flow_raises(self):
        """対称でない係数で積分すると SymplecticityLost が出ること."""
        def coefficients(x):
            return np.array([[0.0, 3.0], [0.0, 0.0]], dtype=complex)

        with pytest.raises(SymplecticityLost):
            integrate_hamiltonian(coefficients, 2, IntegratorConfig(symplectic_tol=1e-10))


class TestMapConcurrently:
    """並行実行のテスト."""

    def test_sequential(self):
        assert map_concurrently(lambda v: v * v, [1, 2, 3]) == [1, 4, 9]

    def test_thread_pool_preserves_order(self):
        """jobs > 1 でも入力順で結果を返すこと."""
        values = list(range(20))
        assert map_concurrently(lambda v: v + 1, values, jobs=4) == [v + 1 for v in values]

    def test_parallel_monodromies_match_sequential(self):
        """並行評価と逐次評価の結果が一致すること."""
        problem = running_example()
        zs = [0.1, 0.5 + 0.5j, 0.9]
        sequential = [monodromy(problem, z) for z in zs]
        parallel = map_concurrently(lambda z: monodromy(problem, z), zs, jobs=3)
        for a, b in zip(sequential, parallel):
            np.testing.assert_array_equal(a, b)
