"""problemモジュールの単体テスト."""

import numpy as np
import pytest

from core_morse_sturm.errors import (
    AsymmetricCoefficient,
    DegenerateP,
    InvalidProblem,
    NonzeroC0,
    RankDeficientBoundary,
)
from core_morse_sturm.problem import (
    BoundaryCondition,
    FourierField,
    GridFamily,
    LinearFamily,
    MorseSturmProblem,
    PolynomialField,
    SampledField,
    check,
    constant_field,
    evaluate_C,
    hamiltonian_coefficients,
    subpath,
    symplectic_j,
    validate,
    with_spectral_shift,
)


def running_example() -> MorseSturmProblem:
    return MorseSturmProblem.constant_coefficients(1.0, 0.0, 0.0, -15.0, "dirichlet", name="running")


class TestCoefficientFields:
    """係数場の評価テスト."""

    def test_polynomial_field_horner_matches_vectorized(self):
        """Horner法による単点評価と一括評価が一致すること."""
        field = PolynomialField([[[1.0, 0.0], [0.0, 2.0]], [[0.5, 0.1], [0.1, 0.0]], [[0.0, 0.0], [0.0, 3.0]]])
        xs = np.array([0.0, 0.3, 1.0])
        many = field.evaluate_many(xs)
        for x, value in zip(xs, many):
            np.testing.assert_allclose(field(x), value)

    def test_polynomial_value(self):
        """F(x) = 1 + 2x + 3x² の値."""
        field = PolynomialField([[[1.0]], [[2.0]], [[3.0]]])
        assert field(0.5)[0, 0] == pytest.approx(2.75)

    def test_fourier_field(self):
        """F(x) = 1 + 2cos(2πx) + sin(2πx)."""
        field = FourierField(constant=[[1.0]], cos_terms=[[[2.0]]], sin_terms=[[[1.0]]])
        assert field(0.0)[0, 0] == pytest.approx(3.0)
        assert field(0.25)[0, 0] == pytest.approx(2.0)

    def test_fourier_pads_missing_terms(self):
        """cos/sin の項数が違っても評価できること."""
        field = FourierField(constant=[[0.0]], cos_terms=[[[1.0]], [[1.0]]], sin_terms=None)
        assert field(0.0)[0, 0] == pytest.approx(2.0)

    def test_sampled_field_linear(self):
        """1次補間の標本場は格子点の中点で平均値を返すこと."""
        field = SampledField(grid=[0.0, 0.5, 1.0], values=[[[0.0]], [[1.0]], [[4.0]]], order=1)
        assert field(0.25)[0, 0] == pytest.approx(0.5)
        assert field(0.75)[0, 0] == pytest.approx(2.5)

    def test_sampled_field_must_cover_interval(self):
        """[0,1] を覆わない格子でValueErrorが出ること."""
        with pytest.raises(ValueError, match="cover"):
            SampledField(grid=[0.0, 0.5], values=[[[0.0]], [[1.0]]], order=1)

    def test_symmetry_defect(self):
        """非対称な係数の偏差が検出されること."""
        field = constant_field([[0.0, 1.0], [0.0, 0.0]])
        assert field.symmetry_defect(np.linspace(0, 1, 5)) == pytest.approx(1.0)


class TestPerturbationFamilies:
    """摂動族のテスト."""

    def test_linear_family(self):
        """C(t,x) = t·C₁ と ∂_t C = C₁."""
        family = LinearFamily(constant_field(-15.0))
        assert family.value(0.4, 0.2)[0, 0] == pytest.approx(-6.0)
        assert family.t_derivative(0.4, 0.2)[0, 0] == pytest.approx(-15.0)

    def test_grid_family_bilinear(self):
        """格子族の双線形補間と t 微分."""
        samples = np.array([[[[0.0]], [[0.0]]], [[[-4.0]], [[-4.0]]], [[[-20.0]], [[-20.0]]]])
        family = GridFamily([0.0, 0.5, 1.0], [0.0, 1.0], samples)
        assert family.value(0.25, 0.3)[0, 0] == pytest.approx(-2.0)
        assert family.value(0.75, 0.3)[0, 0] == pytest.approx(-12.0)
        assert family.t_derivative(0.75, 0.3)[0, 0] == pytest.approx(-32.0)

    def test_grid_family_requires_unit_interval(self):
        """t 節点が 0 から 1 でない場合にValueErrorが出ること."""
        samples = np.zeros((2, 2, 1, 1))
        with pytest.raises(ValueError, match="start at 0"):
            GridFamily([0.0, 0.5], [0.0, 1.0], samples)


class TestBoundaryCondition:
    """境界条件プリセットのテスト."""

    @pytest.mark.parametrize("kind", ["dirichlet", "neumann", "periodic"])
    def test_presets_have_full_rank(self, kind):
        """プリセットの [R₀|R₁] がフルランクであること."""
        bc = BoundaryCondition.preset(kind, 2)
        assert bc.is_preset
        assert np.linalg.matrix_rank(np.hstack([bc.r0, bc.r1])) == 4

    def test_dirichlet_selects_u(self):
        """Dirichlet条件は u(0) と u(1) のみを拘束すること."""
        bc = BoundaryCondition.dirichlet(1)
        w0 = np.array([3.0, 0.0])  # v(0)=3, u(0)=0
        w1 = np.array([-2.0, 0.0])
        np.testing.assert_allclose(bc.r0 @ w0 + bc.r1 @ w1, 0.0)

    def test_unknown_preset(self):
        """未知のプリセット名でValueErrorが出ること."""
        with pytest.raises(ValueError, match="Unknown boundary preset"):
            BoundaryCondition.preset("robin", 1)

    def test_shape_mismatch(self):
        """R₀ と R₁ の形状不一致でValueErrorが出ること."""
        with pytest.raises(ValueError, match="does not match"):
            BoundaryCondition(np.eye(2), np.eye(4))


class TestValidation:
    """仮定の検査テスト."""

    def test_running_example_is_valid(self):
        """−15t Dirichlet は全ての仮定を満たすこと."""
        assert check(running_example()) == []
        assert validate(running_example()).n == 1

    def test_degenerate_p(self):
        """P(x) = x は x=0 で退化すること."""
        problem = MorseSturmProblem(
            p=PolynomialField([[[0.0]], [[1.0]]]),
            q=constant_field(0.0),
            g=constant_field(0.0),
            family=LinearFamily(constant_field(1.0)),
            bc=BoundaryCondition.dirichlet(1),
        )
        violations = check(problem)
        assert any(isinstance(v, DegenerateP) for v in violations)

    def test_all_violations_reported(self):
        """複数の違反が InvalidProblem にまとめて保持されること."""
        problem = MorseSturmProblem(
            p=constant_field([[1.0, 0.5], [0.0, 1.0]]),
            q=constant_field(np.zeros((2, 2))),
            g=constant_field(np.zeros((2, 2))),
            family=LinearFamily(constant_field(np.eye(2))),
            bc=BoundaryCondition(np.zeros((4, 4)), np.eye(4)[:, [0, 0, 1, 1]]),
        )
        with pytest.raises(InvalidProblem) as info:
            validate(problem)
        kinds = {type(v) for v in info.value.violations}
        assert AsymmetricCoefficient in kinds
        assert RankDeficientBoundary in kinds
        assert info.value.exit_code == 2

    def test_nonzero_c0(self):
        """C(0,x) ≠ 0 の格子族が違反として検出されること."""
        samples = np.ones((2, 2, 1, 1))
        problem = MorseSturmProblem(
            p=constant_field(1.0),
            q=constant_field(0.0),
            g=constant_field(0.0),
            family=GridFamily([0.0, 1.0], [0.0, 1.0], samples),
            bc=BoundaryCondition.dirichlet(1),
        )
        assert any(isinstance(v, NonzeroC0) for v in check(problem))

    def test_inconsistent_dimensions(self):
        """次元の不一致で構築時にValueErrorが出ること."""
        with pytest.raises(ValueError, match="Inconsistent problem dimensions"):
            MorseSturmProblem.constant_coefficients(1.0, 0.0, 0.0, np.eye(2), "dirichlet")


class TestHamiltonian:
    """ハミルトン係数 B_z のテスト."""

    def test_scalar_coefficients(self):
        """P=1, Q=0, G=0, C=−15t のとき B = [[1,0],[0,15t − is]]."""
        problem = validate(running_example())
        b = hamiltonian_coefficients(problem, 0.4 + 0.2j, 0.3)
        np.testing.assert_allclose(b, [[1.0, 0.0], [0.0, 6.0 - 0.2j]])

    def test_b_is_complex_symmetric(self):
        """B_z が複素対称 (Bᵀ = B) であること."""
        problem = validate(MorseSturmProblem.constant_coefficients(
            [[2.0, 0.3], [0.3, 1.0]], [[0.0, 0.2], [-0.2, 0.0]], np.eye(2), np.diag([-6.0, -20.0]), "neumann",
        ))
        b = hamiltonian_coefficients(problem, 0.5 + 0.1j, 0.7)
        np.testing.assert_allclose(b, b.T)

    def test_hamiltonian_flow_is_in_sp(self):
        """実の z で JB がハミルトン行列 ((JB)ᵀJ + J(JB) = 0) になること."""
        problem = validate(running_example())
        j = symplectic_j(1)
        a = j @ hamiltonian_coefficients(problem, 0.7, 0.5).real
        np.testing.assert_allclose(a.T @ j + j @ a, 0.0, atol=1e-14)

    def test_evaluate_c_adds_imaginary_shift(self):
        """C_z = C(t) + is·Id."""
        problem = validate(running_example())
        assert evaluate_C(problem, 0.2 + 0.5j, 0.1)[0, 0] == pytest.approx(-3.0 + 0.5j)


class TestTransforms:
    """部分パス・スペクトルシフトのテスト."""

    def test_subpath_reparametrizes_linear_family(self):
        """[a,b] の部分パスは G' = G + aC₁, C' = τ(b−a)C₁ となること."""
        problem = validate(running_example())
        sub = subpath(problem, 0.2, 0.6)
        assert isinstance(sub.family, LinearFamily)
        assert sub.g(0.5)[0, 0] == pytest.approx(-3.0)
        assert sub.family.value(1.0, 0.5)[0, 0] == pytest.approx(-6.0)

    def test_subpath_reversed(self):
        """a > b の部分パスは逆向きになること."""
        sub = subpath(validate(running_example()), 1.0, 0.0)
        assert sub.family.value(1.0, 0.5)[0, 0] == pytest.approx(15.0)

    def test_spectral_shift(self):
        """with_spectral_shift は G から δ を引くこと."""
        problem = validate(running_example())
        assert with_spectral_shift(problem, 0.0) is problem
        shifted = with_spectral_shift(problem, 0.25)
        assert shifted.g(0.3)[0, 0] == pytest.approx(-0.25)
