"""コマンドラインインターフェース.

サブコマンドごとに _run_*_command で計算を振り分け、結果を Report にまとめて
標準出力 (テキスト) と --out DIR (report.txt / report.kv / CSV) に書き出す。

終了コード: 0 成功 / 1 引数・ファイルの誤り / 2 仮定違反 / 3 数値計算の失敗
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from core_morse_sturm.config import SolverConfig
from core_morse_sturm.degree import check_admissible, conjugate_instants, offaxis_diagnostic, winding_number
from core_morse_sturm.errors import MorseSturmError, NotAdmissible, ProblemFileError, UnsupportedBoundary
from core_morse_sturm.hilltrace import (
    contour_trace_integral,
    fredholm_degree,
    fredholm_identity_check,
    fredholm_size,
    hill_report,
    trace_formula_check,
)
from core_morse_sturm.problem import check, validate, with_spectral_shift
from core_morse_sturm.problem_loader import resolve_problem
from core_morse_sturm.propagator import IntegratorConfig, fundamental_solution, monodromy
from core_morse_sturm.report import (
    Report,
    write_boundary_csv,
    write_eigen_csv,
    write_product_csv,
    write_psi_csv,
)
from core_morse_sturm.spectralflow import (
    crossing_form,
    kernel_basis,
    morse_index_difference,
    spectral_flow_crossing_method,
    track_eigenvalues,
)
from core_morse_sturm.symplectic import (
    Orientation,
    Verdict,
    analyze_monodromy,
    instability_verdict,
    monodromy_path,
    perturbed_endpoint_components,
    spectral_flow_formula_check,
)

logger = logging.getLogger(__name__)

COMMANDS = (
    "degree", "sf", "conjugate-points", "morse", "hill",
    "fredholm", "trace", "maslov", "stability", "validate",
)
DEFAULT_TRACE_POINTS = (0.3 + 0.4j,)
DEFAULT_FREDHOLM_POINTS = (0j, 1 + 0j, 0.3 + 0.4j, 0.5 - 0.5j, 0.8 + 0.2j)
PSI_POINTS = 129

_SOLVER_KEYS = frozenset(f.name for f in fields(SolverConfig)) - {"integrator"}
_INTEGRATOR_KEYS = frozenset({"rtol", "atol", "method", "scheme", "steps"})
_RUN_KEYS = frozenset({
    "command", "problem", "delta_shift", "out_dir", "dump_boundary", "dump_eigen",
    "dump_psi", "dump_product", "zs", "orientation", "n",
})


# ---------------------------------------------------------------------------
# 実行設定
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    """1回の実行の設定 (コマンド、問題、許容誤差の上書き、出力先)."""

    command: str
    problem: str
    solver: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    delta_shift: float = 0.0
    out_dir: Path | None = None
    dump_boundary: bool = False
    dump_eigen: bool = False
    dump_psi: bool = False
    dump_product: bool = False
    zs: tuple[complex, ...] = ()
    orientation: Orientation = Orientation.PRESERVING
    n: int | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> RunConfig:
        """辞書から設定を作る.

        Raises:
            ProblemFileError: 未知のキー、正でない数値の上書き、または n < 1 の場合
        """
        unknown = set(mapping) - _SOLVER_KEYS - _INTEGRATOR_KEYS - _RUN_KEYS
        if unknown:
            raise ProblemFileError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")
        solver = {k: v for k, v in mapping.items() if k in _SOLVER_KEYS and v is not None}
        integrator = {k: v for k, v in mapping.items() if k in _INTEGRATOR_KEYS and v is not None}
        for key, value in {**solver, **integrator}.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and not value > 0:
                raise ProblemFileError(f"{key} must be positive, got {value}")
        run = {k: v for k, v in mapping.items() if k in _RUN_KEYS and v is not None}
        if "n" in run and not (isinstance(run["n"], int) and run["n"] >= 1):
            raise ProblemFileError(f"n must be a positive integer, got {run['n']}")
        if "out_dir" in run:
            run["out_dir"] = Path(run["out_dir"])
        if "orientation" in run and not isinstance(run["orientation"], Orientation):
            try:
                run["orientation"] = Orientation(run["orientation"])
            except ValueError as e:
                raise ProblemFileError(f"Unknown orientation: {run['orientation']}") from e
        if "zs" in run:
            run["zs"] = tuple(complex(z) for z in run["zs"])
        if "command" not in run or "problem" not in run:
            raise ProblemFileError("command and problem are required")
        return cls(solver=solver, integrator=integrator, **run)

    def solver_config(self) -> SolverConfig:
        """上書きを適用した SolverConfig を返す.

        Raises:
            ProblemFileError: 値が設定の検証を通らない場合
        """
        try:
            integrator = IntegratorConfig(**self.integrator)
            return SolverConfig(integrator=integrator, **self.solver)
        except (TypeError, ValueError) as e:
            raise ProblemFileError(f"Invalid configuration: {e}") from e

    def digest(self, problem_bytes: bytes) -> str:
        """正規化したJSONと問題ファイルの内容から SHA-256 を計算する."""
        canonical = json.dumps(
            {
                "command": self.command,
                "solver": self.solver,
                "integrator": self.integrator,
                "delta_shift": self.delta_shift,
                "zs": [[z.real, z.imag] for z in self.zs],
                "orientation": self.orientation.value,
                "n": self.n,
            },
            sort_keys=True,
        )
        return hashlib.sha256(canonical.encode() + b"\0" + problem_bytes).hexdigest()


# ---------------------------------------------------------------------------
# 引数解析
# ---------------------------------------------------------------------------
class _ArgumentParser(argparse.ArgumentParser):
    """引数エラーを終了コード 1 で報告するパーサ."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"Error: {message}", file=sys.stderr)
        sys.exit(1)


def _parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not a complex number: {text}") from e


def _build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("problem", help="問題ファイルのパス、または同梱問題名 (例: running_example)")
    common.add_argument("--config", type=Path, default=None, help="設定上書きのYAMLファイル")
    common.add_argument("--tol-ode", type=float, default=None, help="積分器の相対許容誤差 (デフォルト: 1e-10)")
    common.add_argument("--tol-zero", type=float, default=None, help="|ρ| の零判定の相対閾値 (デフォルト: 1e-8)")
    common.add_argument("--grid", type=int, default=None, help="固有値追跡の t 格子数 (デフォルト: 256)")
    common.add_argument("--fd-size", type=int, default=None, help="差分離散化の格子点数 M (デフォルト: 256)")
    common.add_argument("--cutoff", type=int, default=None, help="Hill積の打ち切り K (デフォルト: 2000)")
    common.add_argument("--height", type=float, default=None, help="矩形 Ω の半高さ h")
    common.add_argument("--delta-shift", type=float, default=0.0, help="スペクトルシフト 𝒜_t − δ")
    common.add_argument("--jobs", type=int, default=None, help="並行ワーカー数 (デフォルト: 1)")
    common.add_argument("--out", type=Path, default=None, help="report.txt / report.kv / CSV の出力先")
    common.add_argument("--dump-boundary", action="store_true", help="∂Ω 上の ρ の標本をCSV出力")
    common.add_argument("--dump-eigen", action="store_true", help="固有値の軌跡をCSV出力")
    common.add_argument("--dump-psi", action="store_true", help="基本解 ψ_1(x) をCSV出力")
    common.add_argument("--dump-product", action="store_true", help="Hill積の途中経過をCSV出力")
    common.add_argument("-v", "--verbose", action="store_true", help="DEBUGログを出力")

    parser = _ArgumentParser(
        prog="core-morse-sturm",
        description="Morse-Sturm systems: degree index, spectral flow and Maslov index",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for name in COMMANDS:
        cmd = sub.add_parser(name, parents=[common])
        if name in ("trace", "fredholm"):
            cmd.add_argument("--z", type=_parse_complex, action="append", default=None, help="評価点 (複数指定可)")
        if name == "stability":
            cmd.add_argument(
                "--orientation", choices=[o.value for o in Orientation], default="preserving",
                help="周期解の向き (デフォルト: preserving)",
            )
            cmd.add_argument("--n", type=int, default=None, help="自由度 n (デフォルト: 問題の次元 N)")
    return parser


def _load_config_file(path: Path) -> dict:
    import yaml

    try:
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ProblemFileError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ProblemFileError(f"Malformed YAML in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ProblemFileError(f"{path}: config file must be a mapping")
    return raw


def _run_config(args: argparse.Namespace) -> RunConfig:
    mapping = _load_config_file(args.config) if args.config else {}
    flags = {
        "rtol": args.tol_ode,
        "atol": None if args.tol_ode is None else args.tol_ode * 1e-2,
        "floor": args.tol_zero,
        "track_grid": args.grid,
        "fd_size": args.fd_size,
        "cutoff": args.cutoff,
        "height": args.height,
        "jobs": args.jobs,
    }
    mapping.update({k: v for k, v in flags.items() if v is not None})
    mapping.update({
        "command": args.command,
        "problem": args.problem,
        "delta_shift": args.delta_shift or mapping.get("delta_shift", 0.0),
        "out_dir": args.out,
        "dump_boundary": args.dump_boundary,
        "dump_eigen": args.dump_eigen,
        "dump_psi": args.dump_psi,
        "dump_product": args.dump_product,
        "zs": getattr(args, "z", None),
        "orientation": getattr(args, "orientation", None),
        "n": getattr(args, "n", None),
    })
    return RunConfig.from_mapping(mapping)


# ---------------------------------------------------------------------------
# サブコマンド
# ---------------------------------------------------------------------------
def _echo_config(report: Report, config: SolverConfig, digest: str) -> None:
    integrator = config.integrator
    report.update({
        "config_hash": digest,
        "tol.rtol": integrator.rtol,
        "tol.atol": integrator.atol,
        "tol.symplectic": integrator.symplectic_tol,
        "tol.floor": config.floor,
        "tol.safe_step": config.safe_step,
        "tol.rank": config.rank_tol,
        "tol.root_xtol": config.root_xtol,
        "tol.irregular": config.irregular_tol,
        "tol.check": config.check_tol,
        "tol.fd_step": config.fd_step,
    })


def _run_degree_command(problem, config, run: RunConfig, report: Report) -> None:
    iota, trace = winding_number(problem, config)
    report.update({
        "iota_PW": iota,
        "boundary.samples": len(trace.samples),
        "boundary.min_modulus": trace.min_modulus,
        "boundary.max_modulus": trace.max_modulus,
        "boundary.max_step": max(trace.max_steps),
    })
    if run.dump_boundary and run.out_dir:
        write_boundary_csv(run.out_dir / "boundary.csv", trace)


def _run_sf_command(problem, config, run: RunConfig, report: Report) -> None:
    iota_crossing, forms = spectral_flow_crossing_method(problem, config)
    report.add("iota_SP.crossing", iota_crossing)
    report.add("crossings", len(forms))
    values = [iota_crossing]
    try:
        trajectories = track_eigenvalues(problem, config.fd_size, config.track_grid, config)
    except UnsupportedBoundary as e:
        print(f"UnsupportedBoundary: {e}", file=sys.stderr)
        report.add("iota_SP.tracking", "unsupported")
    else:
        report.add("iota_SP.tracking", trajectories.flow)
        values.append(trajectories.flow)
        if run.dump_eigen and run.out_dir:
            write_eigen_csv(run.out_dir / "eigen.csv", trajectories)
    iota_pw, _ = winding_number(problem, config)
    report.add("iota_PW", iota_pw)
    verified = all(v == iota_pw for v in values)
    report.add("main_theorem", "VERIFIED" if verified else "FAILED")


def _run_conjugate_command(problem, config, run: RunConfig, report: Report) -> None:
    instants = conjugate_instants(problem, config)
    report.add("instants", len(instants))
    for i, instant in enumerate(instants, start=1):
        form = crossing_form(problem, kernel_basis(problem, instant.t, config), config)
        report.update({
            f"instant.{i}.t": instant.t,
            f"instant.{i}.multiplicity": instant.multiplicity,
            f"instant.{i}.signature": form.signature,
            f"instant.{i}.regular": form.regular,
        })


def _run_morse_command(problem, config, run: RunConfig, report: Report) -> None:
    check_admissible(problem, config)
    m0, m1 = morse_index_difference(problem, config.fd_size)
    iota_pw, _ = winding_number(problem, config)
    report.update({
        "morse.t0": m0,
        "morse.t1": m1,
        "iota_PW": iota_pw,
        "morse_corollary": m0 - m1 == iota_pw,
    })


def _run_hill_command(problem, config, run: RunConfig, report: Report) -> None:
    hill = hill_report(problem, config)
    report.update({
        "rho0": hill.rho0,
        "rho1": hill.rho1,
        "ratio": hill.ratio,
        "product": hill.product.value,
        "cutoff": hill.product.cutoff,
        "fd_size": hill.product.size,
        "tail": hill.product.tail,
        "discrepancy": hill.discrepancy,
        "hill": hill.passed,
    })
    if run.dump_product and run.out_dir:
        write_product_csv(run.out_dir / "product.csv", hill.product)


def _run_fredholm_command(problem, config, run: RunConfig, report: Report) -> None:
    m = fredholm_size(config)
    zs = run.zs or DEFAULT_FREDHOLM_POINTS
    for i, z in enumerate(zs, start=1):
        result = fredholm_identity_check(problem, z, config.cutoff, m, config)
        report.update({
            f"z.{i}": result.z,
            f"z.{i}.lhs": result.lhs,
            f"z.{i}.rhs": result.rhs,
            f"z.{i}.discrepancy": result.discrepancy,
            f"z.{i}.fredholm": result.passed,
        })
    degree = fredholm_degree(problem, m, config)
    iota_pw, _ = winding_number(problem, config)
    report.update({"fredholm.size": m, "deg_f": degree, "iota_PW": iota_pw, "degree_corollary": degree == iota_pw})


def _run_trace_command(problem, config, run: RunConfig, report: Report) -> None:
    zs = run.zs or DEFAULT_TRACE_POINTS
    for i, z in enumerate(zs, start=1):
        result = trace_formula_check(problem, z, config)
        report.update({
            f"z.{i}": result.z,
            f"z.{i}.theta_t": result.theta_t,
            f"z.{i}.theta_s": result.theta_s,
            f"z.{i}.dlog_rho_t": result.difference_t,
            f"z.{i}.dlog_rho_s": result.difference_s,
            f"z.{i}.error": max(result.error_t, result.error_s),
            f"z.{i}.trace": result.passed,
        })
    contour = contour_trace_integral(problem, config)
    iota_pw, _ = winding_number(problem, config)
    report.update({
        "contour_integral": contour,
        "iota_PW": iota_pw,
        "contour": abs(contour - iota_pw) <= 1e-6,
    })


def _run_maslov_command(problem, config, run: RunConfig, report: Report) -> None:
    result = spectral_flow_formula_check(problem, config)
    for i, crossing in enumerate(result.maslov.crossings, start=1):
        report.update({
            f"crossing.{i}.t": crossing.t,
            f"crossing.{i}.position": crossing.position,
            f"crossing.{i}.contribution": crossing.contribution,
            f"crossing.{i}.transversal_defect": crossing.transversal_defect,
        })
    start, end = perturbed_endpoint_components(monodromy_path(problem, config))
    report.update({
        "iota_CLM": result.iota_clm,
        "iota_SP": result.iota_sp,
        "sf_method": result.method,
        "endpoint_crossing": result.maslov.endpoint_crossing,
        "spectral_flow_formula": result.passed,
        "component.start": start,
        "component.end": end,
    })


def _run_stability_command(problem, config, run: RunConfig, report: Report) -> None:
    n = run.n if run.n is not None else problem.n
    iota_pw, _ = winding_number(problem, config)
    verdict = instability_verdict(iota_pw, n, run.orientation)
    analysis = analyze_monodromy(monodromy(problem, 1.0, config.integrator).real)
    consistent = not (verdict is Verdict.UNSTABLE and analysis.linearly_stable)
    report.update({
        "iota_PW": iota_pw,
        "n": n,
        "orientation": run.orientation,
        "verdict": verdict,
        "monodromy.component": analysis.component,
        "monodromy.stability": analysis.stability,
        "monodromy.condition": analysis.condition,
        "cross_check": consistent,
    })
    for i, value in enumerate(analysis.eigenvalues, start=1):
        report.add(f"multiplier.{i}", complex(value))


def _run_validate_command(raw_problem, config, run: RunConfig, report: Report) -> None:
    violations = check(raw_problem)
    report.add("violations", len(violations))
    for i, violation in enumerate(violations, start=1):
        report.add(f"violation.{i}", f"{type(violation).__name__}: {violation}")
    if violations:
        return
    problem = validate(raw_problem)
    try:
        check_admissible(problem, config)
    except NotAdmissible as e:
        report.add("admissible", False)
        report.add("admissible.reason", str(e))
        return
    report.add("admissible", True)
    report.add("zeros_on_real_axis", offaxis_diagnostic(problem, config))


_HANDLERS = {
    "degree": _run_degree_command,
    "sf": _run_sf_command,
    "conjugate-points": _run_conjugate_command,
    "morse": _run_morse_command,
    "hill": _run_hill_command,
    "fredholm": _run_fredholm_command,
    "trace": _run_trace_command,
    "maslov": _run_maslov_command,
    "stability": _run_stability_command,
}


def run_command(run: RunConfig) -> Report:
    """設定に従って1つのコマンドを実行し、レポートを返す."""
    config = run.solver_config()
    raw_problem, path = resolve_problem(run.problem)
    digest = run.digest(path.read_bytes())

    report = Report(run.command)
    report.add("problem", raw_problem.name)
    if run.command == "validate":
        _run_validate_command(raw_problem, config, run, report)
    else:
        problem = with_spectral_shift(validate(raw_problem), run.delta_shift)
        if run.delta_shift:
            report.add("delta_shift", run.delta_shift)
        _HANDLERS[run.command](problem, config, run, report)
        if run.dump_psi and run.out_dir:
            solution = fundamental_solution(problem, 1.0, config.integrator.with_dense())
            xs = np.linspace(0.0, 1.0, PSI_POINTS)
            write_psi_csv(run.out_dir / "psi.csv", xs, solution.at_many(xs))
    _echo_config(report, config, digest)
    return report


def cli_main(argv: list[str] | None = None):
    """CLIのエントリーポイント.

    仮定違反・数値計算の失敗は "エラー名: メッセージ" を標準エラーに出力し、
    例外の exit_code で終了する。
    """
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run = _run_config(args)
        report = run_command(run)
    except MorseSturmError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    print(report.to_text(), end="")
    if run.out_dir:
        report.write(run.out_dir)


if __name__ == "__main__":
    cli_main()
