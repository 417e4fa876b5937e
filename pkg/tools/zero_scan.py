#!/usr/bin/env python3
"""矩形 Ω 上の |ρ(z)| を格子で評価してCSVに書き出す診断ツール.

使い方:
    uv run python tools/zero_scan.py running_example --nt 101 --ns 21 --out scan.csv

出力列: t, s, re_rho, im_rho, abs_rho
ρ の零点 (共役点) や、実軸から離れた零点の位置を目視で確認するのに使う。
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from core_morse_sturm.config import SolverConfig
from core_morse_sturm.degree import rho
from core_morse_sturm.errors import MorseSturmError
from core_morse_sturm.problem import validate
from core_morse_sturm.problem_loader import resolve_problem
from core_morse_sturm.propagator import map_concurrently
from core_morse_sturm.report import _write_rows


def scan(problem, nt: int, ns: int, height: float, config: SolverConfig) -> list[tuple]:
    """t ∈ [0,1], s ∈ [−h,h] の格子上で ρ を評価する."""
    points = [complex(t, s) for s in np.linspace(-height, height, ns) for t in np.linspace(0.0, 1.0, nt)]
    values = map_concurrently(lambda z: rho(problem, z, config), points, config.jobs)
    return [(z.real, z.imag, v.real, v.imag, abs(v)) for z, v in zip(points, values)]


def main():
    parser = argparse.ArgumentParser(description="|rho| scan over the rectangle")
    parser.add_argument("problem", help="問題ファイルのパス、または同梱問題名")
    parser.add_argument("--nt", type=int, default=101, help="t 方向の格子数 (デフォルト: 101)")
    parser.add_argument("--ns", type=int, default=21, help="s 方向の格子数 (デフォルト: 21)")
    parser.add_argument("--height", type=float, default=None, help="半高さ h (デフォルト: 問題ファイルの値)")
    parser.add_argument("--jobs", type=int, default=1, help="並行ワーカー数")
    parser.add_argument("--out", type=Path, default=Path("zero_scan.csv"), help="出力CSV")
    args = parser.parse_args()

    try:
        raw, _ = resolve_problem(args.problem)
        problem = validate(raw)
        config = SolverConfig(jobs=args.jobs)
        height = args.height if args.height is not None else problem.height
        rows = scan(problem, args.nt, args.ns, height, config)
    except MorseSturmError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        sys.exit(e.exit_code)

    _write_rows(args.out, ["t", "s", "re_rho", "im_rho", "abs_rho"], rows)
    smallest = min(rows, key=lambda row: row[4])
    print(f"{len(rows)} 点を書き出しました: {args.out}")
    print(f"最小 |rho| = {smallest[4]:.3e} (t={smallest[0]:.4f}, s={smallest[1]:+.4f})")


if __name__ == "__main__":
    main()
