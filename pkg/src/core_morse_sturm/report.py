"""計算結果のレポート出力 (テキスト / key=value) とCSV書き出し.

key=value 形式は機械可読用で、浮動小数点数は17桁、複素数は .re / .im の2キーに分ける。
同じ入力と設定からは常にバイト単位で同一の出力になる。
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _format_float(value: float, digits: int) -> str:
    return f"{value:.{digits}g}"


def _kv_items(key: str, value) -> list[tuple[str, str]]:
    """1つの値を key=value 行に展開する."""
    if isinstance(value, enum.Enum):
        return [(key, str(value.value))]
    if isinstance(value, (bool, np.bool_)):
        return [(key, "true" if value else "false")]
    if isinstance(value, (int, np.integer)):
        return [(key, str(int(value)))]
    if isinstance(value, (float, np.floating)):
        return [(key, _format_float(float(value), 17))]
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return [
            (f"{key}.re", _format_float(value.real, 17)),
            (f"{key}.im", _format_float(value.imag, 17)),
        ]
    return [(key, str(value))]


def _text_value(value) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, (bool, np.bool_)):
        return "PASS" if value else "FAIL"
    if isinstance(value, (float, np.floating)):
        return _format_float(float(value), 10)
    if isinstance(value, (complex, np.complexfloating)):
        value = complex(value)
        return f"{_format_float(value.real, 10)}{value.imag:+.10g}i"
    return str(value)


@dataclass
class Report:
    """コマンド1回分の結果. 追加順に出力する."""

    command: str
    entries: list[tuple[str, object]] = field(default_factory=list)

    def add(self, key: str, value) -> Report:
        self.entries.append((key, value))
        return self

    def update(self, values: dict) -> Report:
        for key, value in values.items():
            self.add(key, value)
        return self

    def to_text(self) -> str:
        lines = [f"{key} = {_text_value(value)}" for key, value in self.entries]
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = [f"command={self.command}"]
        for key, value in self.entries:
            lines.extend(f"{k}={v}" for k, v in _kv_items(key, value))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> None:
        """out_dir/report.txt と out_dir/report.kv を書き出す."""
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(self.to_text())
        (out_dir / "report.kv").write_text(self.to_kv())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------
def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return _format_float(float(value), 17)


def write_boundary_csv(path: Path, trace) -> None:
    """∂Ω 上の標本列: t, s, Re ρ, Im ρ, 累積偏角."""
    _write_rows(path, ["t", "s", "re_rho", "im_rho", "unwrapped_arg"], trace.rows())


def write_eigen_csv(path: Path, trajectories) -> None:
    """追跡した固有値の軌跡: t, λ_1, ..., λ_k (窓内の枝)."""
    k = trajectories.eigenvalues.shape[1]
    offset = trajectories.branch_offset
    header = ["t"] + [f"lambda_{offset + i + 1}" for i in range(k)]
    rows = ([t, *values] for t, values in zip(trajectories.ts, trajectories.eigenvalues))
    _write_rows(path, header, rows)


def write_product_csv(path: Path, product) -> None:
    """Hill積の途中経過: j, λ_j, 部分積 (実部・虚部)."""
    rows = (
        (j, complex(lam).real, complex(lam).imag, complex(prod).real, complex(prod).imag)
        for j, lam, prod in product.rows()
    )
    _write_rows(path, ["j", "re_lambda", "im_lambda", "re_partial", "im_partial"], rows)


def write_psi_csv(path: Path, xs, matrices) -> None:
    """基本解 ψ_z(x) の成分: x, re_ij, im_ij (行優先)."""
    matrices = np.asarray(matrices)
    size = matrices.shape[1]
    header = ["x"]
    for i in range(size):
        for j in range(size):
            header += [f"re_{i}{j}", f"im_{i}{j}"]
    rows = (
        [x, *np.column_stack([m.real.ravel(), m.imag.ravel()]).ravel()]
        for x, m in zip(xs, matrices)
    )
    _write_rows(path, header, rows)
