"""数値計算の許容誤差・格子サイズ設定."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from core_morse_sturm.propagator import IntegratorConfig

MIN_FD_SIZE = 64
MIN_TRACK_GRID = 256


@dataclass(frozen=True)
class SolverConfig:
    """各モジュールが参照する設定値.

    Attributes:
        integrator: 基本解の積分器設定
        height: 矩形 Ω の半高さ h の上書き (None なら問題ファイルの値)
        boundary_nodes: ∂Ω の各辺の初期標本数 (偶数: 辺の中点 z=0, z=1 を含む)
        safe_step: 隣接標本間の偏角変化の上限
        floor: 可容性・境界零点判定の相対閾値
        max_boundary_samples: 境界細分の標本数上限
        scan_grid: 実軸上の零点走査の格子数
        root_xtol: 零点の区間幅
        rank_tol: 核次元判定の相対特異値閾値
        quad_panels: 核関数の求積パネル数
        quad_order: パネルあたりのGauss節点数
        fd_size: 差分離散化の格子点数 M
        track_grid: 固有値追跡の t 格子数
        window: 固有値追跡の窓 Λ (None なら 10·max‖C‖)
        cutoff: Hill積の打ち切り K
        fd_step: log ρ の数値微分の刻み
        check_tol: Hill/Fredholm 照合の相対許容誤差
        contour_panels: 周回積分の1辺あたりのパネル数
        irregular_tol: 交差形式の正則性判定の相対閾値
        jobs: 並行ワーカー数
    """

    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    height: float | None = None
    boundary_nodes: int = 64
    safe_step: float = math.pi / 2
    floor: float = 1e-8
    max_boundary_samples: int = 4096
    scan_grid: int = 256
    root_xtol: float = 1e-10
    rank_tol: float = 1e-6
    quad_panels: int = 16
    quad_order: int = 8
    fd_size: int = 256
    track_grid: int = 256
    window: float | None = None
    cutoff: int = 2000
    fd_step: float = 1e-5
    check_tol: float = 1e-3
    contour_panels: int = 8
    irregular_tol: float = 1e-8
    jobs: int = 1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "integrator" or value is None:
                continue
            if not value > 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.boundary_nodes % 2:
            raise ValueError(f"boundary_nodes must be even, got {self.boundary_nodes}")
        if not self.safe_step < math.pi:
            raise ValueError(f"safe_step must be below pi, got {self.safe_step}")
        if self.fd_size < MIN_FD_SIZE:
            raise ValueError(f"fd_size must be at least {MIN_FD_SIZE}, got {self.fd_size}")
        if self.track_grid < MIN_TRACK_GRID:
            raise ValueError(f"track_grid must be at least {MIN_TRACK_GRID}, got {self.track_grid}")

    def with_overrides(self, **overrides) -> SolverConfig:
        return replace(self, **overrides)


DEFAULT_CONFIG = SolverConfig()
