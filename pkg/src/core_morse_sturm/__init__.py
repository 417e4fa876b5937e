"""Morse-Sturm系の次数指数・スペクトルフロー・Maslov指数の数値計算."""

from core_morse_sturm.degree import winding_number
from core_morse_sturm.problem import BoundaryCondition, MorseSturmProblem, validate
from core_morse_sturm.problem_loader import load_problem, resolve_problem

__all__ = [
    "BoundaryCondition",
    "MorseSturmProblem",
    "load_problem",
    "resolve_problem",
    "validate",
    "winding_number",
]
