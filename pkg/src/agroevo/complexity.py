"""Code complexity metrics for candidate scripts.

Halstead counts follow the token table in ``data/halstead_table.json``;
cyclomatic complexity is 1 plus the number of decision points in the AST;
logical lines are the number of statements (docstrings excluded).
"""

from __future__ import annotations

import ast
import io
import json
import math
import tokenize
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources


@dataclass(frozen=True)
class ComplexityMetrics:
    lloc: int = 0
    cyclomatic: int = 0
    halstead_n1: int = 0
    halstead_n2: int = 0
    halstead_N1: int = 0
    halstead_N2: int = 0
    difficulty: float = 0.0
    volume: float = 0.0
    maintainability_index: float = 0.0
    parsed: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=1)
def halstead_table() -> dict:
    return json.loads(resources.files("agroevo.data").joinpath("halstead_table.json").read_text())


def _halstead_tokens(body: str) -> tuple[list[str], list[str]]:
    table = halstead_table()
    ignored = set(table["ignored_ops"])
    op_kw = set(table["operator_keywords"])
    const_kw = set(table["operand_keywords"])
    operators, operands = [], []
    for tok in tokenize.generate_tokens(io.StringIO(body).readline):
        if tok.type == tokenize.OP:
            if tok.string not in ignored:
                operators.append(tok.string)
        elif tok.type == tokenize.NAME:
            if tok.string in op_kw:
                operators.append(tok.string)
            elif tok.string in const_kw:
                operands.append(tok.string)
            else:
                operands.append(tok.string)
        elif tok.type in (tokenize.NUMBER, tokenize.STRING):
            operands.append(tok.string)
    return operators, operands


class _DecisionCounter(ast.NodeVisitor):
    def __init__(self) -> None:
        self.count = 0

    def generic_visit(self, node: ast.AST) -> None:
        if isinstance(node, (ast.If, ast.IfExp, ast.For, ast.AsyncFor, ast.While, ast.ExceptHandler, ast.Assert)):
            self.count += 1
        elif isinstance(node, ast.comprehension):
            self.count += 1 + len(node.ifs)
        elif isinstance(node, ast.BoolOp):
            self.count += len(node.values) - 1
        elif hasattr(ast, "match_case") and isinstance(node, ast.match_case):
            self.count += 1
        super().generic_visit(node)


def _lloc(tree: ast.AST) -> int:
    n = 0
    for node in ast.walk(tree):
        if not isinstance(node, ast.stmt):
            continue
        if isinstance(node, ast.Expr) and isinstance(node.value, ast.Constant) and isinstance(node.value.value, str):
            continue
        n += 1
    return n


def compute_complexity(body: str) -> ComplexityMetrics:
    if not body.strip():
        return ComplexityMetrics()
    try:
        tree = ast.parse(body)
        operators, operands = _halstead_tokens(body)
    except (SyntaxError, tokenize.TokenError, IndentationError, ValueError):
        return ComplexityMetrics(parsed=False)

    counter = _DecisionCounter()
    counter.visit(tree)
    cyclomatic = 1 + counter.count
    lloc = _lloc(tree)

    n1, n2 = len(set(operators)), len(set(operands))
    N1, N2 = len(operators), len(operands)
    difficulty = (n1 / 2) * (N2 / n2) if n2 else 0.0
    vocab = n1 + n2
    volume = (N1 + N2) * math.log2(vocab) if vocab > 0 else 0.0

    mi = 171.0 - 0.23 * cyclomatic
    if volume > 0:
        mi -= 5.2 * math.log(volume)
    if lloc > 0:
        mi -= 16.2 * math.log(lloc)
    mi = min(100.0, max(0.0, mi * 100.0 / 171.0))
    return ComplexityMetrics(lloc, cyclomatic, n1, n2, N1, N2, difficulty, volume, mi)
