"""Validation utilities for experiment grids and numeric inputs."""

import ast
import math
import operator
import re
from typing import Callable, Dict, List, Optional, Sequence, Union

Number = Union[int, float]


class ValidationError(Exception):
    """Raised when a configuration value or grid is invalid."""
    pass


# Grid phrases ------------------------------------------------------------

_BINARY_OPS: Dict[type, Callable[[Number, Number], Number]] = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}

_NUMBER = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"

_RANGE_RE = re.compile(
    rf"^(?P<start>{_NUMBER})\s+to\s+(?P<stop>{_NUMBER})\s+"
    rf"(?:with\s+(?:a\s+)?step\s+of|in\s+steps?\s+of|step)\s+(?P<step>{_NUMBER})$"
)

_SEQUENCE_RE = re.compile(
    r"^(?P<expr>[^,=]+?)\s*(?:,|\bwhere\b)\s*(?P<var>[a-z])\s*=\s*(?P<values>.+)$"
)


def _normalize_phrase(text: str) -> str:
    text = text.strip()
    for src, dst in (("−", "-"), ("–", "-"), ("×", "*"),
                     ("…", "..."), ("^", "**")):
        text = text.replace(src, dst)
    return re.sub(r"\s+", " ", text)


def _parse_number(token: str) -> Number:
    token = token.strip()
    if re.fullmatch(r"[-+]?\d+", token):
        return int(token)
    try:
        return float(token)
    except ValueError as e:
        raise ValidationError(f"Not a number: {token!r}") from e


def _eval_expression(expr: str, var: str, value: Number) -> Number:
    """Evaluate an arithmetic expression in one variable without eval()."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as e:
        raise ValidationError(f"Cannot parse grid expression: {expr!r}") from e

    def walk(node: ast.AST) -> Number:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.Name):
            if node.id != var:
                raise ValidationError(f"Unknown symbol {node.id!r} in {expr!r}")
            return value
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            operand = walk(node.operand)
            return -operand if isinstance(node.op, ast.USub) else operand
        if isinstance(node, ast.BinOp) and type(node.op) in _BINARY_OPS:
            return _BINARY_OPS[type(node.op)](walk(node.left), walk(node.right))
        raise ValidationError(f"Unsupported construct in grid expression: {expr!r}")

    return walk(tree)


def _expand_values(text: str) -> List[Number]:
    """Expand ``"9, ... 12"`` style enumerations."""
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    values: List[Number] = []
    pending_ellipsis = False
    for token in tokens:
        if token.startswith("..."):
            pending_ellipsis = True
            token = token[3:].strip()
            if not token:
                continue
        number = _parse_number(token)
        if pending_ellipsis:
            if not values or not isinstance(number, int) or not isinstance(values[-1], int):
                raise ValidationError(f"Ellipsis needs integer bounds: {text!r}")
            values.extend(range(values[-1] + 1, number + 1))
            pending_ellipsis = False
        else:
            values.append(number)
    if pending_ellipsis or not values:
        raise ValidationError(f"Incomplete enumeration: {text!r}")
    return values


def _expand_range(start: Number, stop: Number, step: Number) -> List[Number]:
    if step <= 0:
        raise ValidationError(f"Range step must be > 0, got {step}")
    if stop < start:
        raise ValidationError(f"Range end {stop} is below its start {start}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if all(isinstance(v, int) for v in (start, stop, step)):
        return [start + i * step for i in range(count)]
    return [round(start + i * step, 12) for i in range(count)]


def parse_grid(text: str) -> List[Number]:
    """Parse a grid phrase into its values.

    Accepted forms, also mixed in a comma list:

    - ``"512, 1024"`` and ``"2 and 3"``
    - ``"5 to 100 with step of 5"`` / ``"0 to 1 in steps of 0.05"``;
      the end point is kept only when the step reaches it
    - ``"2^k, k=9, ... 12"``, ``"10 × k, k=7, 10, 12, 15"``,
      ``"10^i where i=-7, ... 7"``

    Raises:
        ValidationError: if the phrase cannot be parsed or is empty.
    """
    phrase = _normalize_phrase(text)
    if not phrase:
        raise ValidationError("Empty grid")

    match = _SEQUENCE_RE.match(phrase)
    if match and re.search(rf"\b{match.group('var')}\b", match.group("expr")):
        var = match.group("var")
        values = _expand_values(match.group("values"))
        return [_eval_expression(match.group("expr"), var, v) for v in values]

    result: List[Number] = []
    for piece in re.split(r",|\band\b", phrase):
        piece = piece.strip()
        if not piece:
            continue
        range_match = _RANGE_RE.match(piece)
        if range_match:
            result.extend(_expand_range(_parse_number(range_match.group("start")),
                                        _parse_number(range_match.group("stop")),
                                        _parse_number(range_match.group("step"))))
        else:
            result.append(_parse_number(piece))
    if not result:
        raise ValidationError(f"Empty grid: {text!r}")
    return result


def parse_int_grid(text: str) -> List[int]:
    """Parse a grid whose values must all be integers."""
    values = parse_grid(text)
    ints = []
    for v in values:
        if float(v) != int(round(float(v))):
            raise ValidationError(f"Expected integers in grid {text!r}, got {v}")
        ints.append(int(round(float(v))))
    return ints


def _union(*grids: Sequence[Number]) -> List[Number]:
    return sorted(set(v for grid in grids for v in grid))


# reference experiment grids
FRAME_LENGTH_GRID = parse_int_grid("2^k, k=9, … 12")
NUM_FRAMES_GRID = parse_int_grid("10 × k, k=7, 10, 12, 15")
# the two reference corpora hold 14 and 51 subjects
N_SUBJECTS_GRID = _union(parse_int_grid("5 to 51 with step of 5"), [14, 51])
T_SECONDS_GRID = parse_grid("2, 5 to 100 with step of 5")
REG_C_GRID = parse_grid("10^i where i=−7, … 7")
GAMMA_GRID = parse_grid("10^i where i=−7, … 7")
L1_GRID = parse_grid("0 to 1 in steps of 0.05")
L2_GRID = parse_grid("0 to 1 in steps of 0.05")
HIDDEN_GRID = parse_int_grid("70 to 150 in steps of 20")
FILTERS_GRID = parse_int_grid("3 × 2^k where k=3, 4, 5")
KERNEL_GRID = parse_int_grid("2 and 3")
DROPOUT_GRID = parse_grid("0.1 to 0.5 in steps of 0.2")
DENSE_GRID = parse_int_grid("2^k where k=4, 5")
BATCH_GRID = parse_int_grid("2^k where k=6, 7, 8")
EPOCHS_GRID = parse_int_grid("10 to 200 in steps of 20")

GRIDS: Dict[str, List[Number]] = {
    "frame_length": FRAME_LENGTH_GRID,
    "num_frames": NUM_FRAMES_GRID,
    "n_subjects": N_SUBJECTS_GRID,
    "t_seconds": T_SECONDS_GRID,
    "reg_c": REG_C_GRID,
    "gamma": GAMMA_GRID,
    "l1": L1_GRID,
    "l2": L2_GRID,
    "hidden": HIDDEN_GRID,
    "num_filters": FILTERS_GRID,
    "kernel_size": KERNEL_GRID,
    "dropout": DROPOUT_GRID,
    "dense_size": DENSE_GRID,
    "batch_size": BATCH_GRID,
    "epochs": EPOCHS_GRID,
}


def is_on_grid(value: Number, grid: Sequence[Number]) -> bool:
    """Check membership with a relative tolerance for decimal grids."""
    return any(math.isclose(float(value), float(g), rel_tol=1e-9, abs_tol=1e-12)
               for g in grid)


def validate_on_grid(name: str, values: Sequence[Number],
                     grid: Optional[Sequence[Number]] = None,
                     allow_offgrid: bool = False) -> List[Number]:
    """Check every value lies on the named grid.

    Raises:
        ValidationError: on an empty list or an off-grid value when
            ``allow_offgrid`` is false.
    """
    if grid is None:
        if name not in GRIDS:
            raise ValidationError(f"No grid named {name!r}")
        grid = GRIDS[name]
    values = list(values)
    if not values:
        raise ValidationError(f"{name}: empty value list")
    if not allow_offgrid:
        off = [v for v in values if not is_on_grid(v, grid)]
        if off:
            raise ValidationError(
                f"{name}: values {off} are outside the grid {list(grid)} "
                f"(pass --allow-offgrid to override)"
            )
    return values
