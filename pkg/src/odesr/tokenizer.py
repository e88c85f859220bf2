"""Token vocabulary and the float/expression/trajectory encodings.

Floats are rounded to four significant digits and split into sign,
mantissa and exponent tokens. The numeric part of the vocabulary is
exactly 10203 tokens: '+', '-', mantissas '0'..'9999' and exponents
'E-100'..'E100'. Symbolic tokens cover operators, variables x_0..x_5,
the component separator '|' and the BOS/EOS/PAD controls.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .expressions import (
    BINARY_OPS,
    Expression,
    MalformedExpressionError,
    OdeSystem,
    UNARY_OPS,
    parse_prefix,
    to_prefix,
)
from .integrator import Trajectory

PAD, BOS, EOS, SEP = "PAD", "BOS", "EOS", "|"

MAX_DIMENSION = 6
EXPONENT_MIN, EXPONENT_MAX = -100, 100


class MalformedSequenceError(ValueError):
    """Token sequence cannot be decoded into a valid system."""


class FloatTriplet(NamedTuple):
    sign: str       # '+' or '-'
    mantissa: int   # 0..9999; nonzero values are normalized to [1000, 9999]
    exponent: int   # -100..100

    def tokens(self) -> tuple[str, str, str]:
        return self.sign, str(self.mantissa), f"E{self.exponent}"


class Vocabulary:
    """Bijective token <-> index map with a fixed, documented layout."""

    def __init__(self):
        tokens = [PAD, BOS, EOS, SEP]
        tokens += list(BINARY_OPS)
        tokens += list(UNARY_OPS)
        tokens += [f"x_{i}" for i in range(MAX_DIMENSION)]
        tokens += ["+", "-"]
        tokens += [str(m) for m in range(10000)]
        tokens += [f"E{e}" for e in range(EXPONENT_MIN, EXPONENT_MAX + 1)]
        self.id_to_token: list[str] = tokens
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise RuntimeError("vocabulary tokens are not unique")
        self.pad_id = self.token_to_id[PAD]
        self.bos_id = self.token_to_id[BOS]
        self.eos_id = self.token_to_id[EOS]
        self.sep_id = self.token_to_id[SEP]

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def numeric_token_count(self) -> int:
        """Sign + mantissa + exponent tokens (the float-encoding alphabet)."""
        return 2 + 10000 + (EXPONENT_MAX - EXPONENT_MIN + 1)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.token_to_id[t] for t in tokens]
        except KeyError as exc:
            raise MalformedSequenceError(f"unknown token {exc.args[0]!r}") from None

    def tokens(self, ids: Sequence[int]) -> list[str]:
        try:
            return [self.id_to_token[i] for i in ids]
        except IndexError:
            raise MalformedSequenceError("token id out of range") from None

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n")

    @property
    def content_hash(self) -> str:
        text = "\n".join(self.id_to_token)
        return hashlib.sha256(text.encode()).hexdigest()


VOCAB = Vocabulary()


def encode_float(v: float) -> FloatTriplet:
    """Round to 4 significant digits (half away from zero) and split.

    Exponents outside [-100, 100] saturate at the boundary, so the decoded
    value clamps. Zero encodes as (+, 0, 0), the only denormal mantissa.
    """
    v = float(v)
    if not np.isfinite(v):
        raise ValueError(f"cannot tokenize non-finite value {v!r}")
    if v == 0.0:
        return FloatTriplet("+", 0, 0)
    sign = "+" if v > 0 else "-"
    d = Decimal(abs(v))
    adj = d.adjusted()  # exponent of the leading digit, exact
    # quantize is exact at 4 digits; scaleb on the full-precision value is not
    q = d.quantize(Decimal(1).scaleb(adj - 3), rounding=ROUND_HALF_UP)
    mantissa = int(q.scaleb(3 - adj))
    if mantissa == 10000:
        mantissa = 1000
        adj += 1
    exponent = min(max(adj - 3, EXPONENT_MIN), EXPONENT_MAX)
    return FloatTriplet(sign, mantissa, exponent)


def decode_float(t: FloatTriplet) -> float:
    v = float(f"{t.mantissa}e{t.exponent}")
    return -v if t.sign == "-" else v


def _triplet_from_tokens(sign: str, mantissa: str, exponent: str) -> FloatTriplet:
    if sign not in ("+", "-") or not mantissa.isdigit() or not exponent.startswith("E"):
        raise MalformedSequenceError(
            f"bad numeric triplet ({sign!r}, {mantissa!r}, {exponent!r})"
        )
    m = int(mantissa)
    try:
        e = int(exponent[1:])
    except ValueError:
        raise MalformedSequenceError(f"bad exponent token {exponent!r}") from None
    if not 0 <= m <= 9999 or not EXPONENT_MIN <= e <= EXPONENT_MAX:
        raise MalformedSequenceError("numeric token out of range")
    return FloatTriplet(sign, m, e)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

def _symbols_to_tokens(symbols) -> list[str]:
    out = []
    for sym in symbols:
        if isinstance(sym, (int, float)) and not isinstance(sym, bool):
            out.extend(encode_float(float(sym)).tokens())
        else:
            out.append(sym)
    return out


def encode_expression(sys: OdeSystem, vocab: Vocabulary = VOCAB) -> list[int]:
    """Prefix tokens of all components, '|'-separated, wrapped in BOS/EOS."""
    if sys.dimension > MAX_DIMENSION:
        raise ValueError(f"dimension {sys.dimension} exceeds {MAX_DIMENSION}")
    tokens = [BOS]
    for i, comp in enumerate(sys.components):
        if i > 0:
            tokens.append(SEP)
        tokens.extend(_symbols_to_tokens(to_prefix(comp)))
    tokens.append(EOS)
    return vocab.ids(tokens)


def decode_expression(token_ids: Sequence[int], vocab: Vocabulary = VOCAB) -> OdeSystem:
    """Inverse of encode_expression; raises MalformedSequenceError on any defect."""
    tokens = vocab.tokens(list(token_ids))
    if len(tokens) < 2 or tokens[0] != BOS or tokens[-1] != EOS:
        raise MalformedSequenceError("sequence must be BOS ... EOS")
    body = tokens[1:-1]
    if any(t in (BOS, EOS, PAD) for t in body):
        raise MalformedSequenceError("control token inside the body")
    segments: list[list[str]] = [[]]
    for t in body:
        if t == SEP:
            segments.append([])
        else:
            segments[-1].append(t)
    if len(segments) > MAX_DIMENSION:
        raise MalformedSequenceError(f"{len(segments)} components exceed {MAX_DIMENSION}")
    components = []
    for seg in segments:
        symbols: list = []
        i = 0
        while i < len(seg):
            tok = seg[i]
            if tok in ("+", "-"):
                if i + 2 >= len(seg):
                    raise MalformedSequenceError("truncated numeric triplet")
                symbols.append(decode_float(_triplet_from_tokens(tok, seg[i + 1], seg[i + 2])))
                i += 3
            elif tok.isdigit() or tok.startswith("E"):
                raise MalformedSequenceError(f"numeric token {tok!r} outside a triplet")
            else:
                symbols.append(tok)
                i += 1
        try:
            components.append(parse_prefix(symbols))
        except MalformedExpressionError as exc:
            raise MalformedSequenceError(str(exc)) from None
    try:
        return OdeSystem.from_components(components)
    except ValueError as exc:
        raise MalformedSequenceError(str(exc)) from None


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

def encode_trajectory(traj: Trajectory, vocab: Vocabulary = VOCAB) -> np.ndarray:
    """Token-id grid of shape (N, D+1, 3): each point's time then states."""
    if traj.dimension > MAX_DIMENSION:
        raise ValueError(f"dimension {traj.dimension} exceeds {MAX_DIMENSION}")
    n, d = traj.states.shape
    grid = np.empty((n, d + 1, 3), dtype=np.int64)
    values = np.concatenate([traj.times[:, None], traj.states], axis=1)
    for i in range(n):
        for j in range(d + 1):
            grid[i, j] = vocab.ids(encode_float(values[i, j]).tokens())
    return grid


def decode_trajectory(grid: np.ndarray, vocab: Vocabulary = VOCAB) -> Trajectory:
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[2] != 3:
        raise MalformedSequenceError("trajectory grid must have shape (N, D+1, 3)")
    n, d_plus_1, _ = grid.shape
    values = np.empty((n, d_plus_1))
    for i in range(n):
        for j in range(d_plus_1):
            sign, mant, exp = vocab.tokens(grid[i, j].tolist())
            values[i, j] = decode_float(_triplet_from_tokens(sign, mant, exp))
    return Trajectory(times=values[:, 0], states=values[:, 1:])
