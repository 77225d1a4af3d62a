"""A small formula language for building calibration covariates.

Grammar (whitespace is insignificant)::

    formula := ["~"] ["-1" "+"] term ("+" term)*
    term    := IDENT | IDENT ("**" | "^") INT | IDENT ":" IDENT
    IDENT   := letter (letter | digit | "_")*

`-1` may appear once anywhere among the terms and is ignored: no intercept
column is ever produced, since the normalization constraint already plays
that role. Categorical columns expand to one indicator per level except the
lexicographically first.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pandas as pd

from .core import CalibrationError, CovariateMatrix

MAX_POWER = 6


class FormulaError(CalibrationError):
    pass


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DuplicateTerm(FormulaError):
    pass


class UnsupportedConstruct(FormulaSyntaxError):
    pass


class UnknownColumn(FormulaError):
    pass


class CategoricalInPowerOrInteraction(FormulaError):
    pass


class SingleLevelCategorical(FormulaError):
    pass


@dataclass(frozen=True)
class Column:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Power:
    name: str
    k: int

    def __str__(self):
        return f"{self.name}^{self.k}"


@dataclass(frozen=True)
class Interaction:
    name_a: str
    name_b: str

    def __str__(self):
        return f"{self.name_a}:{self.name_b}"


Term = Union[Column, Power, Interaction]


@dataclass(frozen=True)
class Formula:
    terms: tuple[Term, ...]
    drop_intercept_marker: bool = False

    def __str__(self):
        body = " + ".join(str(t) for t in self.terms)
        return f"~ -1 + {body}" if self.drop_intercept_marker else f"~ {body}"


_TOKEN = re.compile(r"\s*(?:(?P<ident>[A-Za-z][A-Za-z0-9_]*)|(?P<int>\d+)"
                    r"|(?P<op>\*\*|[~+\-:^])|(?P<bad>\S))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:  # trailing whitespace
            break
        kind = m.lastgroup
        value = m.group(kind)
        start = m.start(kind)
        if kind == "bad":
            if value in "()*/|%":
                raise UnsupportedConstruct(f"unsupported construct {value!r}", start)
            raise FormulaSyntaxError(f"unexpected character {value!r}", start)
        tokens.append((kind, value, start))
        pos = m.end()
    return tokens


def _canonical(term: Term) -> Term:
    # a:b and b:a describe the same column.
    if isinstance(term, Interaction) and term.name_b < term.name_a:
        return Interaction(term.name_b, term.name_a)
    return term


def parse_formula(text: str) -> Formula:
    """Parses a formula string such as `"~ -1 + x1 + x2 ** 2 + x3:x4"`."""
    tokens = _tokenize(text)
    i = 0

    def peek(offset=0):
        j = i + offset
        return tokens[j] if j < len(tokens) else ("end", "", len(text))

    if peek()[1] == "~":
        i += 1
    terms: list[Term] = []
    seen: set[Term] = set()
    marker = False
    expect_term = True
    while True:
        kind, value, pos = peek()
        if expect_term:
            if kind == "op" and value == "-":
                nkind, nvalue, npos = peek(1)
                if nkind == "int" and nvalue == "1":
                    if marker:
                        raise FormulaSyntaxError("'-1' given more than once", pos)
                    marker = True
                    i += 2
                    expect_term = False
                    continue
                raise UnsupportedConstruct("term removal other than '-1'", pos)
            if kind == "int" and value in ("0", "1"):
                raise UnsupportedConstruct(f"intercept term {value!r}", pos)
            if kind != "ident":
                raise FormulaSyntaxError(f"expected a column name, got {value or 'end of input'!r}", pos)
            i += 1
            term: Term = Column(value)
            okind, ovalue, opos = peek()
            if okind == "op" and ovalue in ("**", "^"):
                ikind, ivalue, ipos = peek(1)
                if ikind != "int":
                    raise FormulaSyntaxError("expected an integer exponent", ipos)
                k = int(ivalue)
                if k == 1:
                    term = Column(value)
                elif 2 <= k <= MAX_POWER:
                    term = Power(value, k)
                else:
                    raise UnsupportedConstruct(f"exponent must be between 1 and {MAX_POWER}", ipos)
                i += 2
            elif okind == "op" and ovalue == ":":
                bkind, bvalue, bpos = peek(1)
                if bkind != "ident":
                    raise FormulaSyntaxError("expected a column name after ':'", bpos)
                if bvalue == value:
                    raise UnsupportedConstruct("self-interaction; use a power instead", bpos)
                term = Interaction(value, bvalue)
                i += 2
                if peek()[1] == ":":
                    raise UnsupportedConstruct("interactions of more than two columns", peek()[2])
            key = _canonical(term)
            if key in seen:
                raise DuplicateTerm(f"term {term} appears more than once")
            seen.add(key)
            terms.append(term)
            expect_term = False
        else:
            if kind == "end":
                break
            if kind == "op" and value == "+":
                i += 1
                expect_term = True
                continue
            if kind == "op" and value == "-":
                # "a - 1" is the same marker as "-1 + a".
                if peek(1)[:2] == ("int", "1") and not marker:
                    marker = True
                    i += 2
                    continue
                raise UnsupportedConstruct("term removal other than a single '-1'", pos)
            if kind == "op" and value == "~":
                raise UnsupportedConstruct("left-hand side outcome variables", pos)
            raise FormulaSyntaxError(f"expected '+', got {value!r}", pos)
    if not terms:
        raise FormulaSyntaxError("formula has no terms", len(text))
    return Formula(tuple(terms), marker)


def _is_categorical(series: pd.Series) -> bool:
    return not pd.api.types.is_numeric_dtype(series) or pd.api.types.is_bool_dtype(series)


def _levels(series: pd.Series) -> list[str]:
    return sorted(series.astype(str).unique())


def _numeric(table: pd.DataFrame, name: str, term: Term) -> np.ndarray:
    if name not in table.columns:
        raise UnknownColumn(f"unknown column {name!r}")
    series = table[name]
    if _is_categorical(series):
        raise CategoricalInPowerOrInteraction(
            f"column {name!r} is categorical and cannot appear in {term}")
    return series.to_numpy(dtype=float)


def build_design(formula: Union[Formula, str], table: pd.DataFrame,
                 levels_from: Optional[pd.DataFrame] = None) -> CovariateMatrix:
    """Evaluates `formula` on `table`.

    Categorical levels are taken from `levels_from` when given, so that a
    target table yields the same indicator columns as the sample it will be
    compared with.
    """
    if isinstance(formula, str):
        formula = parse_formula(formula)
    reference = table if levels_from is None else levels_from
    columns: list[np.ndarray] = []
    names: list[str] = []
    for term in formula.terms:
        if isinstance(term, Column):
            if term.name not in table.columns:
                raise UnknownColumn(f"unknown column {term.name!r}")
            series = table[term.name]
            if _is_categorical(series):
                if term.name not in reference.columns:
                    raise UnknownColumn(f"unknown column {term.name!r}")
                levels = _levels(reference[term.name])
                if len(levels) < 2:
                    raise SingleLevelCategorical(
                        f"categorical column {term.name!r} has a single level {levels}")
                values = series.astype(str).to_numpy()
                for level in levels[1:]:
                    columns.append((values == level).astype(float))
                    names.append(f"{term.name}[{level}]")
            else:
                columns.append(series.to_numpy(dtype=float))
                names.append(term.name)
        elif isinstance(term, Power):
            columns.append(_numeric(table, term.name, term) ** term.k)
            names.append(str(term))
        else:
            a = _numeric(table, term.name_a, term)
            b = _numeric(table, term.name_b, term)
            columns.append(a * b)
            names.append(str(term))
    return CovariateMatrix(np.column_stack(columns), tuple(names))
