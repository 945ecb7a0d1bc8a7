"""SQL dialect subset: grammar, parser, and reference evaluator.

The engine renders every plan into a small SQL dialect (SELECT with
WHERE / GROUP BY / ORDER BY / LIMIT, searched CASE, and the functions
EXTRACT, TO_DATE, COUNT, SUM, AVG, MIN, MAX). This module defines that
subset precisely: a tokenizer and recursive-descent parser that reject
anything outside the grammar, plus a brute-force evaluator that runs
statements over in-memory string records. The evaluator is deliberately
independent of the plan executor so the two can check each other.

Dialect semantics (pinned, both execution routes follow them):
  - TO_DATE(value, 'pattern') yields NULL when the value does not parse.
  - EXTRACT(DOW ...) numbers days 0=Monday .. 6=Sunday.
  - NULL propagates through scalar expressions; aggregates skip NULLs;
    COUNT(*) counts rows. Groups with NULL keys are kept.
  - ORDER BY sorts NULL first, then numbers numerically, then strings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Optional

from .ingest import parse_temporal

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "BY", "LIMIT", "AS",
    "AND", "OR", "IN", "IS", "NOT", "NULL", "CASE", "WHEN", "THEN",
    "ELSE", "END", "DISTINCT", "ASC", "DESC",
}

FUNCTIONS = {"EXTRACT", "TO_DATE", "COUNT", "SUM", "AVG", "MIN", "MAX"}

EXTRACT_PARTS = {"YEAR", "MONTH", "DAY", "DOW"}

# Recognized so they can be rejected by name instead of as a generic parse
# error; the dialect deliberately has no joins, subqueries, or DDL/DML.
UNSUPPORTED_KEYWORDS = {
    "JOIN", "INNER", "OUTER", "LEFT", "RIGHT", "FULL", "CROSS", "ON",
    "UNION", "INTERSECT", "EXCEPT", "HAVING", "OVER", "PARTITION",
    "WITH", "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER",
    "LIKE", "BETWEEN", "EXISTS", "OFFSET", "WINDOW",
}


class SqlError(Exception):
    def __init__(self, message: str, position: int = 0):
        super().__init__(message)
        self.position = position  # byte offset into the statement text


class SqlSyntaxError(SqlError):
    pass


class SqlUnsupportedError(SqlError):
    def __init__(self, construct: str, position: int = 0):
        super().__init__(f"unsupported construct: {construct}", position)
        self.construct = construct


class SqlEvalError(SqlError):
    pass


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # keyword | ident | number | string | symbol | eof
    value: str
    pos: int  # byte offset


_SYMBOLS = ("<>", "<=", ">=", "!=", "=", "<", ">", "(", ")", ",", ";", "*", ".")

_RESULT_COMMENT = re.compile(r"--\s*result:\s*([A-Za-z_][A-Za-z0-9_]*)")


def tokenize(text: str) -> tuple[list[Token], dict[int, str]]:
    """Token stream plus {byte offset: result name} from marker comments."""
    raw = text
    tokens: list[Token] = []
    markers: dict[int, str] = {}
    i = 0
    n = len(raw)

    def bytepos(idx: int) -> int:
        return len(raw[:idx].encode("utf-8"))

    while i < n:
        ch = raw[i]
        if ch in " \t\r\n":
            i += 1
            continue
        if raw.startswith("--", i):
            end = raw.find("\n", i)
            if end < 0:
                end = n
            comment = raw[i:end]
            match = _RESULT_COMMENT.match(comment)
            if match:
                markers[bytepos(i)] = match.group(1)
            i = end
            continue
        if ch == "`":
            end = raw.find("`", i + 1)
            if end < 0:
                raise SqlSyntaxError("unterminated backtick identifier", bytepos(i))
            tokens.append(Token("ident", raw[i + 1 : end], bytepos(i)))
            i = end + 1
            continue
        if ch == "'":
            j = i + 1
            parts = []
            while True:
                if j >= n:
                    raise SqlSyntaxError("unterminated string literal", bytepos(i))
                if raw[j] == "'":
                    if j + 1 < n and raw[j + 1] == "'":
                        parts.append("'")
                        j += 2
                        continue
                    break
                parts.append(raw[j])
                j += 1
            tokens.append(Token("string", "".join(parts), bytepos(i)))
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and raw[i + 1].isdigit()):
            match = re.match(r"\d+\.\d+|\d+|\.\d+", raw[i:])
            tokens.append(Token("number", match.group(0), bytepos(i)))
            i += len(match.group(0))
            continue
        if ch.isalpha() or ch == "_":
            match = re.match(r"[A-Za-z_][A-Za-z0-9_]*", raw[i:])
            word = match.group(0)
            upper = word.upper()
            if upper in UNSUPPORTED_KEYWORDS:
                raise SqlUnsupportedError(upper, bytepos(i))
            if upper in KEYWORDS or upper in FUNCTIONS or upper in EXTRACT_PARTS:
                tokens.append(Token("keyword", upper, bytepos(i)))
            else:
                tokens.append(Token("ident", word, bytepos(i)))
            i += len(word)
            continue
        matched = False
        for sym in _SYMBOLS:
            if raw.startswith(sym, i):
                tokens.append(Token("symbol", sym, bytepos(i)))
                i += len(sym)
                matched = True
                break
        if not matched:
            raise SqlSyntaxError(f"unexpected character {ch!r}", bytepos(i))
    tokens.append(Token("eof", "", bytepos(n)))
    return tokens, markers


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Column:
    name: str


@dataclass(frozen=True)
class Literal:
    value: Any  # int | float | str | None


@dataclass(frozen=True)
class FuncCall:
    name: str  # COUNT | SUM | AVG | MIN | MAX
    arg: Any  # expression, or None for COUNT(*)
    distinct: bool = False


@dataclass(frozen=True)
class ExtractExpr:
    part: str  # YEAR | MONTH | DAY | DOW
    source: Any


@dataclass(frozen=True)
class ToDateExpr:
    source: Any
    pattern: str


@dataclass(frozen=True)
class CaseExpr:
    branches: tuple  # of (condition, expression)
    default: Any  # expression or None


@dataclass(frozen=True)
class Comparison:
    op: str  # = <> < <= > >=
    left: Any
    right: Any


@dataclass(frozen=True)
class InList:
    expr: Any
    items: tuple  # of Literal


@dataclass(frozen=True)
class IsNull:
    expr: Any
    negated: bool


@dataclass(frozen=True)
class BoolOp:
    op: str  # AND | OR
    operands: tuple


@dataclass(frozen=True)
class SelectItem:
    expr: Any
    alias: Optional[str]


@dataclass(frozen=True)
class OrderItem:
    expr: Any
    descending: bool


@dataclass(frozen=True)
class SelectStatement:
    items: tuple  # of SelectItem
    table: str
    where: Any = None
    group_by: tuple = ()
    order_by: tuple = ()
    limit: Optional[int] = None
    start_pos: int = 0


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.index = 0

    def peek(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect_keyword(self, word: str) -> Token:
        token = self.peek()
        if token.kind == "keyword" and token.value == word:
            return self.advance()
        raise SqlSyntaxError(f"expected {word}, found {token.value or 'end of input'}", token.pos)

    def accept_keyword(self, word: str) -> bool:
        token = self.peek()
        if token.kind == "keyword" and token.value == word:
            self.advance()
            return True
        return False

    def accept_symbol(self, sym: str) -> bool:
        token = self.peek()
        if token.kind == "symbol" and token.value == sym:
            self.advance()
            return True
        return False

    def expect_symbol(self, sym: str) -> Token:
        token = self.peek()
        if token.kind == "symbol" and token.value == sym:
            return self.advance()
        raise SqlSyntaxError(f"expected {sym!r}, found {token.value or 'end of input'}", token.pos)

    # -- statements ---------------------------------------------------

    def parse_script(self) -> list[SelectStatement]:
        statements = []
        while self.peek().kind != "eof":
            statements.append(self.parse_select())
            while self.accept_symbol(";"):
                pass
        return statements

    def parse_select(self) -> SelectStatement:
        start = self.peek().pos
        self.expect_keyword("SELECT")
        items = [self.parse_select_item()]
        while self.accept_symbol(","):
            items.append(self.parse_select_item())
        self.expect_keyword("FROM")
        table_token = self.peek()
        if table_token.kind != "ident":
            if table_token.kind == "keyword" and table_token.value == "SELECT":
                raise SqlUnsupportedError("SUBQUERY", table_token.pos)
            raise SqlSyntaxError("expected table name after FROM", table_token.pos)
        table = self.advance().value
        where = None
        if self.accept_keyword("WHERE"):
            where = self.parse_condition()
        group_by: tuple = ()
        if self.accept_keyword("GROUP"):
            self.expect_keyword("BY")
            exprs = [self.parse_expression()]
            while self.accept_symbol(","):
                exprs.append(self.parse_expression())
            group_by = tuple(exprs)
        order_by: tuple = ()
        if self.accept_keyword("ORDER"):
            self.expect_keyword("BY")
            items_o = [self.parse_order_item()]
            while self.accept_symbol(","):
                items_o.append(self.parse_order_item())
            order_by = tuple(items_o)
        limit = None
        if self.accept_keyword("LIMIT"):
            token = self.peek()
            if token.kind != "number":
                raise SqlSyntaxError("LIMIT requires a number", token.pos)
            limit = int(self.advance().value)
        return SelectStatement(
            items=tuple(items),
            table=table,
            where=where,
            group_by=group_by,
            order_by=order_by,
            limit=limit,
            start_pos=start,
        )

    def parse_select_item(self) -> SelectItem:
        expr = self.parse_expression()
        alias = None
        if self.accept_keyword("AS"):
            token = self.peek()
            if token.kind != "ident":
                raise SqlSyntaxError("expected alias after AS", token.pos)
            alias = self.advance().value
        return SelectItem(expr=expr, alias=alias)

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_expression()
        descending = False
        if self.accept_keyword("DESC"):
            descending = True
        else:
            self.accept_keyword("ASC")
        return OrderItem(expr=expr, descending=descending)

    # -- conditions -----------------------------------------------------

    def parse_condition(self) -> Any:
        left = self.parse_and_condition()
        operands = [left]
        while self.accept_keyword("OR"):
            operands.append(self.parse_and_condition())
        if len(operands) == 1:
            return left
        return BoolOp("OR", tuple(operands))

    def parse_and_condition(self) -> Any:
        left = self.parse_predicate()
        operands = [left]
        while self.accept_keyword("AND"):
            operands.append(self.parse_predicate())
        if len(operands) == 1:
            return left
        return BoolOp("AND", tuple(operands))

    def parse_predicate(self) -> Any:
        token = self.peek()
        if token.kind == "symbol" and token.value == "(":
            # Could be a parenthesized condition or expression; try condition.
            save = self.index
            self.advance()
            try:
                inner = self.parse_condition()
                self.expect_symbol(")")
                return inner
            except SqlError:
                self.index = save
        expr = self.parse_expression()
        token = self.peek()
        if token.kind == "symbol" and token.value in ("=", "<>", "!=", "<", "<=", ">", ">="):
            op = self.advance().value
            if op == "!=":
                op = "<>"
            right = self.parse_expression()
            return Comparison(op, expr, right)
        if self.accept_keyword("IN"):
            self.expect_symbol("(")
            items = [self.parse_literal()]
            while self.accept_symbol(","):
                items.append(self.parse_literal())
            self.expect_symbol(")")
            return InList(expr, tuple(items))
        if self.accept_keyword("IS"):
            negated = self.accept_keyword("NOT")
            self.expect_keyword("NULL")
            return IsNull(expr, negated)
        raise SqlSyntaxError(
            f"expected comparison, IN, or IS after expression", token.pos
        )

    def parse_literal(self) -> Literal:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            value = float(token.value) if "." in token.value else int(token.value)
            return Literal(value)
        if token.kind == "string":
            self.advance()
            return Literal(token.value)
        if token.kind == "keyword" and token.value == "NULL":
            self.advance()
            return Literal(None)
        raise SqlSyntaxError("expected literal", token.pos)

    # -- expressions ------------------------------------------------------

    def parse_expression(self) -> Any:
        token = self.peek()
        if token.kind == "keyword":
            if token.value == "CASE":
                return self.parse_case()
            if token.value == "EXTRACT":
                return self.parse_extract()
            if token.value == "TO_DATE":
                return self.parse_to_date()
            if token.value in ("COUNT", "SUM", "AVG", "MIN", "MAX"):
                return self.parse_aggregate()
            if token.value == "NULL":
                self.advance()
                return Literal(None)
            if token.value == "SELECT":
                raise SqlUnsupportedError("SUBQUERY", token.pos)
            if token.value == "DISTINCT":
                raise SqlUnsupportedError("DISTINCT outside COUNT", token.pos)
            raise SqlSyntaxError(f"unexpected keyword {token.value}", token.pos)
        if token.kind == "number" or token.kind == "string":
            return self.parse_literal()
        if token.kind == "ident":
            self.advance()
            return Column(token.value)
        if token.kind == "symbol" and token.value == "(":
            self.advance()
            inner = self.parse_expression()
            self.expect_symbol(")")
            return inner
        raise SqlSyntaxError(f"unexpected token {token.value!r}", token.pos)

    def parse_case(self) -> CaseExpr:
        self.expect_keyword("CASE")
        token = self.peek()
        if not (token.kind == "keyword" and token.value == "WHEN"):
            raise SqlUnsupportedError("simple CASE (only searched CASE supported)", token.pos)
        branches = []
        while self.accept_keyword("WHEN"):
            condition = self.parse_condition()
            self.expect_keyword("THEN")
            result = self.parse_expression()
            branches.append((condition, result))
        default = None
        if self.accept_keyword("ELSE"):
            default = self.parse_expression()
        self.expect_keyword("END")
        return CaseExpr(tuple(branches), default)

    def parse_extract(self) -> ExtractExpr:
        self.expect_keyword("EXTRACT")
        self.expect_symbol("(")
        token = self.peek()
        if not (token.kind == "keyword" and token.value in EXTRACT_PARTS):
            raise SqlSyntaxError(
                f"EXTRACT part must be one of {sorted(EXTRACT_PARTS)}", token.pos
            )
        part = self.advance().value
        self.expect_keyword("FROM")
        source = self.parse_expression()
        self.expect_symbol(")")
        return ExtractExpr(part, source)

    def parse_to_date(self) -> ToDateExpr:
        self.expect_keyword("TO_DATE")
        self.expect_symbol("(")
        source = self.parse_expression()
        self.expect_symbol(",")
        token = self.peek()
        if token.kind != "string":
            raise SqlSyntaxError("TO_DATE pattern must be a string literal", token.pos)
        pattern = self.advance().value
        self.expect_symbol(")")
        return ToDateExpr(source, pattern)

    def parse_aggregate(self) -> FuncCall:
        name = self.advance().value
        self.expect_symbol("(")
        if name == "COUNT" and self.accept_symbol("*"):
            self.expect_symbol(")")
            return FuncCall("COUNT", None)
        distinct = False
        if self.accept_keyword("DISTINCT"):
            if name != "COUNT":
                raise SqlUnsupportedError(f"DISTINCT inside {name}", self.peek().pos)
            distinct = True
        arg = self.parse_expression()
        self.expect_symbol(")")
        return FuncCall(name, arg, distinct)


def parse_script(text: str) -> list[SelectStatement]:
    tokens, _markers = tokenize(text)
    parser = _Parser(tokens)
    statements = parser.parse_script()
    return statements


def parse_script_with_markers(text: str) -> list[tuple[Optional[str], SelectStatement]]:
    """Statements paired with the `-- result: name` marker preceding each."""
    tokens, markers = tokenize(text)
    parser = _Parser(tokens)
    statements = parser.parse_script()
    paired = []
    marker_positions = sorted(markers)
    for index, stmt in enumerate(statements):
        name = None
        prev_end = statements[index - 1].start_pos if index else -1
        for pos in marker_positions:
            if prev_end < pos < stmt.start_pos or (index == 0 and pos < stmt.start_pos):
                name = markers[pos]
        paired.append((name, stmt))
    return paired


# ---------------------------------------------------------------------------
# Reference evaluator
# ---------------------------------------------------------------------------


def _contains_aggregate(expr: Any) -> bool:
    if isinstance(expr, FuncCall):
        return True
    if isinstance(expr, ExtractExpr):
        return _contains_aggregate(expr.source)
    if isinstance(expr, ToDateExpr):
        return _contains_aggregate(expr.source)
    if isinstance(expr, CaseExpr):
        return any(
            _contains_aggregate(b[1]) or _condition_has_aggregate(b[0])
            for b in expr.branches
        ) or (expr.default is not None and _contains_aggregate(expr.default))
    if isinstance(expr, Comparison):
        return _contains_aggregate(expr.left) or _contains_aggregate(expr.right)
    return False


def _condition_has_aggregate(cond: Any) -> bool:
    if isinstance(cond, BoolOp):
        return any(_condition_has_aggregate(c) for c in cond.operands)
    if isinstance(cond, Comparison):
        return _contains_aggregate(cond.left) or _contains_aggregate(cond.right)
    if isinstance(cond, InList):
        return _contains_aggregate(cond.expr)
    if isinstance(cond, IsNull):
        return _contains_aggregate(cond.expr)
    return _contains_aggregate(cond)


def _as_number(value: Any) -> Optional[Any]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
        try:
            parsed = float(value)
        except ValueError:
            return None
        if parsed != parsed or parsed in (float("inf"), float("-inf")):
            return None
        return parsed
    return None


class _Evaluator:
    def __init__(self, statement: SelectStatement, rows: list[dict]):
        self.statement = statement
        self.rows = rows
        # alias -> select expression, for GROUP BY / ORDER BY references
        self.aliases: dict[str, Any] = {}
        for item in statement.items:
            if item.alias:
                self.aliases[item.alias] = item.expr

    # -- scalar evaluation ------------------------------------------------

    def eval_scalar(self, expr: Any, row: dict) -> Any:
        if isinstance(expr, Literal):
            return expr.value
        if isinstance(expr, Column):
            if expr.name in row:
                return row[expr.name]
            if expr.name in self.aliases:
                return self.eval_scalar(self.aliases[expr.name], row)
            raise SqlEvalError(f"unknown column `{expr.name}`")
        if isinstance(expr, ToDateExpr):
            value = self.eval_scalar(expr.source, row)
            if value is None:
                return None
            return parse_temporal(str(value), expr.pattern)
        if isinstance(expr, ExtractExpr):
            value = self.eval_scalar(expr.source, row)
            if value is None:
                return None
            if not isinstance(value, datetime):
                raise SqlEvalError("EXTRACT requires a date value (use TO_DATE)")
            if expr.part == "YEAR":
                return value.year
            if expr.part == "MONTH":
                return value.month
            if expr.part == "DAY":
                return value.day
            return value.weekday()  # DOW: 0=Monday .. 6=Sunday
        if isinstance(expr, CaseExpr):
            for condition, result in expr.branches:
                if self.eval_condition(condition, row) is True:
                    return self.eval_scalar(result, row)
            if expr.default is not None:
                return self.eval_scalar(expr.default, row)
            return None
        if isinstance(expr, FuncCall):
            raise SqlEvalError(f"aggregate {expr.name} outside grouped context")
        raise SqlEvalError(f"cannot evaluate expression {expr!r}")

    def eval_condition(self, cond: Any, row: dict) -> Optional[bool]:
        """Three-valued logic: True, False, or None for NULL."""
        if isinstance(cond, BoolOp):
            results = [self.eval_condition(c, row) for c in cond.operands]
            if cond.op == "AND":
                if any(r is False for r in results):
                    return False
                if any(r is None for r in results):
                    return None
                return True
            if any(r is True for r in results):
                return True
            if any(r is None for r in results):
                return None
            return False
        if isinstance(cond, Comparison):
            left = self.eval_scalar(cond.left, row)
            right = self.eval_scalar(cond.right, row)
            return _compare(cond.op, left, right)
        if isinstance(cond, InList):
            value = self.eval_scalar(cond.expr, row)
            if value is None:
                return None
            for item in cond.items:
                if _compare("=", value, item.value) is True:
                    return True
            return False
        if isinstance(cond, IsNull):
            value = self.eval_scalar(cond.expr, row)
            return (value is not None) if cond.negated else (value is None)
        # A bare expression as condition: truthy when non-NULL and non-zero.
        value = self.eval_scalar(cond, row)
        if value is None:
            return None
        return bool(value)

    # -- aggregates ---------------------------------------------------------

    def eval_aggregate(self, call: FuncCall, rows: list[dict]) -> Any:
        if call.name == "COUNT":
            if call.arg is None:
                return len(rows)
            values = [self.eval_scalar(call.arg, r) for r in rows]
            values = [v for v in values if v is not None]
            if call.distinct:
                return len(set(values))
            return len(values)
        values = [self.eval_scalar(call.arg, r) for r in rows]
        values = [v for v in values if v is not None]
        if not values:
            return None
        if call.name in ("SUM", "AVG"):
            numbers = [n for n in (_as_number(v) for v in values) if n is not None]
            if not numbers:
                return None
            total = sum(numbers)
            if call.name == "SUM":
                return total
            return total / len(numbers)
        # MIN/MAX: numeric when every value is numeric, else lexical.
        numbers = [_as_number(v) for v in values]
        if all(n is not None for n in numbers):
            return min(numbers) if call.name == "MIN" else max(numbers)
        strings = [str(v) for v in values]
        return min(strings) if call.name == "MIN" else max(strings)

    def eval_grouped_expr(self, expr: Any, rows: list[dict]) -> Any:
        """Evaluate a select expression in a grouped context."""
        if isinstance(expr, FuncCall):
            return self.eval_aggregate(expr, rows)
        if _contains_aggregate(expr):
            raise SqlEvalError("aggregates may not be nested inside expressions")
        # Non-aggregate expression in a grouped select: a grouping
        # expression, constant on the group; evaluate on the first row.
        return self.eval_scalar(expr, rows[0])

    # -- statement ----------------------------------------------------------

    def run(self) -> dict:
        stmt = self.statement
        rows = self.rows
        if stmt.where is not None:
            rows = [r for r in rows if self.eval_condition(stmt.where, r) is True]

        grouped = bool(stmt.group_by) or any(
            _contains_aggregate(item.expr) for item in stmt.items
        )

        columns = []
        for index, item in enumerate(stmt.items):
            if item.alias:
                columns.append(item.alias)
            elif isinstance(item.expr, Column):
                columns.append(item.expr.name)
            else:
                columns.append(f"expr_{index}")

        if grouped:
            groups: dict[tuple, list[dict]] = {}
            order: list[tuple] = []
            for row in rows:
                key = tuple(self.eval_scalar(g, row) for g in stmt.group_by)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(row)
            if not stmt.group_by:
                # Global aggregate: exactly one group, even over zero rows.
                groups = {(): rows}
                order = [()]
            out_rows = []
            for key in order:
                group_rows = groups[key]
                out_rows.append(
                    [self.eval_grouped_expr(item.expr, group_rows) for item in stmt.items]
                )
        else:
            out_rows = [
                [self.eval_scalar(item.expr, row) for item in stmt.items] for row in rows
            ]

        if stmt.order_by:
            out_rows = self._sort_rows(out_rows, columns, rows_are_grouped=grouped)

        if stmt.limit is not None:
            out_rows = out_rows[: stmt.limit]

        return {"columns": columns, "rows": out_rows}

    def _sort_rows(self, out_rows: list, columns: list[str], rows_are_grouped: bool) -> list:
        stmt = self.statement

        def key_for(row_values: list):
            keys = []
            for item in stmt.order_by:
                expr = item.expr
                # Resolve against output columns first (aliases and names).
                value = None
                resolved = False
                if isinstance(expr, Column) and expr.name in columns:
                    value = row_values[columns.index(expr.name)]
                    resolved = True
                if not resolved:
                    raise SqlEvalError(
                        "ORDER BY must reference a select column or alias"
                    )
                keys.append(_collation_key(value, item.descending))
            return tuple(keys)

        # Python sorts ascending; encode DESC by inverting within the key.
        return sorted(out_rows, key=key_for)


class _Reversed:
    """Wraps a collation key to invert its order for DESC sorts."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return other.key < self.key

    def __eq__(self, other):
        return other.key == self.key


def _collation_key(value: Any, descending: bool = False):
    # NULL first, then numbers (numeric order), then strings (lexical).
    if value is None:
        key = (0, 0.0, "")
    else:
        number = _as_number(value)
        if number is not None and not isinstance(value, str):
            key = (1, float(number), "")
        elif number is not None:
            # Numeric-looking strings still sort as strings.
            key = (2, 0.0, value)
        elif isinstance(value, datetime):
            key = (1, value.timestamp(), "")
        else:
            key = (2, 0.0, str(value))
    return _Reversed(key) if descending else key


def _compare(op: str, left: Any, right: Any) -> Optional[bool]:
    if left is None or right is None:
        return None
    left_num = _as_number(left) if not isinstance(left, datetime) else None
    right_num = _as_number(right) if not isinstance(right, datetime) else None
    numeric_left = isinstance(left, (int, float)) and not isinstance(left, bool)
    numeric_right = isinstance(right, (int, float)) and not isinstance(right, bool)
    if numeric_left or numeric_right:
        # Mixed comparisons coerce the string side to a number; a string
        # that does not parse is unequal to (and unordered with) any number.
        if left_num is None or right_num is None:
            return op == "<>"
        left, right = left_num, right_num
    elif isinstance(left, datetime) != isinstance(right, datetime):
        return op == "<>"
    else:
        left, right = str(left), str(right)
    if op == "=":
        return left == right
    if op == "<>":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    return left >= right


def evaluate_statement(statement: SelectStatement, rows: list[dict]) -> dict:
    return _Evaluator(statement, rows).run()


def evaluate_script(text: str, tables: dict[str, list[dict]]) -> dict[str, dict]:
    """Evaluate every statement; returns {result name: table}.

    Result names come from `-- result: <name>` markers; unmarked
    statements are named statement_<index>.
    """
    results = {}
    for index, (name, stmt) in enumerate(parse_script_with_markers(text)):
        if stmt.table not in tables:
            raise SqlEvalError(f"unknown table `{stmt.table}`", stmt.start_pos)
        table = evaluate_statement(stmt, tables[stmt.table])
        results[name or f"statement_{index}"] = table
    return results


# ---------------------------------------------------------------------------
# Rendering helpers (shared with the plan-to-SQL renderer)
# ---------------------------------------------------------------------------


def quote_identifier(name: str) -> str:
    if "`" in name:
        raise SqlError(f"identifier {name!r} cannot contain backticks")
    return f"`{name}`"


def string_literal(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def table_name_for_topic(topic_name: str) -> str:
    """Topic display name to SQL table name: spaces become underscores."""
    return topic_name.replace(" ", "_")
