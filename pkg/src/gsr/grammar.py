"""Probabilistic BNF grammars: parsing, validation, and action-space queries.

A grammar file is UTF-8 text with one production per line::

    <symbol> ::= body1 | body2 | ... || probs [p1, p2, ...]

``#`` starts a comment line, the ``|| probs [...]`` tail is optional
(defaults to a uniform distribution over the production), and the first
production's left-hand symbol is the start symbol.  The rules of all
productions form one flat, source-ordered action list; an action index
selects exactly one rule, and every nonterminal owns a contiguous slice
of that list.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GrammarError",
    "Rule",
    "Grammar",
    "parse_grammar",
    "action_mask",
    "child_symbols",
    "validate_grammar",
    "serialize_grammar",
]

# Per-production probabilities farther than this from 1 are renormalized
# with a warning; inside the tolerance they are silently normalized.
PROB_SUM_TOLERANCE = 1e-6

_NONTERMINAL_RE = re.compile(r"<[^<>\s]+>")
_VAR_RANGE_RE = re.compile(r"^(\d+)\s*\.\.\.\s*nvar$")


class GrammarError(ValueError):
    """Raised for malformed grammar text or contract violations."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


def is_nonterminal(token: str) -> bool:
    """True for tokens of the form ``<name>``."""
    return bool(_NONTERMINAL_RE.fullmatch(token))


@dataclass(frozen=True)
class Rule:
    """One grammar rule: ``owner ::= body``, with its sampling weight."""

    owner: str
    body: tuple[str, ...]
    probability: float

    def __post_init__(self):
        if not self.body:
            raise GrammarError(f"rule for {self.owner} has an empty body")

    def body_text(self) -> str:
        return " ".join(self.body)


class Grammar:
    """An immutable probabilistic context-free grammar.

    Holds the flat action list (``rules``), the per-symbol contiguous
    production slices, and cached boolean masks.  Instances are safe to
    share across threads/processes once constructed.
    """

    def __init__(self, rules: Sequence[Rule], start_symbol: str | None = None):
        if not rules:
            raise GrammarError("grammar has no rules")
        self.rules: tuple[Rule, ...] = tuple(rules)
        self.start_symbol: str = start_symbol or self.rules[0].owner

        productions: dict[str, range] = {}
        begin = 0
        for i, rule in enumerate(self.rules):
            if rule.owner != self.rules[begin].owner:
                owner = self.rules[begin].owner
                if owner in productions:
                    raise GrammarError(f"production for {owner} is not contiguous")
                productions[owner] = range(begin, i)
                begin = i
        last_owner = self.rules[begin].owner
        if last_owner in productions:
            raise GrammarError(f"production for {last_owner} is not contiguous")
        productions[last_owner] = range(begin, len(self.rules))
        self.productions: dict[str, range] = productions

        self.nonterminals: tuple[str, ...] = tuple(productions)
        terminals: list[str] = []
        seen: set[str] = set()
        for rule in self.rules:
            for token in rule.body:
                if not is_nonterminal(token) and token not in seen:
                    seen.add(token)
                    terminals.append(token)
        self.terminals: tuple[str, ...] = tuple(terminals)

        self._masks: dict[str, np.ndarray] = {}
        for symbol, slc in productions.items():
            mask = np.zeros(len(self.rules), dtype=bool)
            mask[slc.start : slc.stop] = True
            mask.setflags(write=False)
            self._masks[symbol] = mask

    @property
    def action_count(self) -> int:
        return len(self.rules)

    def action_mask(self, symbol: str) -> np.ndarray:
        """Boolean vector marking the actions accessible from ``symbol``."""
        try:
            return self._masks[symbol]
        except KeyError:
            raise GrammarError(f"unknown nonterminal {symbol!r}") from None

    def child_symbols(self, action: int) -> tuple[list[str], list[str]]:
        """Split rule ``action`` into (nonterminal occurrences, terminal tokens).

        Both lists preserve body order; interleaving them back in body
        order reconstructs the rule.
        """
        if not 0 <= action < len(self.rules):
            raise GrammarError(f"action index {action} out of range 0..{len(self.rules) - 1}")
        body = self.rules[action].body
        nts = [t for t in body if is_nonterminal(t)]
        ts = [t for t in body if not is_nonterminal(t)]
        return nts, ts

    def rule_probabilities(self) -> np.ndarray:
        return np.array([r.probability for r in self.rules], dtype=float)

    def symbol_index(self, symbol: str) -> int:
        try:
            return self.nonterminals.index(symbol)
        except ValueError:
            raise GrammarError(f"unknown nonterminal {symbol!r}") from None

    def has_terminal_token(self, name: str) -> bool:
        """True if ``name`` occurs as an identifier inside any terminal token."""
        pattern = re.compile(rf"(?<![\w.]){re.escape(name)}(?![\w])")
        return any(pattern.search(t) for t in self.terminals)

    def __repr__(self) -> str:
        return (
            f"Grammar(start={self.start_symbol!r}, "
            f"nonterminals={len(self.nonterminals)}, actions={len(self.rules)})"
        )


def tokenize_body(text: str, line: int | None = None) -> tuple[str, ...]:
    """Tokenize a rule body.

    ``<...>`` spans become nonterminal tokens, parentheses are standalone
    terminals, whitespace separates, and any other character run is kept
    verbatim as a terminal token (so ``x[`` or ``const-10*log10`` are
    single tokens that concatenate back into evaluable text).
    """
    tokens: list[str] = []
    buf: list[str] = []
    i = 0
    n = len(text)

    def flush():
        if buf:
            tokens.append("".join(buf))
            buf.clear()

    while i < n:
        ch = text[i]
        if ch.isspace():
            flush()
            i += 1
        elif ch == "<":
            end = text.find(">", i)
            if end < 0:
                raise GrammarError("unterminated nonterminal reference", line, i + 1)
            flush()
            tokens.append(text[i : end + 1])
            i = end + 1
        elif ch == ">":
            raise GrammarError("stray '>' outside a nonterminal reference", line, i + 1)
        elif ch in "()":
            flush()
            tokens.append(ch)
            i += 1
        else:
            buf.append(ch)
            i += 1
    flush()
    if not tokens:
        raise GrammarError("empty rule body", line)
    return tuple(tokens)


def _parse_prob_entry(entry: str, nvar: int | None, line: int) -> float:
    entry = entry.strip()
    if "/" in entry:
        num_s, _, den_s = entry.partition("/")
        try:
            num = float(num_s)
        except ValueError:
            raise GrammarError(f"bad probability {entry!r}", line) from None
        if den_s.strip() == "nvar":
            if nvar is None:
                raise GrammarError("probability uses nvar but no nvar was given", line)
            den = float(nvar)
        else:
            try:
                den = float(den_s)
            except ValueError:
                raise GrammarError(f"bad probability {entry!r}", line) from None
        if den == 0:
            raise GrammarError(f"zero denominator in probability {entry!r}", line)
        return num / den
    try:
        return float(entry)
    except ValueError:
        raise GrammarError(f"bad probability {entry!r}", line) from None


def _parse_probs(text: str, rule_count: int, nvar: int | None, line: int) -> list[float]:
    """Parse ``probs [p1, p2, ...]``; ``...`` repeats its neighbor to fill."""
    m = re.fullmatch(r"\s*probs\s*\[(.*)\]\s*", text)
    if m is None:
        raise GrammarError("expected `probs [p1, p2, ...]` after '||'", line)
    raw = [e for e in re.split(r"[,\s]+", m.group(1).strip()) if e]
    entries: list[float | None] = []
    for e in raw:
        if e == "...":
            entries.append(None)
        else:
            entries.append(_parse_prob_entry(e, nvar, line))
    if not entries or all(e is None for e in entries):
        raise GrammarError("empty probability list", line)

    ellipses = entries.count(None)
    if ellipses > 1:
        raise GrammarError("at most one '...' allowed in a probability list", line)
    if ellipses == 1:
        # `...` stretches or shrinks the list to rule_count entries.
        i = entries.index(None)
        explicit = [x for x in entries if x is not None]
        missing = rule_count - len(explicit)
        if missing >= 0:
            neighbor = next(
                (x for x in entries[i + 1 :] if x is not None),
                next((x for x in reversed(entries[:i]) if x is not None), None),
            )
            filled = [x for x in entries[:i] if x is not None]
            filled.extend([neighbor] * missing)
            filled.extend(x for x in entries[i + 1 :] if x is not None)
        elif len(set(explicit)) == 1:
            filled = [explicit[0]] * rule_count
        else:
            raise GrammarError(
                f"{len(explicit)} probabilities for {rule_count} rules", line
            )
    else:
        filled = [x for x in entries if x is not None]
    if len(filled) != rule_count:
        raise GrammarError(
            f"{len(filled)} probabilities for {rule_count} rules", line
        )
    if any(p < 0 for p in filled):
        raise GrammarError("negative probability", line)
    return filled


def _normalize(
    probs: list[float], owner: str, line: int, warn: bool = True
) -> list[float]:
    total = sum(probs)
    if total <= 0:
        raise GrammarError(f"probabilities for {owner} sum to {total}", line)
    if warn and abs(total - 1.0) > PROB_SUM_TOLERANCE:
        warnings.warn(
            f"probabilities for {owner} sum to {total:.6g}; renormalizing",
            stacklevel=3,
        )
    return [p / total for p in probs]


def parse_grammar(text: str, nvar: int | None = None, strict: bool = True) -> Grammar:
    """Parse probabilistic BNF text into a :class:`Grammar`.

    ``nvar`` instantiates the ``<sym> ::= 1... nvar`` shorthand (one rule
    per feature index) and the matching ``1/nvar`` probabilities at load
    time.  With ``strict`` (the default) any validation diagnostic raises;
    ``strict=False`` returns the grammar anyway so it can be inspected
    with :func:`validate_grammar`.
    """
    rules: list[Rule] = []
    seen_symbols: set[str] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "::=" not in line:
            raise GrammarError("expected '::=' in production", lineno)
        lhs, _, rhs = line.partition("::=")
        symbol = lhs.strip()
        if not is_nonterminal(symbol):
            raise GrammarError(
                f"left-hand side {symbol!r} is not a <nonterminal>", lineno
            )
        if symbol in seen_symbols:
            raise GrammarError(f"duplicate production for {symbol}", lineno)
        seen_symbols.add(symbol)

        body_part, sep, probs_part = rhs.partition("||")
        body_texts = [b.strip() for b in body_part.split("|")]
        if any(not b for b in body_texts):
            raise GrammarError("empty rule between '|' separators", lineno)

        range_match = _VAR_RANGE_RE.fullmatch(body_part.strip())
        if range_match:
            if nvar is None:
                raise GrammarError(
                    f"production for {symbol} uses the '1... nvar' shorthand "
                    "but no nvar was given",
                    lineno,
                )
            first = int(range_match.group(1))
            bodies = [(str(k),) for k in range(first, first + nvar)]
        else:
            bodies = [tokenize_body(b, lineno) for b in body_texts]

        if sep:
            probs = _parse_probs(probs_part, len(bodies), nvar, lineno)
            probs = _normalize(probs, symbol, lineno)
        else:
            # No probs clause: uniform over the production, silently.
            probs = [1.0 / len(bodies)] * len(bodies)
        rules.extend(
            Rule(symbol, body, p) for body, p in zip(bodies, probs)
        )

    grammar = Grammar(rules)
    if strict:
        problems = validate_grammar(grammar)
        if problems:
            raise GrammarError("; ".join(problems))
    return grammar


def action_mask(grammar: Grammar, symbol: str) -> np.ndarray:
    """Mask of actions accessible from ``symbol`` (module-level form)."""
    return grammar.action_mask(symbol)


def child_symbols(grammar: Grammar, action: int) -> tuple[list[str], list[str]]:
    return grammar.child_symbols(action)


def _terminating_symbols(grammar: Grammar) -> set[str]:
    """Fixed point of 'this symbol can derive a terminal-only string'."""
    terminating: set[str] = set()
    changed = True
    while changed:
        changed = False
        for rule in grammar.rules:
            if rule.owner in terminating:
                continue
            body_nts = (t for t in rule.body if is_nonterminal(t))
            if all(nt in terminating for nt in body_nts):
                terminating.add(rule.owner)
                changed = True
    return terminating


def _reachable_symbols(grammar: Grammar) -> set[str]:
    reachable = {grammar.start_symbol}
    frontier = [grammar.start_symbol]
    while frontier:
        symbol = frontier.pop()
        for i in grammar.productions.get(symbol, range(0)):
            for token in grammar.rules[i].body:
                if is_nonterminal(token) and token not in reachable:
                    reachable.add(token)
                    frontier.append(token)
    return reachable


def validate_grammar(grammar: Grammar) -> list[str]:
    """Check all grammar invariants; returns diagnostics (empty = valid)."""
    problems: list[str] = []

    for symbol, slc in grammar.productions.items():
        if len(slc) < 1:
            problems.append(f"{symbol}: production has no rules")
        probs = [grammar.rules[i].probability for i in slc]
        if any(p < 0 for p in probs):
            problems.append(f"{symbol}: negative rule probability")
        if abs(sum(probs) - 1.0) > 1e-9:
            problems.append(f"{symbol}: probabilities sum != 1 ({sum(probs):.6g})")

    defined = set(grammar.productions)
    for i, rule in enumerate(grammar.rules):
        for token in rule.body:
            if is_nonterminal(token) and token not in defined:
                problems.append(
                    f"action {i} ({rule.owner} ::= {rule.body_text()}): "
                    f"undefined nonterminal {token}"
                )

    if grammar.start_symbol not in defined:
        problems.append(f"start symbol {grammar.start_symbol} has no production")
        return problems

    # Only meaningful when all references resolve.
    if not any("undefined nonterminal" in p for p in problems):
        terminating = _terminating_symbols(grammar)
        for symbol in grammar.nonterminals:
            if symbol not in terminating:
                problems.append(f"{symbol}: symbol cannot terminate")
        reachable = _reachable_symbols(grammar)
        for symbol in grammar.nonterminals:
            if symbol not in reachable:
                problems.append(f"{symbol}: unreachable from {grammar.start_symbol}")

    return problems


def serialize_grammar(grammar: Grammar) -> str:
    """Render a grammar back to its file format (round-trips exactly)."""
    lines = []
    for symbol in grammar.nonterminals:
        slc = grammar.productions[symbol]
        bodies = " | ".join(grammar.rules[i].body_text() for i in slc)
        probs = ", ".join(repr(grammar.rules[i].probability) for i in slc)
        lines.append(f"{symbol} ::= {bodies} || probs [{probs}]")
    return "\n".join(lines) + "\n"
