"""Leftmost depth-first derivation state machine.

A derivation expands one nonterminal per step: the node at the front of
the pending queue is rewritten with the chosen rule and its nonterminal
children are pushed back at the front in body order, so the tree grows
leftmost-first.  The machine records everything the policy observes:
recent actions, the parent's action, expanded-sibling actions, the step
counter, and the current symbol with its action mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluator import Expression, parse_expression
from .grammar import Grammar, is_nonterminal

__all__ = [
    "NULL_ACTION",
    "StateToggles",
    "StateObservation",
    "ParseNode",
    "DerivationState",
    "init_derivation",
    "apply_action",
    "observation",
    "is_complete",
    "to_expression",
    "expression_text",
    "audit_trajectory",
]

# Placeholder action id for padding and for "no parent"; the policy maps
# it to a dedicated embedding row.
NULL_ACTION = -1

PAST_WINDOW = 10
SIBLING_WINDOW = 4


@dataclass(frozen=True)
class StateToggles:
    """Which observation components are populated (ablation support)."""

    use_parent: bool = True
    use_siblings: bool = True
    use_past: bool = True
    use_depth: bool = True
    use_symbol: bool = True


DEFAULT_TOGGLES = StateToggles()


@dataclass
class StateObservation:
    """One policy input: windows are null-padded on the left."""

    past_actions: np.ndarray  # (W,) int
    parent_action: int
    sibling_actions: np.ndarray  # (S,) int
    depth: int
    symbol_index: int  # index into grammar.nonterminals, NULL_ACTION if occluded
    mask: np.ndarray  # (action_count,) bool


class ParseNode:
    __slots__ = ("symbol", "action", "parent", "children")

    def __init__(self, symbol: str, parent: "ParseNode | None" = None):
        self.symbol = symbol
        self.action: int | None = None
        self.parent = parent
        self.children: list[ParseNode] = []  # nonterminal children, body order

    @property
    def expanded(self) -> bool:
        return self.action is not None


class DerivationState:
    """One in-progress derivation; mutated in place, one writer per episode."""

    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.root = ParseNode(grammar.start_symbol)
        self.queue: list[ParseNode] = [self.root]
        self.trajectory: list[int] = []

    @property
    def depth(self) -> int:
        return len(self.trajectory)

    @property
    def is_complete(self) -> bool:
        return not self.queue

    @property
    def current_symbol(self) -> str | None:
        return self.queue[0].symbol if self.queue else None

    def current_mask(self) -> np.ndarray:
        if self.is_complete:
            raise ValueError("derivation is complete; no mask")
        return self.grammar.action_mask(self.queue[0].symbol)

    def apply_action(self, action: int) -> "DerivationState":
        if self.is_complete:
            raise ValueError("cannot expand a complete derivation")
        node = self.queue[0]
        if not self.grammar.action_mask(node.symbol)[action]:
            raise ValueError(
                f"action {action} is masked for symbol {node.symbol}"
            )
        self.queue.pop(0)
        node.action = action
        rule = self.grammar.rules[action]
        children = [
            ParseNode(tok, parent=node) for tok in rule.body if is_nonterminal(tok)
        ]
        node.children = children
        self.queue[:0] = children
        self.trajectory.append(action)
        return self

    def observation(
        self,
        toggles: StateToggles = DEFAULT_TOGGLES,
        past_window: int = PAST_WINDOW,
        sibling_window: int = SIBLING_WINDOW,
    ) -> StateObservation:
        if self.is_complete:
            raise ValueError("cannot observe a complete derivation")
        node = self.queue[0]

        past = np.full(past_window, NULL_ACTION, dtype=np.int64)
        if toggles.use_past and self.trajectory:
            recent = self.trajectory[-past_window:]
            past[past_window - len(recent):] = recent

        parent_action = NULL_ACTION
        if toggles.use_parent and node.parent is not None:
            parent_action = node.parent.action

        siblings = np.full(sibling_window, NULL_ACTION, dtype=np.int64)
        if toggles.use_siblings and node.parent is not None:
            done = [
                c.action
                for c in node.parent.children
                if c is not node and c.expanded
            ]
            recent = done[-sibling_window:]
            if recent:
                siblings[sibling_window - len(recent):] = recent

        depth = self.depth if toggles.use_depth else 0
        symbol_index = (
            self.grammar.symbol_index(node.symbol) if toggles.use_symbol else NULL_ACTION
        )
        return StateObservation(
            past_actions=past,
            parent_action=parent_action,
            sibling_actions=siblings,
            depth=depth,
            symbol_index=symbol_index,
            mask=self.grammar.action_mask(node.symbol),
        )

    def expression_text(self) -> str:
        """In-order concatenation of terminal tokens of the finished tree."""
        if not self.is_complete:
            raise ValueError("derivation is incomplete; no expression yet")
        parts: list[str] = []

        def emit(node: ParseNode):
            rule = self.grammar.rules[node.action]
            child_iter = iter(node.children)
            for token in rule.body:
                if is_nonterminal(token):
                    emit(next(child_iter))
                else:
                    parts.append(token)

        emit(self.root)
        return "".join(parts)

    def to_expression(self) -> Expression:
        return parse_expression(self.expression_text())


def init_derivation(grammar: Grammar) -> DerivationState:
    return DerivationState(grammar)


def apply_action(state: DerivationState, action: int) -> DerivationState:
    return state.apply_action(action)


def observation(
    state: DerivationState,
    toggles: StateToggles = DEFAULT_TOGGLES,
    past_window: int = PAST_WINDOW,
    sibling_window: int = SIBLING_WINDOW,
) -> StateObservation:
    return state.observation(toggles, past_window, sibling_window)


def is_complete(state: DerivationState) -> bool:
    return state.is_complete


def to_expression(state: DerivationState) -> Expression:
    return state.to_expression()


def expression_text(state: DerivationState) -> str:
    return state.expression_text()


def audit_trajectory(
    grammar: Grammar, actions: list[int], expected_text: str | None = None
) -> DerivationState:
    """Replay an action sequence, enforcing grammar legality at every step.

    Raises if any action is masked at its step or the sequence leaves the
    derivation incomplete; with ``expected_text`` also checks the rebuilt
    expression matches.  Used to certify that a reported expression is
    derivable from the grammar (e.g. unit-consistency by construction).
    """
    state = DerivationState(grammar)
    for action in actions:
        state.apply_action(action)
    if not state.is_complete:
        raise ValueError("trajectory does not complete the derivation")
    if expected_text is not None and state.expression_text() != expected_text:
        raise ValueError(
            "trajectory rebuilds a different expression: "
            f"{state.expression_text()!r} != {expected_text!r}"
        )
    return state
