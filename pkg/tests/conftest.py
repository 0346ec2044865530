import numpy as np
import pytest

from gsr.cli import shipped_grammar_text
from gsr.grammar import parse_grammar

# 16-action toy grammar used across test modules: start <exp> with two
# rules, <b> owning actions 4-5 (0-based), <i> owning the ten features.
TOY_GRAMMAR = """
<exp> ::= <a> | <b> || probs [0.5, 0.5]
<a> ::= <i> * <i> | <i> / <i> || probs [0.5, 0.5]
<b> ::= <i> + <i> | <i> - <i> || probs [0.5, 0.5]
<i> ::= x[1] | x[2] | x[3] | x[4] | x[5] | x[6] | x[7] | x[8] | x[9] | x[10] || probs [0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1]
"""

TWO_RULE_GRAMMAR = '<s> ::= "a" | "b" || probs [0.5,0.5]'


@pytest.fixture(scope="session")
def toy_grammar():
    return parse_grammar(TOY_GRAMMAR)


@pytest.fixture(scope="session")
def nguyen_grammar():
    return parse_grammar(shipped_grammar_text("nguyen"), nvar=1)


@pytest.fixture(scope="session")
def airfoil_grammar():
    with pytest.warns(UserWarning):
        return parse_grammar(shipped_grammar_text("airfoil"))


def random_terminating_grammar(rng: np.random.Generator, max_symbols: int = 5):
    """Build a random valid grammar: every symbol reachable and terminating.

    Symbol k may reference symbols with higher indices only, and always
    owns at least one terminal-only rule, so termination/reachability
    hold by construction.
    """
    n_symbols = int(rng.integers(1, max_symbols + 1))
    names = [f"<s{k}>" for k in range(n_symbols)]
    terminals = ["x[1]", "x[2]", "1", "2"]
    lines = []
    for k, name in enumerate(names):
        n_rules = int(rng.integers(1, 4))
        bodies = [rng.choice(terminals)]  # guaranteed terminating rule
        for _ in range(n_rules - 1):
            length = int(rng.integers(1, 4))
            body = []
            for _ in range(length):
                later = names[k + 1 :]
                if later and rng.random() < 0.5:
                    body.append(later[int(rng.integers(0, len(later)))])
                else:
                    body.append(str(rng.choice(terminals + ["+", "-"])))
            bodies.append(" ".join(body))
        # Reference every symbol from its predecessor at least once.
        if k + 1 < n_symbols:
            bodies.append(f"( {names[k + 1]} )")
        lines.append(f"{name} ::= " + " | ".join(bodies))
    return parse_grammar("\n".join(lines))
