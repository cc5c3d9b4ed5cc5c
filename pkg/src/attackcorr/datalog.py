"""Positive Datalog with semi-naive evaluation and full derivation traces.

Terms starting with an upper-case letter or ``_`` are variables, anything
else is a constant.  Rule library files hold one rule per line::

    label: head(X, Y) :- body1(X, Z), body2(Z, Y) [p=0.8, silent]

``p`` sets the rule's local success probability; ``silent`` marks a rule
whose instances are bookkeeping (e.g. reachability) rather than attacker
actions.  ``#`` starts a comment.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import ArityMismatch, ParseError
from .facts import Fact, FactBase

REMOTE_PROBABILITY = 0.8
LOCAL_PROBABILITY = 0.9

Substitution = Mapping[str, str]


def is_variable(term: str) -> bool:
    return term[:1].isupper() or term[:1] == "_"


@dataclass(frozen=True)
class Literal:
    predicate: str
    terms: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.predicate}({', '.join(self.terms)})"

    @property
    def variables(self) -> set[str]:
        return {t for t in self.terms if is_variable(t)}


@dataclass(frozen=True)
class Rule:
    label: str
    head: Literal
    body: tuple[Literal, ...]
    local_probability: float | None = None
    silent: bool = False

    def __post_init__(self):
        if not self.body:
            raise ValueError(f"rule {self.label}: empty body")
        unbound = self.head.variables - set().union(*(lit.variables for lit in self.body))
        if unbound:
            raise ValueError(f"rule {self.label}: head variables {sorted(unbound)} not in body")
        if self.local_probability is None:
            object.__setattr__(self, "local_probability", default_probability(self.body))
        if not 0.0 < self.local_probability <= 1.0:
            raise ValueError(f"rule {self.label}: local probability {self.local_probability} outside (0, 1]")

    def __str__(self) -> str:
        opts = [f"p={self.local_probability:g}"] + (["silent"] if self.silent else [])
        return f"{self.label}: {self.head} :- {', '.join(map(str, self.body))} [{', '.join(opts)}]"


def default_probability(body: Sequence[Literal]) -> float:
    remote = any(
        lit.predicate == "vuln_exists" and len(lit.terms) > 3 and lit.terms[3] == "remote" for lit in body
    )
    return REMOTE_PROBABILITY if remote else LOCAL_PROBABILITY


@dataclass(frozen=True)
class DerivationTrace:
    derived: Fact
    rule_label: str
    premises: tuple[Fact, ...]


class Evaluation(NamedTuple):
    derived: set[Fact]
    traces: list[DerivationTrace]
    rounds: int


# ---------------------------------------------------------------- parsing

_LITERAL = re.compile(r"\s*([a-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)\s*")
_RULE = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*:\s*(.+?)\s*:-\s*(.+?)\s*(?:\[([^\]]*)\])?\s*$")


def parse_literal(text: str) -> Literal:
    m = _LITERAL.fullmatch(text)
    if not m:
        raise ParseError(f"malformed literal {text.strip()!r}")
    terms = tuple(t.strip() for t in m.group(2).split(",")) if m.group(2).strip() else ()
    if any(not t for t in terms):
        raise ParseError(f"empty term in {text.strip()!r}")
    return Literal(m.group(1), terms)


def _split_body(text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse_rules(text: str) -> list[Rule]:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _RULE.match(line)
        if not m:
            raise ParseError(f"malformed rule: {line!r}", lineno)
        label, head, body, opts = m.groups()
        prob, silent = None, False
        for opt in (o.strip() for o in (opts or "").split(",")):
            if not opt:
                continue
            if opt == "silent":
                silent = True
            elif opt.startswith("p="):
                try:
                    prob = float(opt[2:])
                except ValueError:
                    raise ParseError(f"bad probability {opt!r}", lineno) from None
            else:
                raise ParseError(f"unknown rule option {opt!r}", lineno)
        try:
            rules.append(Rule(label, parse_literal(head), tuple(parse_literal(b) for b in _split_body(body)), prob, silent))
        except ParseError as exc:
            raise ParseError(str(exc), lineno) from None
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    labels = [r.label for r in rules]
    dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
    if dupes:
        raise ParseError(f"duplicate rule labels {dupes}")
    return rules


def load_rules(path: str | Path | None = None) -> list[Rule]:
    """Read a rule library; ``None`` selects the bundled default library."""
    if path is None:
        text = resources.files("attackcorr").joinpath("data/default_rules.dl").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParseError(f"cannot read rule library {path}: {exc}") from exc
    return parse_rules(text)


def with_probabilities(rules: Iterable[Rule], overrides: Mapping[str, float]) -> list[Rule]:
    rules = list(rules)
    known = {r.label for r in rules}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ParseError(f"local_probabilities names unknown rules {unknown}")
    return [
        Rule(r.label, r.head, r.body, float(overrides[r.label]), r.silent) if r.label in overrides else r
        for r in rules
    ]


# ---------------------------------------------------------------- unification


def unify(pattern: Literal, fact: Fact, bindings: Substitution | None = None) -> dict[str, str] | None:
    if pattern.predicate != fact.predicate or len(pattern.terms) != len(fact.args):
        return None
    out = dict(bindings or {})
    for term, value in zip(pattern.terms, fact.args):
        if is_variable(term):
            bound = out.get(term)
            if bound is None:
                out[term] = value
            elif bound != value:
                return None
        elif term != value:
            return None
    return out


def ground(lit: Literal, bindings: Substitution) -> Fact:
    return Fact(lit.predicate, tuple(bindings[t] if is_variable(t) else t for t in lit.terms))


class _Index:
    def __init__(self, facts: Iterable[Fact] = ()):
        self.by_pred: dict[str, list[Fact]] = defaultdict(list)
        self.by_arg: dict[tuple[str, int, str], list[Fact]] = defaultdict(list)
        self.add(facts)

    def add(self, facts: Iterable[Fact]) -> None:
        for f in facts:
            self.by_pred[f.predicate].append(f)
            for pos, value in enumerate(f.args):
                self.by_arg[(f.predicate, pos, value)].append(f)

    def candidates(self, lit: Literal, bindings: Substitution) -> list[Fact]:
        best = None
        for pos, term in enumerate(lit.terms):
            value = bindings.get(term) if is_variable(term) else term
            if value is not None:
                found = self.by_arg.get((lit.predicate, pos, value), [])
                if best is None or len(found) < len(best):
                    best = found
        return best if best is not None else self.by_pred.get(lit.predicate, [])


def _join(body: Sequence[Literal], sources: Sequence[_Index], bindings: dict[str, str], chosen: list[Fact]
          ) -> Iterator[tuple[dict[str, str], list[Fact]]]:
    depth = len(chosen)
    if depth == len(body):
        yield bindings, chosen
        return
    lit = body[depth]
    for f in sources[depth].candidates(lit, bindings):
        extended = unify(lit, f, bindings)
        if extended is not None:
            chosen.append(f)
            yield from _join(body, sources, extended, chosen)
            chosen.pop()


def check_arities(rules: Iterable[Rule], facts: Iterable[Fact]) -> dict[str, int]:
    arity: dict[str, int] = {}

    def note(pred: str, n: int, where: str) -> None:
        if arity.setdefault(pred, n) != n:
            raise ArityMismatch(f"{where}: predicate {pred} used with arity {n}, elsewhere {arity[pred]}")

    for f in facts:
        note(f.predicate, len(f.args), f"fact {f}")
    for r in rules:
        for lit in (r.head, *r.body):
            note(lit.predicate, len(lit.terms), f"rule {r.label}")
    return arity


def evaluate(rules: Sequence[Rule], base: FactBase | Iterable[Fact]) -> Evaluation:
    """Least fixpoint of ``rules`` over ``base`` by semi-naive iteration.

    Every distinct body instantiation of every rule is recorded as a trace.
    Round one treats the whole base as the delta; afterwards each round
    joins with at least one fact that is new since the previous round.
    Derivations of facts already in the base are not reported.
    """
    base_facts = set(base.facts if isinstance(base, FactBase) else base)
    check_arities(rules, base_facts)
    old = _Index()
    total = _Index(base_facts)
    known = set(base_facts)
    delta = set(base_facts)
    derived: set[Fact] = set()
    traces: dict[tuple, DerivationTrace] = {}
    rounds = 0
    while delta:
        rounds += 1
        delta_index = _Index(delta)
        new: set[Fact] = set()
        for rule in rules:
            n = len(rule.body)
            for i, lit in enumerate(rule.body):
                if lit.predicate not in delta_index.by_pred:
                    continue
                sources = [old] * i + [delta_index] + [total] * (n - i - 1)
                for bindings, premises in _join(rule.body, sources, {}, []):
                    head = ground(rule.head, bindings)
                    if head in base_facts:
                        continue
                    key = (rule.label, head, tuple(sorted(premises)))
                    if key not in traces:
                        traces[key] = DerivationTrace(head, rule.label, tuple(premises))
                    if head not in known:
                        new.add(head)
                        known.add(head)
        old.add(delta)
        total.add(new)
        derived |= new
        delta = new
    ordered = sorted(traces.values(), key=lambda t: (t.derived, t.rule_label, t.premises))
    return Evaluation(derived, ordered, rounds)


def replay(trace: DerivationTrace, rules: Sequence[Rule]) -> bool:
    """True iff the trace's rule maps its premises onto its derived fact."""
    rule = next((r for r in rules if r.label == trace.rule_label), None)
    if rule is None or len(rule.body) != len(trace.premises):
        return False
    bindings: dict[str, str] | None = {}
    for lit, prem in zip(rule.body, trace.premises):
        bindings = unify(lit, prem, bindings)
        if bindings is None:
            return False
    return ground(rule.head, bindings) == trace.derived
