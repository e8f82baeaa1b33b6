"""Mandatory-access-control side of the scan.

Answers one question per property name: can an unprivileged app domain read
the file that backs it?  The inputs are the image's property_contexts files
(name -> label) and its policy, either as CIL source or as a textual dump of
allow rules.  Attribute sets are resolved to concrete types so that grants
expressed through type attributes, including set algebra such as
(and (a) (not (b))), are credited to every member type.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .common import DiagnosticSink, PolicyParseError

PROPERTY_FILE_CLASS = "file"
READ_PERM = "read"
STRICT_READ_PERMS = frozenset({"read", "getattr", "map", "open"})

# Conventional label given to property names no context entry claims.
DEFAULT_PROPERTY_TYPE = "default_prop"

VERDICT_EXPLICIT = "explicit-allow"
VERDICT_CHAIN = "attribute-set-chain"
VERDICT_DEFAULT = "default-context"
VERDICT_SAFE = "not-vulnerable"


# ---------------------------------------------------------------------------
# property_contexts


@dataclass(frozen=True)
class ContextEntry:
    pattern: str
    selinux_type: str
    source: str
    line_no: int

    @property
    def is_prefix(self) -> bool:
        return self.pattern.endswith("*")

    def matches(self, name: str) -> bool:
        if self.is_prefix:
            return name.startswith(self.pattern[:-1])
        return name == self.pattern


def parse_property_contexts(text: str, source: str = "",
                            sink: DiagnosticSink | None = None) -> list[ContextEntry]:
    entries: list[ContextEntry] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            if sink:
                sink.emit("context-line-malformed", f"line {line_no}: {raw!r}", source)
            continue
        pattern, context = parts[0], parts[1]
        if "*" in pattern[:-1]:
            # only terminal prefix wildcards have defined matching semantics
            if sink:
                sink.emit("context-pattern-interior-wildcard", f"line {line_no}: {pattern!r}", source)
            continue
        fields = context.split(":")
        if len(fields) < 3:
            if sink:
                sink.emit("context-label-malformed", f"line {line_no}: {context!r}", source)
            continue
        entries.append(ContextEntry(pattern, fields[2], source, line_no))
    return entries


def match_property_context(entries: list[ContextEntry], name: str) -> ContextEntry | None:
    """Exact entry wins; else the longest matching prefix; ties keep file order."""
    best: ContextEntry | None = None
    for entry in entries:
        if not entry.matches(name):
            continue
        if not entry.is_prefix:
            return entry
        if best is None or len(entry.pattern) > len(best.pattern):
            best = entry
    return best


def load_property_contexts(root: Path, rel_paths: list[str],
                           sink: DiagnosticSink | None = None) -> list[ContextEntry]:
    entries: list[ContextEntry] = []
    for rel in rel_paths:
        path = Path(root) / rel
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            raise PolicyParseError(f"cannot read {path}: {exc}") from exc
        entries.extend(parse_property_contexts(text, source=rel, sink=sink))
    return entries


# ---------------------------------------------------------------------------
# policy model


@dataclass(frozen=True)
class AccessRule:
    kind: str                        # "allow" | "neverallow"
    subject: str
    target: str                      # type, attribute, or "self"
    tclass: str
    perms: frozenset[str]
    source: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "subject": self.subject,
            "target": self.target,
            "class": self.tclass,
            "perms": sorted(self.perms),
        }


@dataclass
class SELinuxPolicy:
    types: set[str] = field(default_factory=set)
    attributes: set[str] = field(default_factory=set)
    attribute_defs: dict[str, object] = field(default_factory=dict)
    allows: list[AccessRule] = field(default_factory=list)
    neverallows: list[AccessRule] = field(default_factory=list)

    def merge(self, other: SELinuxPolicy) -> None:
        self.types |= other.types
        self.attributes |= other.attributes
        for name, expr in other.attribute_defs.items():
            if name in self.attribute_defs:
                existing = self.attribute_defs[name]
                self.attribute_defs[name] = ["or", existing, expr]
            else:
                self.attribute_defs[name] = expr
        self.allows.extend(other.allows)
        self.neverallows.extend(other.neverallows)


# ---------------------------------------------------------------------------
# CIL parsing


_SEXPR_TOKEN = re.compile(r";[^\n]*|[()]|[^\s();]+")


def parse_sexprs(text: str, source: str = "") -> list:
    """Parse all top-level s-expressions; ';' starts a comment."""
    where = source or "policy text"
    forms: list = []
    stack: list[list] = []
    open_offsets: list[int] = []
    for match in _SEXPR_TOKEN.finditer(text):
        tok = match.group()
        if tok.startswith(";"):
            continue
        if tok == "(":
            node: list = []
            if stack:
                stack[-1].append(node)
            else:
                forms.append(node)
            stack.append(node)
            open_offsets.append(match.start())
        elif tok == ")":
            if not stack:
                raise PolicyParseError(
                    f"unbalanced ')' at byte {match.start()} in {where}")
            stack.pop()
            open_offsets.pop()
        else:
            if stack:
                stack[-1].append(tok)
            else:
                raise PolicyParseError(
                    f"token {tok!r} outside any form at byte {match.start()} in {where}")
    if stack:
        raise PolicyParseError(
            f"unbalanced '(' at byte {open_offsets[-1]} in {where}")
    return forms


def _rule_from_form(form: list, source: str, sink: DiagnosticSink | None) -> AccessRule | None:
    # (allow subject target (class (perm ...)))
    if len(form) != 4 or not isinstance(form[1], str) or not isinstance(form[2], str):
        if sink:
            sink.emit("policy-rule-malformed", f"{form!r}", source)
        return None
    spec = form[3]
    if not (isinstance(spec, list) and len(spec) == 2 and isinstance(spec[0], str)
            and isinstance(spec[1], list) and spec[1]
            and all(isinstance(p, str) for p in spec[1])):
        if sink:
            sink.emit("policy-rule-malformed", f"{form!r}", source)
        return None
    return AccessRule(kind=form[0], subject=form[1], target=form[2],
                      tclass=spec[0], perms=frozenset(spec[1]), source=source)


def parse_cil(text: str, source: str = "",
              sink: DiagnosticSink | None = None) -> SELinuxPolicy:
    policy = SELinuxPolicy()
    for form in parse_sexprs(text, source):
        if not form or not isinstance(form[0], str):
            continue
        head = form[0]
        if head == "type" and len(form) == 2 and isinstance(form[1], str):
            policy.types.add(form[1])
        elif head == "typeattribute" and len(form) == 2 and isinstance(form[1], str):
            policy.attributes.add(form[1])
        elif head == "typeattributeset" and len(form) >= 3 and isinstance(form[1], str):
            expr = form[2] if len(form) == 3 else form[2:]
            name = form[1]
            if name in policy.attribute_defs:
                policy.attribute_defs[name] = ["or", policy.attribute_defs[name], expr]
            else:
                policy.attribute_defs[name] = expr
        elif head in ("allow", "neverallow"):
            rule = _rule_from_form(form, source, sink)
            if rule is None:
                continue
            if head == "allow":
                policy.allows.append(rule)
            else:
                policy.neverallows.append(rule)
        # every other CIL statement (expandtypeattribute, sid, context, ...)
        # carries nothing this analysis consumes
    return policy


# ---------------------------------------------------------------------------
# textual rules dump ("allow subj target:class { perms };")

_DUMP_RULE = re.compile(
    r"^\s*(allow|neverallow)\s+(\S+)\s+(\S+?):(\S+)\s*\{([^}]*)\}\s*;?\s*$"
)
_DUMP_RULE_SINGLE = re.compile(
    r"^\s*(allow|neverallow)\s+(\S+)\s+(\S+?):(\S+)\s+([A-Za-z_][\w]*)\s*;?\s*$"
)


def parse_rules_dump(text: str, source: str = "",
                     sink: DiagnosticSink | None = None) -> SELinuxPolicy:
    policy = SELinuxPolicy()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _DUMP_RULE.match(line) or _DUMP_RULE_SINGLE.match(line)
        if m is None:
            if sink:
                sink.emit("policy-dump-line-skipped", f"line {line_no}: {raw!r}", source)
            continue
        kind, subject, target, tclass, perms = m.groups()
        permset = frozenset(perms.split())
        if not permset:
            if sink:
                sink.emit("policy-dump-line-skipped", f"line {line_no}: empty permission set", source)
            continue
        rule = AccessRule(kind=kind, subject=subject, target=target, tclass=tclass,
                          perms=permset, source=source)
        # dump input carries no declarations; names appearing in rules are the
        # known universe
        policy.types.add(subject)
        if target != "self":
            policy.types.add(target)
        if kind == "allow":
            policy.allows.append(rule)
        else:
            policy.neverallows.append(rule)
    return policy


def load_policy(root: Path, rel_paths: list[str],
                sink: DiagnosticSink | None = None) -> SELinuxPolicy:
    policy = SELinuxPolicy()
    for rel in rel_paths:
        path = Path(root) / rel
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            raise PolicyParseError(f"cannot read {path}: {exc}") from exc
        if path.suffix == ".cil":
            policy.merge(parse_cil(text, source=rel, sink=sink))
        else:
            policy.merge(parse_rules_dump(text, source=rel, sink=sink))
    return policy


# ---------------------------------------------------------------------------
# attribute-set resolution


class AttributeResolver:
    """Memoized expansion of attribute names to concrete type sets.

    A name with no set definition expands to itself, so concrete types and
    names from rules-dump input resolve uniformly.  'not' complements against
    the universe of declared types.
    """

    def __init__(self, policy: SELinuxPolicy, sink: DiagnosticSink | None = None):
        self.policy = policy
        self.sink = sink
        self._memo: dict[str, frozenset[str]] = {}
        self._stack: list[str] = []

    def universe(self) -> frozenset[str]:
        return frozenset(self.policy.types)

    def expand(self, name: str) -> frozenset[str]:
        if name in self._memo:
            return self._memo[name]
        if name in self._stack:
            if self.sink:
                chain = " -> ".join(self._stack + [name])
                self.sink.emit("selinux-attribute-cycle", chain)
            return frozenset()
        expr = self.policy.attribute_defs.get(name)
        if expr is None:
            result = frozenset({name})
        else:
            self._stack.append(name)
            try:
                result = self._eval(expr)
            finally:
                self._stack.pop()
        if not self._stack:
            self._memo[name] = result
        return result

    def _eval(self, expr) -> frozenset[str]:
        if isinstance(expr, str):
            return self.expand(expr)
        if not isinstance(expr, list) or not expr:
            return frozenset()
        head = expr[0]
        if head == "and":
            result = self._eval(expr[1]) if len(expr) > 1 else frozenset()
            for operand in expr[2:]:
                result &= self._eval(operand)
            return result
        if head == "or":
            result = frozenset()
            for operand in expr[1:]:
                result |= self._eval(operand)
            return result
        if head == "not":
            inner = frozenset()
            for operand in expr[1:]:
                inner |= self._eval(operand)
            return self.universe() - inner
        if head == "xor":
            result = frozenset()
            for operand in expr[1:]:
                result ^= self._eval(operand)
            return result
        result = frozenset()
        for operand in expr:
            result |= self._eval(operand)
        return result


# ---------------------------------------------------------------------------
# read-access evaluation


def rules_granting(policy: SELinuxPolicy, resolver: AttributeResolver,
                   subject: str, object_type: str,
                   tclass: str = PROPERTY_FILE_CLASS) -> list[AccessRule]:
    matched = []
    for rule in policy.allows:
        if rule.tclass != tclass:
            continue
        if subject not in resolver.expand(rule.subject):
            continue
        if rule.target == "self":
            if object_type != subject:
                continue
        elif object_type not in resolver.expand(rule.target):
            continue
        matched.append(rule)
    return matched


def evaluate_read_access(policy: SELinuxPolicy, resolver: AttributeResolver,
                         subject: str, object_type: str,
                         strict: bool = False,
                         sink: DiagnosticSink | None = None) -> tuple[bool, list[AccessRule]]:
    declared = policy.types | policy.attributes | set(policy.attribute_defs)
    if declared and object_type not in declared:
        if sink:
            sink.emit("selinux-unknown-type", object_type)
        return False, []
    rules = rules_granting(policy, resolver, subject, object_type)
    granted: set[str] = set()
    for rule in rules:
        granted |= rule.perms
    if strict:
        return STRICT_READ_PERMS <= granted, rules
    return READ_PERM in granted, rules


# Entry every name falls back to when no configured context entry matches.
DEFAULT_CONTEXT_ENTRY = ContextEntry("*", DEFAULT_PROPERTY_TYPE, "<default>", 0)


@dataclass(frozen=True)
class PropertyAccess:
    name: str
    selinux_type: str
    context_pattern: str
    category: str                    # explicit-allow | attribute-set-chain | default-context | not-vulnerable
    readable: bool
    strict_readable: bool
    rules: tuple[AccessRule, ...]

    def readable_for(self, strict: bool) -> bool:
        return self.strict_readable if strict else self.readable

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "selinux_type": self.selinux_type,
            "context_pattern": self.context_pattern,
            "category": self.category,
            "readable": self.readable,
            "strict_readable": self.strict_readable,
            "rules": [r.to_dict() for r in self.rules],
        }


def assess_property(name: str, entries: list[ContextEntry], policy: SELinuxPolicy,
                    resolver: AttributeResolver, subject: str,
                    sink: DiagnosticSink | None = None) -> PropertyAccess:
    entry = match_property_context(entries, name) or DEFAULT_CONTEXT_ENTRY
    obj = entry.selinux_type
    readable, rules = evaluate_read_access(policy, resolver, subject, obj, sink=sink)
    strict_readable, _ = evaluate_read_access(policy, resolver, subject, obj, strict=True)
    if not readable:
        category = VERDICT_SAFE
    elif entry.pattern == "*":
        category = VERDICT_DEFAULT
    elif any(r.target == obj for r in rules):
        category = VERDICT_EXPLICIT
    else:
        category = VERDICT_CHAIN
    return PropertyAccess(name, obj, entry.pattern, category, readable, strict_readable, tuple(rules))


# ---------------------------------------------------------------------------
# neverallow checking


@dataclass(frozen=True)
class NeverallowViolation:
    neverallow_subject: str
    neverallow_target: str
    allow_subject: str
    allow_target: str
    tclass: str
    subject_types: tuple[str, ...]
    object_types: tuple[str, ...]
    permissions: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "neverallow_subject": self.neverallow_subject,
            "neverallow_object": self.neverallow_target,
            "allow_subject": self.allow_subject,
            "allow_object": self.allow_target,
            "class": self.tclass,
            "subject_types": list(self.subject_types),
            "object_types": list(self.object_types),
            "permissions": list(self.permissions),
        }


def check_neverallow(policy: SELinuxPolicy,
                     resolver: AttributeResolver) -> list[NeverallowViolation]:
    """Allow rules whose expansions intersect a neverallow on all three axes."""
    violations = []
    for never in policy.neverallows:
        never_subj = resolver.expand(never.subject)
        never_obj = resolver.expand(never.target)
        for rule in policy.allows:
            if rule.tclass != never.tclass:
                continue
            if rule.target == "self" or never.target == "self":
                continue
            subjects = never_subj & resolver.expand(rule.subject)
            if not subjects:
                continue
            objects = never_obj & resolver.expand(rule.target)
            if not objects:
                continue
            perms = never.perms & rule.perms
            if not perms:
                continue
            violations.append(NeverallowViolation(
                neverallow_subject=never.subject,
                neverallow_target=never.target,
                allow_subject=rule.subject,
                allow_target=rule.target,
                tclass=rule.tclass,
                subject_types=tuple(sorted(subjects)),
                object_types=tuple(sorted(objects)),
                permissions=tuple(sorted(perms)),
            ))
    return violations
