"""Synthetic-device model with brute-force read oracles.

A SimDeviceSpec bundles everything that determines whether an unprivileged
app can read a value on a device: SELinux policy, property contexts, the
property store itself, the settings store, framework setting definitions,
and the SDK level.  The oracles here answer readability questions by naive
exhaustive expansion, sharing no resolution or verdict code with the
analyzer modules, so the two sides can be checked against each other on
randomized inputs.  A factory-reset diff over snapshot pairs finds values
that survive a reset.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .common import SimSpecError
from .selinux import AccessRule, ContextEntry, SELinuxPolicy
from .settings import SETTINGS_NAMESPACES, SettingDefinition

SIM_DEFAULT_TYPE = "default_prop"
SIM_SOURCE = "<sim>"

SNAPSHOT_LABELS = ("before-reset", "after-reset")
RESET_MIN_VALUE_LENGTH = 6


# ---------------------------------------------------------------------------
# the device model


@dataclass
class SimDeviceSpec:
    sdk_version: int
    properties: dict[str, str]
    contexts: list[ContextEntry]
    policy: SELinuxPolicy
    settings: dict[tuple[str, str], str]
    setting_defs: list[SettingDefinition]
    _expanded: dict | None = field(default=None, repr=False, compare=False, init=False)

    def augmented_contexts(self) -> list[ContextEntry]:
        """The configured entries plus a catch-all, so every name labels."""
        entries = list(self.contexts)
        if not any(e.pattern == "*" for e in entries):
            entries.append(ContextEntry("*", SIM_DEFAULT_TYPE, SIM_SOURCE, len(entries) + 1))
        return entries

    def expanded_rules(self) -> dict[tuple[str, str, str], frozenset[str]]:
        if self._expanded is None:
            self._expanded = expand_policy_rules(self.policy)
        return self._expanded


# ---------------------------------------------------------------------------
# naive policy expansion (independent of the analyzer's resolver)


def _eval_members(expr, members: dict[str, frozenset[str]],
                  universe: frozenset[str]) -> frozenset[str]:
    """Set algebra over the current substitution table, one level at a time."""
    if isinstance(expr, str):
        return members.get(expr, frozenset({expr}))
    if not isinstance(expr, list) or not expr:
        return frozenset()
    head = expr[0]
    if head == "and":
        out = _eval_members(expr[1], members, universe) if len(expr) > 1 else frozenset()
        for operand in expr[2:]:
            out &= _eval_members(operand, members, universe)
        return out
    if head == "or":
        out = frozenset()
        for operand in expr[1:]:
            out |= _eval_members(operand, members, universe)
        return out
    if head == "not":
        inner = frozenset()
        for operand in expr[1:]:
            inner |= _eval_members(operand, members, universe)
        return universe - inner
    if head == "xor":
        out = frozenset()
        for operand in expr[1:]:
            out ^= _eval_members(operand, members, universe)
        return out
    out = frozenset()
    for operand in expr:
        out |= _eval_members(operand, members, universe)
    return out


def set_memberships(policy: SELinuxPolicy) -> dict[str, frozenset[str]]:
    """Concrete members of every policy name by repeated substitution.

    Starts every set name empty and re-substitutes all definitions until the
    table stops changing, capped at |definitions|+1 rounds (enough for any
    acyclic reference graph; cyclic inputs are rejected at generation time).
    """
    universe = frozenset(policy.types)
    members: dict[str, frozenset[str]] = {t: frozenset({t}) for t in policy.types}
    for name in policy.attributes | set(policy.attribute_defs):
        members.setdefault(name, frozenset())
    for _ in range(len(policy.attribute_defs) + 1):
        changed = False
        for name, expr in policy.attribute_defs.items():
            got = _eval_members(expr, members, universe)
            if got != members[name]:
                members[name] = got
                changed = True
        if not changed:
            break
    return members


def expand_policy_rules(policy: SELinuxPolicy) -> dict[tuple[str, str, str], frozenset[str]]:
    """Every allow rule flattened to concrete (subject, target, class) grants."""
    members = set_memberships(policy)
    flat: dict[tuple[str, str, str], set[str]] = {}
    for rule in policy.allows:
        subjects = members.get(rule.subject, frozenset({rule.subject}))
        if rule.target == "self":
            pairs = [(s, s) for s in subjects]
        else:
            targets = members.get(rule.target, frozenset({rule.target}))
            pairs = [(s, t) for s in subjects for t in targets]
        for s, t in pairs:
            flat.setdefault((s, t, rule.tclass), set()).update(rule.perms)
    return {key: frozenset(perms) for key, perms in flat.items()}


def naive_context_match(entries: list[ContextEntry], name: str) -> ContextEntry | None:
    """Reference longest-match: score every entry, no early exit, no index.

    Exact entries outrank every prefix; longer prefixes outrank shorter;
    remaining ties keep list order.
    """
    best = None
    best_key = None
    for position, entry in enumerate(entries):
        if entry.pattern.endswith("*"):
            prefix = entry.pattern[:-1]
            if not name.startswith(prefix):
                continue
            key = (0, len(prefix), -position)
        else:
            if entry.pattern != name:
                continue
            key = (1, len(entry.pattern), -position)
        if best_key is None or key > best_key:
            best_key = key
            best = entry
    return best


def simulate_property_read(spec: SimDeviceSpec, name: str, subject: str) -> bool:
    """Can `subject` read property `name`?  Default is denial."""
    if name not in spec.properties:
        raise SimSpecError(f"unknown property {name!r}")
    entry = naive_context_match(spec.augmented_contexts(), name)
    grants = spec.expanded_rules().get((subject, entry.selinux_type, "file"))
    return bool(grants) and "read" in grants


def simulate_setting_read(spec: SimDeviceSpec, namespace: str, name: str) -> bool:
    """Can an unprivileged app read this setting?  Independent rule table."""
    if (namespace, name) not in spec.settings:
        raise SimSpecError(f"unknown setting {namespace}/{name}")
    definition = None
    for d in spec.setting_defs:
        if d.namespace == namespace and d.name == name:
            definition = d
            break
    if definition is None:
        return True
    marked_readable = "Readable" in definition.annotations
    marked_system = "SystemApi" in definition.annotations
    if marked_readable and marked_system:
        return False
    if spec.sdk_version >= 31:
        return marked_readable
    return not marked_system


# ---------------------------------------------------------------------------
# factory-reset diff


@dataclass
class Snapshot:
    label: str                       # before-reset | after-reset
    properties: dict[str, str]
    settings: dict[tuple[str, str], str]


def reset_diff(before: Snapshot, after: Snapshot,
               min_len: int = RESET_MIN_VALUE_LENGTH) -> list[str]:
    """Keys whose non-empty values survive a factory reset byte-identically.

    Values shorter than min_len are ignored: short flags and counters match
    across resets by coincidence.  Keys render as "property:<name>" and
    "setting:<namespace>/<name>"; the result is sorted.
    """
    survivors = []
    for name, value in before.properties.items():
        if value and len(value) >= min_len and after.properties.get(name) == value:
            survivors.append(f"property:{name}")
    for (namespace, name), value in before.settings.items():
        if value and len(value) >= min_len and after.settings.get((namespace, name)) == value:
            survivors.append(f"setting:{namespace}/{name}")
    return sorted(survivors)


def snapshot_from_json(text: str) -> Snapshot:
    raw = json.loads(text)
    label = raw.get("label")
    if label not in SNAPSHOT_LABELS:
        raise SimSpecError(f"snapshot label must be one of {SNAPSHOT_LABELS}, got {label!r}")
    settings = {}
    for item in raw.get("settings", []):
        settings[(item["namespace"], item["name"])] = item["value"]
    return Snapshot(label=label, properties=dict(raw.get("properties", {})),
                    settings=settings)


def load_snapshot(path: Path) -> Snapshot:
    return snapshot_from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# validation


def validate_spec(spec: SimDeviceSpec) -> None:
    """Raise SimSpecError on the first structural problem."""
    if spec.sdk_version < 1:
        raise SimSpecError("sdk_version must be >= 1")
    declared = spec.policy.types | spec.policy.attributes | set(spec.policy.attribute_defs)
    for entry in spec.contexts:
        if "*" in entry.pattern[:-1]:
            raise SimSpecError(f"context pattern {entry.pattern!r} has an interior wildcard")
        if not entry.selinux_type:
            raise SimSpecError(f"context pattern {entry.pattern!r} lacks a type")
        if entry.selinux_type not in declared:
            raise SimSpecError(f"context type {entry.selinux_type!r} is not declared")
    for name in spec.properties:
        if not name:
            raise SimSpecError("empty property name")
        if naive_context_match(spec.augmented_contexts(), name) is None:
            raise SimSpecError(f"property {name!r} matches no context entry")
    for rule in spec.policy.allows + spec.policy.neverallows:
        if rule.subject not in declared:
            raise SimSpecError(f"rule subject {rule.subject!r} is not declared")
        if rule.target != "self" and rule.target not in declared:
            raise SimSpecError(f"rule target {rule.target!r} is not declared")
        if not rule.perms:
            raise SimSpecError("rule with empty permission set")
    _check_acyclic(spec.policy)
    for namespace, name in spec.settings:
        if namespace not in SETTINGS_NAMESPACES:
            raise SimSpecError(f"unknown settings namespace {namespace!r}")
        if not name:
            raise SimSpecError("empty setting name")
    for d in spec.setting_defs:
        if d.namespace not in SETTINGS_NAMESPACES:
            raise SimSpecError(f"unknown settings namespace {d.namespace!r} in definition")


def _expr_refs(expr) -> set[str]:
    if isinstance(expr, str):
        return set() if expr in ("and", "or", "not", "xor") else {expr}
    refs: set[str] = set()
    if isinstance(expr, list):
        for item in expr:
            refs |= _expr_refs(item)
    return refs


def _check_acyclic(policy: SELinuxPolicy) -> None:
    graph = {name: _expr_refs(expr) & set(policy.attribute_defs)
             for name, expr in policy.attribute_defs.items()}
    done: set[str] = set()
    in_progress: set[str] = set()

    def visit(node: str) -> None:
        if node in done:
            return
        if node in in_progress:
            raise SimSpecError(f"attribute-set definitions form a cycle through {node!r}")
        in_progress.add(node)
        for ref in graph.get(node, ()):
            visit(ref)
        in_progress.discard(node)
        done.add(node)

    for name in graph:
        visit(name)


# ---------------------------------------------------------------------------
# serialization: JSON (for hand-authored fixtures) and native policy formats


def spec_to_json(spec: SimDeviceSpec) -> str:
    doc = {
        "sdk_version": spec.sdk_version,
        "properties": dict(sorted(spec.properties.items())),
        "contexts": [{"pattern": e.pattern, "selinux_type": e.selinux_type}
                     for e in spec.contexts],
        "policy": {
            "types": sorted(spec.policy.types),
            "attributes": sorted(spec.policy.attributes),
            "attribute_defs": {name: expr for name, expr
                               in sorted(spec.policy.attribute_defs.items())},
            "rules": [r.to_dict() for r in spec.policy.allows + spec.policy.neverallows],
        },
        "settings": [{"namespace": ns, "name": name, "value": value}
                     for (ns, name), value in sorted(spec.settings.items())],
        "setting_defs": [d.to_dict() for d in spec.setting_defs],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def spec_from_json(text: str) -> SimDeviceSpec:
    raw = json.loads(text)
    policy = SELinuxPolicy()
    pol = raw.get("policy", {})
    policy.types = set(pol.get("types", []))
    policy.attributes = set(pol.get("attributes", []))
    policy.attribute_defs = dict(pol.get("attribute_defs", {}))
    for r in pol.get("rules", []):
        rule = AccessRule(kind=r.get("kind", "allow"), subject=r["subject"],
                          target=r["target"], tclass=r.get("class", "file"),
                          perms=frozenset(r["perms"]), source=SIM_SOURCE)
        (policy.allows if rule.kind == "allow" else policy.neverallows).append(rule)
    contexts = [ContextEntry(c["pattern"], c["selinux_type"], SIM_SOURCE, i + 1)
                for i, c in enumerate(raw.get("contexts", []))]
    settings = {(s["namespace"], s["name"]): s["value"]
                for s in raw.get("settings", [])}
    defs = [SettingDefinition(namespace=d["namespace"], name=d["name"],
                              field_name=d.get("field_name", d["name"].upper()),
                              class_name=d.get("class_name", ""),
                              annotations=tuple(d.get("annotations", [])))
            for d in raw.get("setting_defs", [])]
    spec = SimDeviceSpec(sdk_version=int(raw["sdk_version"]),
                         properties=dict(raw.get("properties", {})),
                         contexts=contexts, policy=policy,
                         settings=settings, setting_defs=defs)
    validate_spec(spec)
    return spec


def _render_expr(expr) -> str:
    if isinstance(expr, str):
        return expr
    return "(" + " ".join(_render_expr(item) for item in expr) + ")"


def spec_to_cil(spec: SimDeviceSpec) -> str:
    """Render the spec's policy as CIL so it can re-enter via the parser."""
    lines = []
    for name in sorted(spec.policy.types):
        lines.append(f"(type {name})")
    for name in sorted(spec.policy.attributes):
        lines.append(f"(typeattribute {name})")
    for name, expr in spec.policy.attribute_defs.items():
        lines.append(f"(typeattributeset {name} {_render_expr(expr)})")
    for rule in spec.policy.allows + spec.policy.neverallows:
        perms = " ".join(sorted(rule.perms))
        lines.append(f"({rule.kind} {rule.subject} {rule.target} ({rule.tclass} ({perms})))")
    return "\n".join(lines) + "\n"


def spec_to_contexts(spec: SimDeviceSpec) -> str:
    """Render the spec's context entries in property_contexts format."""
    lines = [f"{e.pattern} u:object_r:{e.selinux_type}:s0" for e in spec.contexts]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# randomized spec generation


@dataclass(frozen=True)
class SimLimits:
    max_types: int = 50
    max_sets: int = 10
    max_rules: int = 200
    max_properties: int = 100
    max_depth: int = 3


SIM_SUBJECTS = ("untrusted_app", "system_app")

_NAME_PREFIXES = ("ro.", "persist.", "vendor.", "sys.", "gsm.")
_FILE_PERMS = ("read", "getattr", "map", "open", "write")


def generate_random_spec(seed: int, limits: SimLimits = SimLimits()) -> SimDeviceSpec:
    """Deterministic random device model within the given size limits."""
    rng = random.Random(seed)
    domains = list(SIM_SUBJECTS)
    for extra in ("radio", "platform_app"):
        if rng.random() < 0.5:
            domains.append(extra)
    prop_type_count = rng.randint(1, max(1, limits.max_types - len(domains) - 1))
    prop_types = [f"prop_t{i:02d}" for i in range(prop_type_count)]
    prop_types.append(SIM_DEFAULT_TYPE)

    policy = SELinuxPolicy()
    policy.types = set(domains) | set(prop_types)

    attrs: list[str] = []
    for i in range(rng.randint(0, limits.max_sets)):
        name = f"attr_{i:02d}"
        pool = prop_types + domains + attrs
        expr = _random_expr(rng, pool, rng.randint(0, limits.max_depth))
        policy.attributes.add(name)
        policy.attribute_defs[name] = expr
        attrs.append(name)

    subjects_pool = domains + attrs
    targets_pool = prop_types + attrs
    for _ in range(rng.randint(1, limits.max_rules)):
        subject = rng.choice(subjects_pool)
        target = rng.choice(targets_pool)
        if rng.random() < 0.9:
            tclass = "file"
            count = rng.randint(1, len(_FILE_PERMS))
            perms = frozenset(rng.sample(_FILE_PERMS, count))
        else:
            tclass = "property_service"
            perms = frozenset({"set"})
        kind = "neverallow" if rng.random() < 0.03 else "allow"
        rule = AccessRule(kind=kind, subject=subject, target=target,
                          tclass=tclass, perms=perms, source=SIM_SOURCE)
        (policy.allows if kind == "allow" else policy.neverallows).append(rule)

    properties: dict[str, str] = {}
    for i in range(rng.randint(1, limits.max_properties)):
        name = f"{rng.choice(_NAME_PREFIXES)}gen.p{i:03d}"
        properties[name] = f"value-{rng.randrange(10**9):09d}"

    contexts: list[ContextEntry] = []
    line_no = 0
    names = list(properties)
    for name in names:
        roll = rng.random()
        if roll < 0.3:
            line_no += 1
            contexts.append(ContextEntry(name, rng.choice(prop_types), SIM_SOURCE, line_no))
        elif roll < 0.75:
            dots = [i for i, c in enumerate(name) if c == "."]
            cut = rng.choice(dots) + 1
            line_no += 1
            contexts.append(ContextEntry(name[:cut] + "*", rng.choice(prop_types),
                                         SIM_SOURCE, line_no))
        # else: leave the name for the catch-all entry
    if rng.random() < 0.5:
        line_no += 1
        contexts.append(ContextEntry("*", SIM_DEFAULT_TYPE, SIM_SOURCE, line_no))

    settings: dict[tuple[str, str], str] = {}
    setting_defs: list[SettingDefinition] = []
    annotation_choices = ((), ("Readable",), ("SystemApi",), ("Readable", "SystemApi"))
    for i in range(rng.randint(1, 30)):
        namespace = rng.choice(SETTINGS_NAMESPACES)
        name = f"gen_key_{i:02d}"
        settings[(namespace, name)] = f"v{rng.randrange(10**6):06d}"
        if rng.random() < 0.6:
            setting_defs.append(SettingDefinition(
                namespace=namespace, name=name, field_name=name.upper(),
                class_name=f"Landroid/provider/Settings${namespace};",
                annotations=rng.choice(annotation_choices)))

    spec = SimDeviceSpec(sdk_version=rng.choice((28, 29, 30, 31, 32, 33, 34)),
                         properties=properties, contexts=contexts, policy=policy,
                         settings=settings, setting_defs=setting_defs)
    return spec


def _random_expr(rng: random.Random, pool: list[str], depth: int):
    if depth == 0 or rng.random() < 0.5:
        count = rng.randint(1, min(3, len(pool)))
        return rng.sample(pool, count)
    op = rng.choice(("and", "or", "not"))
    if op == "not":
        return ["not", _random_expr(rng, pool, depth - 1)]
    return [op, _random_expr(rng, pool, depth - 1), _random_expr(rng, pool, depth - 1)]
