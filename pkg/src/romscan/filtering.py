"""Reduction of raw usages to sensitive-identifier candidates.

A usage becomes a candidate when an identifier keyword occurs in its
resolved name (heuristic 1, applied to literal fragments for partial
names) or in any method name on its call chain (heuristic 2).
Candidates are then corroborated against strings extracted from the
image outside the code units and against the usage locations
themselves, anchored partial names are expanded through the string
index, and names that advertise a foreign brand are demoted as likely
spoofs.  Demotion never deletes: demoted candidates stay in the output
with their demotion reason attached.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .common import ConfigError
from .config import IDENTIFIER_PRIORITY, IdentifierClass, ScanConfig

EVIDENCE_NAME_KEYWORD = "name-keyword"
EVIDENCE_CHAIN_KEYWORD = "context-method-keyword"
EVIDENCE_BINARY = "corroborated-binary"
EVIDENCE_PATH = "system-component-path"

ORIGIN_RESOLVED = "resolved"
ORIGIN_PATTERN = "pattern"
ORIGIN_EXPANSION = "pattern-expansion"

DEMOTION_UNCORROBORATED = "uncorroborated"
DEMOTION_BRAND_SPOOF = "brand-spoof"


@dataclass
class SensitiveCandidate:
    name: str                          # property/setting name; '*' marks holes in patterns
    identifier: IdentifierClass
    kind: str                          # "property" | "setting"
    matched_keyword: str = ""
    origin: str = ORIGIN_RESOLVED
    fragments: tuple = ()
    usages: list = field(default_factory=list)
    namespaces: tuple[str, ...] = ()   # settings only
    corroborated: bool = False
    evidence: tuple[str, ...] = ()
    spoof_marker: str | None = None
    spoof_brand: str | None = None

    @property
    def demotion(self) -> str | None:
        if self.spoof_marker is not None:
            return DEMOTION_BRAND_SPOOF
        if not self.corroborated:
            return DEMOTION_UNCORROBORATED
        return None

    @property
    def units(self) -> tuple[str, ...]:
        """Code units the usages come from (first three path segments)."""
        seen = set()
        for u in self.usages:
            parts = u.source_path.split("/")
            seen.add("/".join(parts[:3]))
        return tuple(sorted(seen))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "identifier": self.identifier.value,
            "kind": self.kind,
            "matched_keyword": self.matched_keyword,
            "origin": self.origin,
            "namespaces": list(self.namespaces),
            "corroborated": self.corroborated,
            "evidence": list(self.evidence),
            "demotion": self.demotion,
            "units": list(self.units),
            "usages": [u.to_dict() for u in self.usages],
        }


def classify_identifier(name: str, config: ScanConfig) -> IdentifierClass | None:
    """Highest-priority identifier class whose keyword occurs in the name."""
    match = _match_text(name, config)
    return match[0] if match else None


def _match_text(text: str, config: ScanConfig) -> tuple[IdentifierClass, str] | None:
    lowered = text.lower()
    for ident in IDENTIFIER_PRIORITY:
        for keyword in config.keywords.get(ident, ()):
            if keyword in lowered:
                return ident, keyword
    return None


def _match_fragments(fragments: tuple, config: ScanConfig) -> tuple[IdentifierClass, str] | None:
    literal = " ".join(f for f in fragments if isinstance(f, str))
    return _match_text(literal, config) if literal else None


def _chain_method_names(call_chain: tuple[str, ...]) -> list[str]:
    names = []
    for key in call_chain:
        _, _, rest = key.partition("->")
        names.append(rest.split("(", 1)[0] if rest else key)
    return names


def _match_chain(call_chain: tuple[str, ...], config: ScanConfig) -> tuple[IdentifierClass, str] | None:
    joined = " ".join(_chain_method_names(call_chain))
    return _match_text(joined, config) if joined else None


def _pattern_text(fragments: tuple) -> str:
    return "".join("*" if f is None else f for f in fragments)


def _pattern_regex(fragments: tuple) -> re.Pattern:
    return re.compile("".join(".*" if f is None else re.escape(f) for f in fragments))


def _rank(ident: IdentifierClass) -> int:
    return IDENTIFIER_PRIORITY.index(ident)


def keyword_filter(usages: list, config: ScanConfig) -> tuple[list[SensitiveCandidate], list[SensitiveCandidate]]:
    """Split usages into property and setting candidates by the two keyword heuristics."""
    for ident in IDENTIFIER_PRIORITY:
        if not config.keywords.get(ident):
            raise ConfigError(f"empty keyword list for identifier class {ident.value}")
    props: dict[tuple, SensitiveCandidate] = {}
    sets: dict[tuple, SensitiveCandidate] = {}
    for u in usages:
        res = u.name
        if res.status == "resolved":
            name = res.value
            origin = ORIGIN_RESOLVED
            fragments: tuple = ()
            name_hit = _match_text(name, config)
        elif res.status == "partial":
            name = _pattern_text(res.fragments)
            origin = ORIGIN_PATTERN
            fragments = res.fragments
            name_hit = _match_fragments(res.fragments, config)
        else:
            name = "*"
            origin = ORIGIN_PATTERN
            fragments = (None,)
            name_hit = None
        chain_hit = _match_chain(u.call_chain, config)
        if name_hit is None and chain_hit is None:
            continue
        evidence = set()
        if name_hit is not None:
            evidence.add(EVIDENCE_NAME_KEYWORD)
        if chain_hit is not None:
            evidence.add(EVIDENCE_CHAIN_KEYWORD)
        # priority-first across both heuristics; the name match wins ties
        hits = [h for h in (name_hit, chain_hit) if h is not None]
        ident, keyword = min(hits, key=lambda h: _rank(h[0]))
        table = props if u.kind == "property" else sets
        key = (name, ident)
        cand = table.get(key)
        if cand is None:
            cand = SensitiveCandidate(
                name=name, identifier=ident, kind=u.kind,
                matched_keyword=keyword, origin=origin, fragments=fragments,
                corroborated=(u.kind == "setting"),
            )
            table[key] = cand
        cand.usages.append(u)
        cand.evidence = tuple(sorted(set(cand.evidence) | evidence))
        if u.kind == "setting":
            cand.namespaces = tuple(sorted(set(cand.namespaces) | {u.namespace}))

    def ordered(table: dict) -> list[SensitiveCandidate]:
        return [table[k] for k in sorted(table, key=lambda k: (k[0], _rank(k[1])))]

    return ordered(props), ordered(sets)


def _path_corroborated(cand: SensitiveCandidate, config: ScanConfig) -> bool:
    for u in cand.usages:
        probe = "/" + u.source_path.lstrip("/")
        if any(prefix in probe for prefix in config.system_component_prefixes):
            return True
    return False


def _anchored(fragments: tuple, config: ScanConfig) -> bool:
    """Patterns expand only when they start with a literal property namespace."""
    return bool(fragments) and isinstance(fragments[0], str) \
        and fragments[0].startswith(config.active_prefixes())


def corroborate(candidates: list[SensitiveCandidate], string_index: set[str],
                config: ScanConfig) -> list[SensitiveCandidate]:
    """Attach corroboration evidence; expand anchored patterns through the string index.

    Returns a new candidate list: pattern candidates that match indexed
    strings are replaced with one resolved candidate per match.
    """
    out: list[SensitiveCandidate] = []
    for cand in candidates:
        evidence = set(cand.evidence)
        if _path_corroborated(cand, config):
            evidence.add(EVIDENCE_PATH)
        if cand.origin == ORIGIN_PATTERN:
            matches: list[str] = []
            if _anchored(cand.fragments, config):
                regex = _pattern_regex(cand.fragments)
                matches = sorted(s for s in string_index if regex.fullmatch(s))
            if matches:
                for name in matches:
                    hit = _match_text(name, config) or (cand.identifier, cand.matched_keyword)
                    expansion = SensitiveCandidate(
                        name=name, identifier=hit[0], kind="property",
                        matched_keyword=hit[1],
                        origin=ORIGIN_EXPANSION, fragments=cand.fragments,
                        usages=list(cand.usages),
                        corroborated=True,
                        evidence=tuple(sorted(evidence | {EVIDENCE_BINARY})),
                    )
                    out.append(expansion)
                continue
            cand.corroborated = EVIDENCE_PATH in evidence
            cand.evidence = tuple(sorted(evidence))
            out.append(cand)
            continue
        if cand.name in string_index:
            evidence.add(EVIDENCE_BINARY)
        cand.corroborated = bool({EVIDENCE_BINARY, EVIDENCE_PATH} & evidence)
        cand.evidence = tuple(sorted(evidence))
        out.append(cand)
    merged: dict[tuple, SensitiveCandidate] = {}
    for cand in out:
        key = (cand.name, cand.identifier)
        prev = merged.get(key)
        if prev is None:
            merged[key] = cand
            continue
        prev.usages.extend(u for u in cand.usages if u not in prev.usages)
        prev.corroborated = prev.corroborated or cand.corroborated
        prev.evidence = tuple(sorted(set(prev.evidence) | set(cand.evidence)))
        if cand.origin == ORIGIN_RESOLVED:
            # a direct resolved usage outranks a pattern expansion of the same name
            prev.origin = ORIGIN_RESOLVED
            prev.fragments = ()
    return [merged[k] for k in sorted(merged, key=lambda k: (k[0], _rank(k[1])))]


def brand_spoof_filter(candidates: list[SensitiveCandidate], brand: str,
                       config: ScanConfig) -> None:
    """Mark candidates whose name advertises a different vendor's namespace."""
    own = brand.lower()
    own = config.brand_markers.get(own, own)
    for cand in candidates:
        lowered = cand.name.lower()
        for marker, owner in sorted(config.brand_markers.items()):
            if marker in lowered and owner != own:
                cand.spoof_marker = marker
                cand.spoof_brand = owner
                break


def filter_usages(usages: list, string_index: set[str], brand: str,
                  config: ScanConfig) -> tuple[list[SensitiveCandidate], list[SensitiveCandidate]]:
    """Full reduction: keywords, corroboration, expansion, spoof demotion."""
    props, sets = keyword_filter(usages, config)
    props = corroborate(props, string_index, config)
    brand_spoof_filter(props, brand, config)
    brand_spoof_filter(sets, brand, config)
    return props, sets
