"""System services that relay privileged property values to apps.

A property an app domain cannot read directly can still escape through a
Binder service: a public service method reads it with system privileges and
returns it, returns a helper's copy of it, or folds it into a container the
method returns.  This module finds such relay channels in service classes
and keeps those whose property names carry identifier keywords yet are not
directly readable from app domains.  Identical flows in non-public methods
are reported as diagnostics, never as findings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .callgraph import method_index
from .common import DiagnosticSink
from .config import IdentifierClass, ScanConfig
from .filtering import classify_identifier
from .smali import IrClass, IrMethod, Op

SERVICE_BASE_CLASS = "Lcom/android/server/SystemService;"
BINDER_STUB_SUFFIX = "$Stub;"

CHANNEL_DIRECT = "direct-return"
CHANNEL_HELPER = "via-helper-return"
CHANNEL_AGGREGATE = "via-aggregate"

_CHANNEL_RANK = {CHANNEL_DIRECT: 0, CHANNEL_HELPER: 1, CHANNEL_AGGREGATE: 2}


def is_service_class(cls: IrClass, by_name: dict[str, IrClass] | None = None) -> bool:
    """True when the superclass chain reaches the platform service base or a Binder stub.

    The chain is followed through classes present in the corpus; the first
    superclass outside the corpus is still checked by name.
    """
    by_name = by_name or {}
    seen = set()
    current = cls
    while current.name not in seen:
        seen.add(current.name)
        super_name = current.super_name
        if super_name == SERVICE_BASE_CLASS or super_name.endswith(BINDER_STUB_SUFFIX):
            return True
        parent = by_name.get(super_name)
        if parent is None:
            return False
        current = parent
    return False


def find_service_classes(classes: list[IrClass]) -> list[IrClass]:
    by_name = {c.name: c for c in classes}
    return [c for c in sorted(classes, key=lambda c: c.name)
            if is_service_class(c, by_name)]


def _capture_after(method: IrMethod, invoke_index: int) -> tuple[int, str] | None:
    """The move-result pairing with the invoke at invoke_index, if any."""
    for ins in method.instructions[invoke_index + 1:]:
        if ins.op == Op.MOVE_RESULT:
            return ins.index, ins.dest
        if ins.op in (Op.INVOKE, Op.FILLED_NEW_ARRAY):
            return None
    return None


def _trace(method: IrMethod, start_index: int, start_reg: str,
           aggregate_methods: tuple[str, ...]) -> tuple[bool, bool]:
    """Straight-line forward taint from a captured value.

    Returns (value itself reaches a return-value, value is inserted into an
    aggregate whose register reaches a return-value).  Aggregate taint also
    follows results of calls on a tainted aggregate, so a builder returned
    through toString() counts as returning the aggregate.
    """
    value = {start_reg}
    aggregates: set[str] = set()
    returned = False
    aggregate_returned = False
    pending_aggregate = False
    for ins in method.instructions[start_index:]:
        if ins.op == Op.MOVE:
            if ins.idx_reg is None and ins.src in value:
                value.add(ins.dest)
            else:
                value.discard(ins.dest)
            if ins.idx_reg is None and ins.src in aggregates:
                aggregates.add(ins.dest)
            else:
                aggregates.discard(ins.dest)
        elif ins.op == Op.INVOKE:
            pending_aggregate = False
            if ins.regs:
                if (ins.method is not None and ins.method.name in aggregate_methods
                        and any(r in value for r in ins.regs[1:])):
                    aggregates.add(ins.regs[0])
                if ins.regs[0] in aggregates:
                    pending_aggregate = True
        elif ins.op == Op.MOVE_RESULT:
            value.discard(ins.dest)
            if pending_aggregate:
                aggregates.add(ins.dest)
            else:
                aggregates.discard(ins.dest)
            pending_aggregate = False
        elif ins.op == Op.RETURN_VALUE:
            if ins.src in value:
                returned = True
            if ins.src in aggregates:
                aggregate_returned = True
        else:
            if ins.op == Op.FILLED_NEW_ARRAY:
                pending_aggregate = False
            if ins.dest is not None:
                value.discard(ins.dest)
                aggregates.discard(ins.dest)
    return returned, aggregate_returned


@dataclass(frozen=True)
class ServiceChannel:
    service: str                     # class descriptor
    method: str                      # unqualified "name(params)ret"
    channel: str
    usage: object                    # the PropertyUsage being relayed
    hops: int                        # helper calls between method and the read

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "method": self.method,
            "channel": self.channel,
            "property": self.usage.name.value,
            "hops": self.hops,
        }


def _unqualified(key: str) -> str:
    return key.split("->", 1)[1]


class _ChannelFinder:
    def __init__(self, classes: list[IrClass], usages: list, config: ScanConfig):
        self.index = method_index(classes)
        self.config = config
        self.by_method: dict[str, list] = {}
        for u in usages:
            if u.kind == "property" and u.operation == "get":
                self.by_method.setdefault(u.site.method_key, []).append(u)
        self._returned_reads: dict[str, list] = {}

    def sources(self, method: IrMethod, depth: int) -> list[tuple[int, str, object, int]]:
        """Captured sensitive values live in this method: own reads and helper returns."""
        found = []
        for usage in self.by_method.get(method.key, ()):
            captured = _capture_after(method, usage.site.index)
            if captured is not None:
                found.append((*captured, usage, 0))
        if depth > 0:
            for ins in method.instructions:
                if ins.op != Op.INVOKE or ins.method is None:
                    continue
                target = self.index.get(ins.method.key)
                if target is None or target.key == method.key:
                    continue
                reads = self.returned_reads(target, depth - 1, frozenset({method.key}))
                if not reads:
                    continue
                captured = _capture_after(method, ins.index)
                if captured is None:
                    continue
                mr_index, reg = captured
                for usage, hops in reads:
                    found.append((mr_index, reg, usage, hops + 1))
        return found

    def flows(self, method: IrMethod, depth: int) -> list[tuple[object, str, int]]:
        """Relay channels out of this method: (usage, channel kind, helper hops)."""
        best: dict[object, tuple[int, int, str]] = {}
        for mr_index, reg, usage, hops in self.sources(method, depth):
            returned, aggregate_returned = _trace(
                method, mr_index + 1, reg, self.config.aggregate_methods)
            if returned:
                channel = CHANNEL_DIRECT if hops == 0 else CHANNEL_HELPER
            elif aggregate_returned:
                channel = CHANNEL_AGGREGATE
            else:
                continue
            key = usage.site
            rank = (_CHANNEL_RANK[channel], hops)
            if key not in best or rank < best[key][:2]:
                best[key] = (*rank, channel)
        out = []
        for usage_site, (rank, hops, channel) in best.items():
            usage = next(u for u in self.by_method.get(usage_site.method_key, ())
                         if u.site == usage_site)
            out.append((usage, channel, hops))
        out.sort(key=lambda item: (item[0].site.method_key, item[0].site.index))
        return out

    def returned_reads(self, method: IrMethod, depth: int,
                       seen: frozenset[str] = frozenset()) -> list[tuple[object, int]]:
        """Reads whose value this method returns directly, with helper-hop counts."""
        cache_key = method.key
        if depth == self.config.service_helper_depth and cache_key in self._returned_reads:
            return self._returned_reads[cache_key]
        results = []
        for usage in self.by_method.get(method.key, ()):
            captured = _capture_after(method, usage.site.index)
            if captured is None:
                continue
            mr_index, reg = captured
            returned, _ = _trace(method, mr_index + 1, reg, ())
            if returned:
                results.append((usage, 0))
        if depth > 0:
            seen = seen | {method.key}
            for ins in method.instructions:
                if ins.op != Op.INVOKE or ins.method is None:
                    continue
                target = self.index.get(ins.method.key)
                if target is None or target.key in seen:
                    continue
                captured = _capture_after(method, ins.index)
                if captured is None:
                    continue
                mr_index, reg = captured
                returned, _ = _trace(method, mr_index + 1, reg, ())
                if not returned:
                    continue
                for usage, hops in self.returned_reads(target, depth - 1, seen):
                    results.append((usage, hops + 1))
        if depth == self.config.service_helper_depth:
            self._returned_reads[cache_key] = results
        return results


def detect_service_channels(classes: list[IrClass], usages: list,
                            config: ScanConfig,
                            sink: DiagnosticSink | None = None) -> list[ServiceChannel]:
    """All relay channels out of public methods of service classes.

    Flows out of non-public methods are diagnostics only.
    """
    finder = _ChannelFinder(classes, usages, config)
    channels: list[ServiceChannel] = []
    for cls in find_service_classes(classes):
        for method in cls.methods:
            if method.name in ("<init>", "<clinit>"):
                continue
            flows = finder.flows(method, config.service_helper_depth)
            if not flows:
                continue
            name = _unqualified(method.key)
            if "public" not in method.flags:
                if sink:
                    for usage, channel, _ in flows:
                        shown = usage.name.value or "<unresolved>"
                        sink.emit("service-flow-private",
                                  f"{cls.name}->{name} relays {shown} ({channel})",
                                  cls.source_path)
                continue
            for usage, channel, hops in flows:
                channels.append(ServiceChannel(cls.name, name, channel, usage, hops))
    return channels


@dataclass(frozen=True)
class ServiceLeak:
    service: str
    method: str
    channel: str
    property_name: str
    identifier: IdentifierClass
    hops: int
    public: bool = True

    def to_dict(self) -> dict:
        return {
            "service": self.service,
            "method": self.method,
            "channel": self.channel,
            "property": self.property_name,
            "identifier": self.identifier.value,
            "public": self.public,
        }


def find_service_leaks(channels: list[ServiceChannel], config: ScanConfig,
                       is_readable: Callable[[str], bool]) -> list[ServiceLeak]:
    """Channels that relay an identifier property apps cannot read themselves."""
    leaks = []
    seen = set()
    for ch in channels:
        if ch.usage.name.status != "resolved":
            continue
        name = ch.usage.name.value
        identifier = classify_identifier(name, config)
        if identifier is None:
            continue
        if is_readable(name):
            continue
        key = (ch.service, ch.method, ch.channel, name)
        if key in seen:
            continue
        seen.add(key)
        leaks.append(ServiceLeak(ch.service, ch.method, ch.channel, name,
                                 identifier, ch.hops))
    leaks.sort(key=lambda l: (l.service, l.method, l.property_name, l.channel))
    return leaks
