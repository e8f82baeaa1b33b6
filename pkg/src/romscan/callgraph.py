"""Call graph over parsed classes: exact-signature resolution, external marking."""

from __future__ import annotations

from dataclasses import dataclass, field

from .smali import IrClass, IrMethod, Op


@dataclass(frozen=True)
class CallEdge:
    caller: str
    callee: str
    site: int
    external: bool


@dataclass
class CallGraph:
    nodes: set[str] = field(default_factory=set)
    edges: list[CallEdge] = field(default_factory=list)
    _by_callee: dict[str, list[CallEdge]] = field(default_factory=dict, repr=False)

    def callers_of(self, target: str) -> list[tuple[str, int]]:
        found = self._by_callee.get(target, [])
        return sorted((e.caller, e.site) for e in found)

    @property
    def internal_edge_count(self) -> int:
        return sum(1 for e in self.edges if not e.external)

    @property
    def external_edge_count(self) -> int:
        return sum(1 for e in self.edges if e.external)


def method_index(classes: list[IrClass]) -> dict[str, IrMethod]:
    """Map canonical method key -> IrMethod over the whole corpus."""
    index: dict[str, IrMethod] = {}
    for cls in classes:
        for m in cls.methods:
            index[m.key] = m
    return index


def build_call_graph(classes: list[IrClass]) -> CallGraph:
    """One edge per invoke site; targets resolve by exact (class, name, descriptor)."""
    index = method_index(classes)
    graph = CallGraph(nodes=set(index.keys()))
    seen: set[tuple[str, str, int]] = set()
    for cls in sorted(classes, key=lambda c: c.name):
        for m in cls.methods:
            for ins in m.instructions:
                if ins.op is not Op.INVOKE:
                    continue
                callee = ins.method.key
                dedup = (m.key, callee, ins.index)
                if dedup in seen:
                    continue
                seen.add(dedup)
                edge = CallEdge(caller=m.key, callee=callee, site=ins.index,
                                external=callee not in index)
                graph.edges.append(edge)
                graph._by_callee.setdefault(callee, []).append(edge)
    graph.edges.sort(key=lambda e: (e.caller, e.site, e.callee))
    return graph
