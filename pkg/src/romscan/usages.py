"""Access-site detection, idiom classification and name resolution.

Detection finds every instruction that can carry a property or settings
access: direct SystemProperties calls, Settings getters/setters, reflection
plumbing (Class.forName, Method.invoke, Method/Class typed fields, corpus
methods returning reflection objects) and Runtime.exec.

Classification reduces those raw sites to six idioms.  Name resolution walks
registers backward through the straight-line instruction list; parameters
expand through call sites, StringBuilder chains fold constant parts, fields
resolve through their initializer stores, arrays yield one usage per constant
element.  Non-constant contributions become holes.
"""

from __future__ import annotations

from dataclasses import dataclass

from .callgraph import CallGraph, method_index
from .common import DiagnosticSink
from .config import ScanConfig
from .smali import IrClass, IrInstruction, IrMethod, Op

SYSPROPS_CLASS = "Landroid/os/SystemProperties;"
SYSPROPS_DOTTED = "android.os.SystemProperties"
SETTINGS_NAMESPACES = {
    "Landroid/provider/Settings$System;": "System",
    "Landroid/provider/Settings$Secure;": "Secure",
    "Landroid/provider/Settings$Global;": "Global",
}
CLASS_CLASS = "Ljava/lang/Class;"
METHOD_CLASS = "Ljava/lang/reflect/Method;"
RUNTIME_CLASS = "Ljava/lang/Runtime;"
STRING_BUILDER = "Ljava/lang/StringBuilder;"
STRING_CLASS = "Ljava/lang/String;"
CONTENT_RESOLVER = "Landroid/content/ContentResolver;"

MAX_CHAIN_PATHS = 64
MAX_FRAGMENT_COMBOS = 64


# --- public result types ---------------------------------------------------

class IdiomKind:
    DIRECT_CALL = "direct-call"
    REFLECTION_INLINE = "reflection-inline"
    REFLECTION_STATIC_FIELD = "reflection-static-field"
    REFLECTION_WRAPPER = "reflection-wrapper"
    EXEC_GETPROP = "exec-getprop"
    SETTINGS_API = "settings-api"

    ALL = (DIRECT_CALL, REFLECTION_INLINE, REFLECTION_STATIC_FIELD,
           REFLECTION_WRAPPER, EXEC_GETPROP, SETTINGS_API)


@dataclass(frozen=True)
class NameResolution:
    status: str                      # resolved | partial | unresolved
    value: str | None
    fragments: tuple                 # str literals and None holes, merged
    reason: str | None = None

    @staticmethod
    def from_fragments(fragments: tuple, reason: str | None = None) -> "NameResolution":
        merged: list = []
        for f in fragments:
            if isinstance(f, str) and merged and isinstance(merged[-1], str):
                merged[-1] += f
            else:
                merged.append(f)
        frags = tuple(merged) if merged else (None,)
        has_lit = any(isinstance(f, str) for f in frags)
        has_hole = any(f is None for f in frags)
        if has_lit and not has_hole:
            value = "".join(frags)
            if value:
                return NameResolution("resolved", value, (value,), reason)
            return NameResolution("unresolved", None, (None,), reason)
        if has_lit and has_hole:
            return NameResolution("partial", None, frags, reason)
        return NameResolution("unresolved", None, (None,), reason)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "value": self.value,
            "fragments": list(self.fragments),
            "reason": self.reason,
        }


@dataclass(frozen=True)
class Site:
    class_name: str
    method_key: str
    index: int

    def to_dict(self) -> dict:
        return {"class": self.class_name, "method": self.method_key, "index": self.index}


@dataclass(frozen=True)
class PropertyUsage:
    site: Site
    idiom: str
    operation: str                   # get | set
    name: NameResolution
    call_chain: tuple[str, ...]
    source_path: str

    kind = "property"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "site": self.site.to_dict(),
            "idiom": self.idiom,
            "operation": self.operation,
            "name": self.name.to_dict(),
            "call_chain": list(self.call_chain),
            "source_path": self.source_path,
        }


@dataclass(frozen=True)
class SettingUsage:
    site: Site
    namespace: str                   # System | Secure | Global
    operation: str                   # get | put
    name: NameResolution
    call_chain: tuple[str, ...]
    source_path: str

    kind = "setting"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "site": self.site.to_dict(),
            "namespace": self.namespace,
            "operation": self.operation,
            "name": self.name.to_dict(),
            "call_chain": list(self.call_chain),
            "source_path": self.source_path,
        }


@dataclass(frozen=True)
class RawSite:
    class_name: str
    method_key: str
    index: int
    category: str                    # invoke-api | reflect-field | reflect-return


# --- abstract origins for backward tracing ----------------------------------

@dataclass(frozen=True)
class _Const:
    text: str


class _Hole:
    def __repr__(self) -> str:
        return "_Hole"


_HOLE = _Hole()


@dataclass
class _Builder:
    parts: list


@dataclass
class _ArrayLit:
    elems: list


@dataclass
class _ArrayMut:
    elems: list


@dataclass(frozen=True)
class _Param:
    word: int


@dataclass
class _AnyOf:
    options: list


@dataclass(frozen=True)
class _StaticField:
    class_name: str
    name: str
    type_desc: str


@dataclass(frozen=True)
class _InstanceField:
    class_name: str
    name: str
    type_desc: str


@dataclass(frozen=True)
class _CallResult:
    ins: IrInstruction               # the producing invoke


@dataclass(frozen=True)
class _Resolution:
    fragments: tuple                 # str | None, unmerged
    via: tuple[str, ...]             # caller path, outermost first
    reason: str | None = None


class _Extractor:
    def __init__(self, classes: list[IrClass], graph: CallGraph, config: ScanConfig,
                 diags: DiagnosticSink):
        self.classes = classes
        self.by_name = {c.name: c for c in classes}
        self.methods = method_index(classes)
        self.graph = graph
        self.config = config
        self.diags = diags
        self.usages: list = []
        self._consumed: set[tuple[str, int]] = set()
        self._consumed_fields: set[tuple[str, str]] = set()

    # -- backward value tracing ----------------------------------------

    def trace(self, method: IrMethod, before_index: int, reg: str, depth: int = 4):
        """Abstract origin of `reg` just before instruction `before_index`."""
        if depth <= 0:
            return _HOLE
        i = before_index - 1
        instrs = method.instructions
        while i >= 0:
            ins = instrs[i]
            if ins.op is Op.CONST_STRING and ins.dest == reg:
                return _Const(ins.literal)
            if ins.op is Op.MOVE and ins.dest == reg:
                if ins.idx_reg is not None:
                    arr = self.trace(method, ins.index, ins.src, depth)
                    if isinstance(arr, (_ArrayLit, _ArrayMut)):
                        opts = list(arr.elems)
                        return _AnyOf(opts) if opts else _HOLE
                    return _HOLE
                reg = ins.src
                i -= 1
                continue
            if ins.op is Op.MOVE_RESULT and ins.dest == reg:
                producer = self._producer_before(method, ins.index)
                if producer is None:
                    return _HOLE
                if producer.op is Op.FILLED_NEW_ARRAY:
                    return _ArrayLit([self.trace(method, producer.index, r, depth - 1)
                                      for r in producer.regs])
                return self._invoke_origin(method, producer, depth)
            if ins.op is Op.SGET and ins.dest == reg:
                f = ins.field_ref
                return _StaticField(f.class_name, f.name, f.type_desc)
            if ins.op is Op.IGET and ins.dest == reg:
                f = ins.field_ref
                return _InstanceField(f.class_name, f.name, f.type_desc)
            if ins.op is Op.NEW_ARRAY and ins.dest == reg:
                elems = []
                for later in instrs[ins.index + 1:before_index]:
                    if later.op is Op.APUT and later.array == reg:
                        elems.append(self.trace(method, later.index, later.src, depth - 1))
                    if later.op is not Op.APUT and later.dest == reg:
                        break
                return _ArrayMut(elems)
            if ins.op is Op.INVOKE and ins.method.class_name == STRING_BUILDER \
                    and ins.regs and ins.regs[0] == reg:
                if ins.method.name == "append":
                    prev = self.trace(method, ins.index, reg, depth)
                    arg = _HOLE
                    if len(ins.regs) > 1 and ins.method.params \
                            and ins.method.params[0] == STRING_CLASS:
                        arg = self.trace(method, ins.index, ins.regs[1], depth)
                    parts = prev.parts if isinstance(prev, _Builder) else [_HOLE]
                    return _Builder(list(parts) + [arg])
                if ins.method.name == "<init>":
                    parts = []
                    if ins.method.params and len(ins.regs) > 1 \
                            and ins.method.params[0] == STRING_CLASS:
                        parts = [self.trace(method, ins.index, ins.regs[1], depth)]
                    return _Builder(parts)
            i -= 1
        word = method.param_word_of(reg)
        if word is not None:
            return _Param(word)
        return _HOLE

    def _producer_before(self, method: IrMethod, index: int) -> IrInstruction | None:
        for ins in reversed(method.instructions[:index]):
            if ins.op in (Op.INVOKE, Op.FILLED_NEW_ARRAY):
                return ins
        return None

    def _invoke_origin(self, method: IrMethod, ins: IrInstruction, depth: int):
        mref = ins.method
        if mref.class_name == STRING_BUILDER:
            if mref.name == "toString" and ins.regs:
                b = self.trace(method, ins.index, ins.regs[0], depth)
                return b if isinstance(b, _Builder) else _HOLE
            if mref.name == "append" and ins.regs:
                prev = self.trace(method, ins.index, ins.regs[0], depth)
                arg = _HOLE
                if len(ins.regs) > 1 and mref.params and mref.params[0] == STRING_CLASS:
                    arg = self.trace(method, ins.index, ins.regs[1], depth)
                parts = prev.parts if isinstance(prev, _Builder) else [_HOLE]
                return _Builder(list(parts) + [arg])
        return _CallResult(ins)

    # -- origin -> resolutions -----------------------------------------

    def resolve_origin(self, origin, method: IrMethod, depth: int,
                       seen: frozenset) -> list[_Resolution]:
        if isinstance(origin, _Const):
            return [_Resolution((origin.text,), ())]
        if isinstance(origin, _Builder):
            combos: list[tuple] = [()]
            for part in origin.parts:
                frag_sets = self._fragments_of(part, method, depth, seen)
                combos = [c + f for c in combos for f in frag_sets]
                if len(combos) > MAX_FRAGMENT_COMBOS:
                    return [_Resolution((None,), (), reason="combination-limit")]
            return [_Resolution(c, ()) for c in combos]
        if isinstance(origin, _AnyOf):
            out: list[_Resolution] = []
            for opt in origin.options:
                out.extend(self.resolve_origin(opt, method, depth, seen))
            return out or [_Resolution((None,), ())]
        if isinstance(origin, _Param):
            return self._resolve_param(origin.word, method, depth, seen)
        if isinstance(origin, (_StaticField, _InstanceField)):
            return self._resolve_field(origin, depth, seen)
        return [_Resolution((None,), ())]

    def _fragments_of(self, origin, method: IrMethod, depth: int,
                      seen: frozenset) -> list[tuple]:
        """Fragment alternatives for one concatenation part (no param expansion)."""
        if isinstance(origin, _Const):
            return [(origin.text,)]
        if isinstance(origin, _Builder):
            combos: list[tuple] = [()]
            for part in origin.parts:
                frag_sets = self._fragments_of(part, method, depth, seen)
                combos = [c + f for c in combos for f in frag_sets]
                if len(combos) > MAX_FRAGMENT_COMBOS:
                    return [(None,)]
            return combos
        if isinstance(origin, (_StaticField, _InstanceField)):
            stores = self._resolve_field(origin, depth, seen)
            return [r.fragments for r in stores]
        if isinstance(origin, _AnyOf):
            out: list[tuple] = []
            for opt in origin.options:
                out.extend(self._fragments_of(opt, method, depth, seen))
            return out or [(None,)]
        return [(None,)]

    def _resolve_param(self, word: int, method: IrMethod, depth: int,
                       seen: frozenset) -> list[_Resolution]:
        if depth <= 0:
            return [_Resolution((None,), (), reason="depth-limit")]
        if method.key in seen:
            return [_Resolution((None,), (), reason="recursive-caller")]
        callers = self.graph.callers_of(method.key)
        if not callers:
            return [_Resolution((None,), (), reason="parameter-without-caller")]
        out: list[_Resolution] = []
        for caller_key, site_index in callers:
            caller = self.methods.get(caller_key)
            if caller is None:
                continue
            call_ins = caller.instructions[site_index]
            if word >= len(call_ins.regs):
                out.append(_Resolution((None,), (caller_key,), reason="argument-mismatch"))
                continue
            origin = self.trace(caller, site_index, call_ins.regs[word])
            inner = self.resolve_origin(origin, caller, depth - 1, seen | {method.key})
            for res in inner:
                out.append(_Resolution(res.fragments, res.via + (caller_key,), res.reason))
            if len(out) > self.config.max_param_expansions:
                out = out[: self.config.max_param_expansions]
                out.append(_Resolution((None,), (), reason="expansion-limit"))
                self.diags.emit(
                    "resolution-expansion-limit",
                    f"parameter of {method.key} has more resolutions than the configured cap",
                    source=method.key,
                )
                break
        return out or [_Resolution((None,), (), reason="parameter-without-caller")]

    def _resolve_field(self, origin, depth: int, seen: frozenset) -> list[_Resolution]:
        cls = self.by_name.get(origin.class_name)
        if cls is None:
            return [_Resolution((None,), (), reason="field-external")]
        init_name = "<clinit>" if isinstance(origin, _StaticField) else "<init>"
        marker = f"field:{origin.class_name}->{origin.name}"
        if marker in seen:
            return [_Resolution((None,), (), reason="recursive-field")]
        out: list[_Resolution] = []
        for m in cls.methods:
            if m.name != init_name:
                continue
            for ins in m.instructions:
                stores = ins.op is (Op.SPUT if isinstance(origin, _StaticField) else Op.IPUT)
                if stores and ins.field_ref is not None \
                        and ins.field_ref.class_name == origin.class_name \
                        and ins.field_ref.name == origin.name:
                    src_origin = self.trace(m, ins.index, ins.src)
                    out.extend(self.resolve_origin(src_origin, m, depth, seen | {marker}))
        # a String field with a literal default and no initializer store
        if not out:
            for f in cls.fields:
                if f.name == origin.name and f.constant is not None:
                    out.append(_Resolution((f.constant,), ()))
        return out or [_Resolution((None,), (), reason="field-store-not-found")]

    # -- call chains -----------------------------------------------------

    def backtrack_context(self, method_key: str, depth_limit: int) -> list[tuple[str, ...]]:
        chains: list[tuple[str, ...]] = []

        def walk(cur: str, acc: list[str]) -> None:
            if len(chains) >= MAX_CHAIN_PATHS:
                return
            caller_keys = sorted({c for c, _ in self.graph.callers_of(cur)})
            hops = len(acc) - 1
            if not caller_keys or hops >= depth_limit:
                chains.append(tuple(reversed(acc)))
                return
            extended = False
            for caller in caller_keys:
                if caller in acc:
                    continue
                extended = True
                walk(caller, acc + [caller])
            if not extended:
                chains.append(tuple(reversed(acc)))

        walk(method_key, [method_key])
        return sorted(set(chains))

    def _chain_for(self, method_key: str, via: tuple[str, ...]) -> tuple[str, ...]:
        if via:
            return via + (method_key,)
        chains = self.backtrack_context(method_key, self.config.depth_limit)
        return chains[0] if chains else (method_key,)

    # -- site handling ---------------------------------------------------

    def run(self) -> list:
        for cls in sorted(self.classes, key=lambda c: c.name):
            for m in cls.methods:
                for ins in m.instructions:
                    if ins.op is Op.INVOKE:
                        self._handle_invoke(cls, m, ins)
        self._report_leftovers()
        self.usages.sort(key=_usage_sort_key)
        deduped = []
        for u in self.usages:
            if not deduped or deduped[-1] != u:
                deduped.append(u)
        return deduped

    def _handle_invoke(self, cls: IrClass, m: IrMethod, ins: IrInstruction) -> None:
        mref = ins.method
        if mref.class_name == SYSPROPS_CLASS:
            self._handle_sysprops_direct(cls, m, ins)
        elif mref.class_name in SETTINGS_NAMESPACES:
            self._handle_settings(cls, m, ins)
        elif mref.class_name == RUNTIME_CLASS and mref.name == "exec":
            self._handle_exec(cls, m, ins)
        elif mref.class_name == METHOD_CLASS and mref.name == "invoke":
            self._handle_reflective_invoke(cls, m, ins)

    def _handle_sysprops_direct(self, cls: IrClass, m: IrMethod, ins: IrInstruction) -> None:
        mref = ins.method
        operation = None
        if mref.name.startswith("get"):
            operation = "get"
        elif mref.name.startswith("set"):
            operation = "set"
        if operation is None or not mref.params or mref.params[0] != STRING_CLASS:
            self.diags.emit("sysprops-unsupported-method",
                            f"call to {mref.key} is not a name-bearing accessor",
                            source=m.key)
            return
        self._consume(m, ins.index)
        origin = self.trace(m, ins.index, ins.regs[0]) if ins.regs else _HOLE
        self._emit_property(cls, m, ins, IdiomKind.DIRECT_CALL, operation, origin)

    def _handle_settings(self, cls: IrClass, m: IrMethod, ins: IrInstruction) -> None:
        mref = ins.method
        operation = None
        if mref.name.startswith("get"):
            operation = "get"
        elif mref.name.startswith("put"):
            operation = "put"
        name_bearing = (operation is not None and len(mref.params) >= 2
                        and mref.params[0] == CONTENT_RESOLVER
                        and mref.params[1] == STRING_CLASS)
        if not name_bearing:
            return
        self._consume(m, ins.index)
        namespace = SETTINGS_NAMESPACES[mref.class_name]
        origin = self.trace(m, ins.index, ins.regs[1]) if len(ins.regs) > 1 else _HOLE
        for res in self.resolve_origin(origin, m, self.config.depth_limit, frozenset()):
            name = NameResolution.from_fragments(res.fragments, res.reason)
            usage = SettingUsage(
                site=Site(cls.name, m.key, ins.index),
                namespace=namespace,
                operation=operation,
                name=name,
                call_chain=self._chain_for(m.key, res.via),
                source_path=cls.source_path,
            )
            self.usages.append(usage)

    def _handle_exec(self, cls: IrClass, m: IrMethod, ins: IrInstruction) -> None:
        mref = ins.method
        self._consume(m, ins.index)
        if mref.params and mref.params[0] == STRING_CLASS and len(ins.regs) > 1:
            origin = self.trace(m, ins.index, ins.regs[1])
            resolutions = self.resolve_origin(origin, m, self.config.depth_limit, frozenset())
            emitted = False
            for res in resolutions:
                name = _getprop_name_from_command(res)
                if name is None:
                    continue
                emitted = True
                self._emit_property_resolution(cls, m, ins, IdiomKind.EXEC_GETPROP,
                                               "get", name, res.via)
            if not emitted:
                self.diags.emit("exec-not-getprop",
                                "exec command does not resolve to a getprop invocation",
                                source=f"{m.key}@{ins.index}")
            return
        if mref.params and mref.params[0] == "[Ljava/lang/String;" and len(ins.regs) > 1:
            arr = self.trace(m, ins.index, ins.regs[1])
            if isinstance(arr, (_ArrayLit, _ArrayMut)) and len(arr.elems) >= 2:
                head = arr.elems[0]
                if isinstance(head, _Const) and head.text.strip() == "getprop":
                    for res in self.resolve_origin(arr.elems[1], m,
                                                   self.config.depth_limit, frozenset()):
                        name = NameResolution.from_fragments(res.fragments, res.reason)
                        self._emit_property_resolution(cls, m, ins, IdiomKind.EXEC_GETPROP,
                                                       "get", name, res.via)
                    return
        self.diags.emit("exec-not-getprop",
                        "exec command does not resolve to a getprop invocation",
                        source=f"{m.key}@{ins.index}")

    def _handle_reflective_invoke(self, cls: IrClass, m: IrMethod, ins: IrInstruction) -> None:
        self._consume(m, ins.index)
        target = self._classify_reflective_target(m, ins)
        if target is None:
            return
        idiom, accessor_name = target
        operation = "get" if accessor_name.startswith("get") else "set"
        args_origin = self.trace(m, ins.index, ins.regs[2]) if len(ins.regs) > 2 else _HOLE
        if isinstance(args_origin, _ArrayLit) and args_origin.elems:
            self._emit_property(cls, m, ins, idiom, operation, args_origin.elems[0])
        elif isinstance(args_origin, _ArrayMut) and args_origin.elems:
            emitted = False
            for elem in args_origin.elems:
                for res in self.resolve_origin(elem, m, self.config.depth_limit, frozenset()):
                    name = NameResolution.from_fragments(res.fragments, res.reason)
                    if name.status == "unresolved":
                        continue
                    emitted = True
                    self._emit_property_resolution(cls, m, ins, idiom, operation,
                                                   name, res.via)
            if not emitted:
                self._emit_property_resolution(
                    cls, m, ins, idiom, operation,
                    NameResolution.from_fragments((None,), "argument-array-opaque"), ())
        else:
            self._emit_property_resolution(
                cls, m, ins, idiom, operation,
                NameResolution.from_fragments((None,), "argument-array-opaque"), ())

    def _classify_reflective_target(self, m: IrMethod, ins: IrInstruction) -> tuple[str, str] | None:
        """Return (idiom, accessor method name) for a Method.invoke site, or None."""
        method_origin = self.trace(m, ins.index, ins.regs[0]) if ins.regs else _HOLE

        if isinstance(method_origin, _CallResult):
            producer = method_origin.ins
            pref = producer.method
            if pref.class_name == CLASS_CLASS and pref.name in ("getMethod", "getDeclaredMethod"):
                return self._classify_from_get_method(m, producer)
            if pref.key in self.methods:
                wrapper = self.methods[pref.key]
                got = self._wrapper_returns(wrapper, METHOD_CLASS)
                if got is not None:
                    accessor = self._accessor_from_get_method(wrapper, got)
                    if accessor is not None:
                        self._consume_at(m.key, producer.index)
                        return (IdiomKind.REFLECTION_WRAPPER, accessor)
                self.diags.emit("reflection-opaque-method-source",
                                f"Method object from {pref.key} does not resolve to a property accessor",
                                source=f"{m.key}@{ins.index}")
                return None
        if isinstance(method_origin, _StaticField):
            resolved = self._method_field_accessor(method_origin)
            if resolved is not None:
                return (IdiomKind.REFLECTION_STATIC_FIELD, resolved)
            self.diags.emit("reflection-opaque-method-source",
                            "static Method field does not resolve to a property accessor",
                            source=f"{m.key}@{ins.index}")
            return None
        self.diags.emit("reflection-opaque-method-source",
                        "Method.invoke receiver cannot be traced to a property accessor",
                        source=f"{m.key}@{ins.index}")
        return None

    def _classify_from_get_method(self, m: IrMethod,
                                  get_method_ins: IrInstruction) -> tuple[str, str] | None:
        accessor = self._const_arg(m, get_method_ins, 1)
        if accessor is None or not (accessor.startswith("get") or accessor.startswith("set")):
            self.diags.emit("reflection-dynamic-accessor",
                            "reflective accessor name is not a usable constant",
                            source=f"{m.key}@{get_method_ins.index}")
            return None
        class_origin = self.trace(m, get_method_ins.index, get_method_ins.regs[0])
        if isinstance(class_origin, _CallResult):
            producer = class_origin.ins
            pref = producer.method
            if pref.class_name == CLASS_CLASS and pref.name == "forName":
                target = self._const_arg(m, producer, 0)
                if target == SYSPROPS_DOTTED:
                    self._consume_at(m.key, producer.index)
                    return (IdiomKind.REFLECTION_INLINE, accessor)
                self.diags.emit("reflection-foreign-target",
                                f"reflective target {target!r} is not the property store",
                                source=f"{m.key}@{producer.index}")
                return None
            if pref.key in self.methods:
                wrapper = self.methods[pref.key]
                got = self._wrapper_returns(wrapper, CLASS_CLASS)
                if got is not None and self._forname_target(wrapper, got) == SYSPROPS_DOTTED:
                    self._consume_at(m.key, producer.index)
                    self._consume_at(wrapper.key, got.index)
                    return (IdiomKind.REFLECTION_WRAPPER, accessor)
                self.diags.emit("reflection-opaque-class-source",
                                f"Class object from {pref.key} does not resolve to the property store",
                                source=f"{m.key}@{get_method_ins.index}")
                return None
        self.diags.emit("reflection-opaque-class-source",
                        "getMethod receiver class cannot be traced",
                        source=f"{m.key}@{get_method_ins.index}")
        return None

    def _const_arg(self, m: IrMethod, ins: IrInstruction, word: int) -> str | None:
        if word >= len(ins.regs):
            return None
        origin = self.trace(m, ins.index, ins.regs[word])
        if isinstance(origin, _Const):
            return origin.text
        return None

    def _wrapper_returns(self, wrapper: IrMethod, wanted_class: str) -> IrInstruction | None:
        """The invoke whose result the wrapper returns, when it is a reflection producer."""
        if wrapper.ret != wanted_class:
            return None
        for ins in wrapper.instructions:
            if ins.op is Op.RETURN_VALUE and ins.src is not None:
                origin = self.trace(wrapper, ins.index, ins.src)
                if isinstance(origin, _CallResult):
                    return origin.ins
        return None

    def _accessor_from_get_method(self, wrapper: IrMethod,
                                  producer: IrInstruction) -> str | None:
        pref = producer.method
        if pref.class_name != CLASS_CLASS or pref.name not in ("getMethod", "getDeclaredMethod"):
            return None
        accessor = self._const_arg(wrapper, producer, 1)
        if accessor is None or not (accessor.startswith("get") or accessor.startswith("set")):
            return None
        class_origin = self.trace(wrapper, producer.index, producer.regs[0])
        if isinstance(class_origin, _CallResult):
            inner = class_origin.ins
            if inner.method.class_name == CLASS_CLASS and inner.method.name == "forName":
                if self._const_arg(wrapper, inner, 0) == SYSPROPS_DOTTED:
                    self._consume_at(wrapper.key, inner.index)
                    return accessor
            if inner.method.key in self.methods:
                deeper = self.methods[inner.method.key]
                got = self._wrapper_returns(deeper, CLASS_CLASS)
                if got is not None and self._forname_target(deeper, got) == SYSPROPS_DOTTED:
                    self._consume_at(wrapper.key, inner.index)
                    self._consume_at(deeper.key, got.index)
                    return accessor
        return None

    def _forname_target(self, wrapper: IrMethod, producer: IrInstruction) -> str | None:
        if producer.method.class_name == CLASS_CLASS and producer.method.name == "forName":
            return self._const_arg(wrapper, producer, 0)
        return None

    def _method_field_accessor(self, origin: _StaticField) -> str | None:
        """Accessor name when a static Method field is initialized in <clinit>."""
        if origin.type_desc != METHOD_CLASS:
            return None
        cls = self.by_name.get(origin.class_name)
        if cls is None:
            return None
        for m in cls.methods:
            if m.name != "<clinit>":
                continue
            for ins in m.instructions:
                if ins.op is Op.SPUT and ins.field_ref is not None \
                        and ins.field_ref.name == origin.name \
                        and ins.field_ref.class_name == origin.class_name:
                    stored = self.trace(m, ins.index, ins.src)
                    if isinstance(stored, _CallResult):
                        accessor = self._accessor_from_get_method(m, stored.ins)
                        if accessor is not None:
                            self._consumed_fields.add((origin.class_name, origin.name))
                        return accessor
        return None

    # -- usage emission ---------------------------------------------------

    def _emit_property(self, cls: IrClass, m: IrMethod, ins: IrInstruction,
                       idiom: str, operation: str, origin) -> None:
        for res in self.resolve_origin(origin, m, self.config.depth_limit, frozenset()):
            name = NameResolution.from_fragments(res.fragments, res.reason)
            self._emit_property_resolution(cls, m, ins, idiom, operation, name, res.via)

    def _emit_property_resolution(self, cls: IrClass, m: IrMethod, ins: IrInstruction,
                                  idiom: str, operation: str, name, via) -> None:
        if isinstance(name, _Resolution):
            name = NameResolution.from_fragments(name.fragments, name.reason)
        usage = PropertyUsage(
            site=Site(cls.name, m.key, ins.index),
            idiom=idiom,
            operation=operation,
            name=name,
            call_chain=self._chain_for(m.key, tuple(via)),
            source_path=cls.source_path,
        )
        self.usages.append(usage)

    def _consume(self, m: IrMethod, index: int) -> None:
        self._consumed.add((m.key, index))

    def _consume_at(self, method_key: str, index: int) -> None:
        self._consumed.add((method_key, index))

    # -- leftover reflection plumbing -------------------------------------

    def _report_leftovers(self) -> None:
        for site in detect_access_sites(self.classes):
            if (site.method_key, site.index) in self._consumed:
                continue
            if site.category == "invoke-api":
                method = self.methods[site.method_key]
                ins = method.instructions[site.index]
                if ins.method.class_name in (SYSPROPS_CLASS, RUNTIME_CLASS) \
                        or ins.method.class_name in SETTINGS_NAMESPACES:
                    continue  # already diagnosed or intentionally skipped
                self.diags.emit("reflection-plumbing-unused",
                                f"{ins.method.key} result does not reach a property access",
                                source=f"{site.method_key}@{site.index}")
            elif site.category == "reflect-field":
                method = self.methods[site.method_key]
                fref = method.instructions[site.index].field_ref
                if fref is not None and (fref.class_name, fref.name) in self._consumed_fields:
                    continue
                self.diags.emit("reflection-field-unused",
                                "Method/Class typed field access not linked to a property access",
                                source=f"{site.method_key}@{site.index}")
            elif site.category == "reflect-return":
                self.diags.emit("reflection-return-unused",
                                "reflection object from corpus method not linked to a property access",
                                source=f"{site.method_key}@{site.index}")


def _getprop_name_from_command(res: _Resolution) -> NameResolution | None:
    """Convert an exec command-line resolution into a property-name resolution."""
    frags = res.fragments
    if not frags or not isinstance(frags[0], str):
        return None
    head = frags[0]
    if not head.startswith("getprop"):
        return None
    rest = head[len("getprop"):]
    if rest and not rest[0].isspace():
        return None
    rest = rest.lstrip()
    if rest:
        token, _, trailing = rest.partition(" ")
        if trailing or len(frags) == 1:
            return NameResolution.from_fragments((token,), res.reason)
        return NameResolution.from_fragments((token,) + frags[1:], res.reason)
    if len(frags) > 1:
        return NameResolution.from_fragments(frags[1:], res.reason)
    return None


def _usage_sort_key(u) -> tuple:
    name = u.name
    frag_key = tuple("\x00" if f is None else f for f in name.fragments)
    second = u.idiom if u.kind == "property" else u.namespace
    return (u.source_path, u.site.class_name, u.site.method_key, u.site.index,
            u.kind, second, u.operation, name.status, frag_key, u.call_chain)


def detect_access_sites(classes: list[IrClass]) -> list[RawSite]:
    """Every instruction that can carry a property/settings access."""
    methods = method_index(classes)
    sites: list[RawSite] = []
    for cls in sorted(classes, key=lambda c: c.name):
        for m in cls.methods:
            for ins in m.instructions:
                if ins.op is Op.INVOKE:
                    mref = ins.method
                    interesting = (
                        mref.class_name == SYSPROPS_CLASS
                        or (mref.class_name in SETTINGS_NAMESPACES
                            and (mref.name.startswith("get") or mref.name.startswith("put")))
                        or (mref.class_name == CLASS_CLASS and mref.name == "forName")
                        or (mref.class_name == METHOD_CLASS and mref.name == "invoke")
                        or (mref.class_name == RUNTIME_CLASS and mref.name == "exec")
                    )
                    if interesting:
                        sites.append(RawSite(cls.name, m.key, ins.index, "invoke-api"))
                        continue
                    target = methods.get(mref.key)
                    if target is not None and target.ret in (CLASS_CLASS, METHOD_CLASS):
                        sites.append(RawSite(cls.name, m.key, ins.index, "reflect-return"))
                elif ins.op in (Op.SGET, Op.SPUT, Op.IGET, Op.IPUT):
                    if ins.field_ref is not None and ins.field_ref.type_desc in (
                            CLASS_CLASS, METHOD_CLASS):
                        sites.append(RawSite(cls.name, m.key, ins.index, "reflect-field"))
    return sites


def extract_usages(classes: list[IrClass], graph: CallGraph, config: ScanConfig,
                   diags: DiagnosticSink | None = None) -> tuple[list, DiagnosticSink]:
    sink = diags if diags is not None else DiagnosticSink()
    extractor = _Extractor(classes, graph, config, sink)
    return extractor.run(), sink
