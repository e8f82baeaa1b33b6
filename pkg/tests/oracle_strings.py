"""Reference string-machine oracle.

Forward symbolic interpretation of a method's straight-line instruction
sequence, used to check name-resolution results independently.  The
production code resolves names by backward register tracing; this oracle
walks forward instead, keeping an abstract value per register, and expands
parameters by scanning the whole corpus for call sites itself (it does not
reuse the production call-graph or tracer logic).

Abstract values:
  OConst    - known string constant
  OHole     - unknown
  OBuilder  - StringBuilder contents as an ordered part list
  OArray    - array with per-slot values (filled or aput-built)
  OParam    - the value of a parameter word
  OAnyOf    - one of several alternatives (array loads)

A "resolution" is a normalized fragment tuple: adjacent literals merged,
holes encoded as None.  ("a", None) means partial; ("ab",) resolved; (None,)
unresolved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from romscan.smali import IrClass, IrMethod, Op

STRING_BUILDER = "Ljava/lang/StringBuilder;"


@dataclass(frozen=True)
class OConst:
    text: str


@dataclass(frozen=True)
class OHole:
    pass


@dataclass
class OBuilder:
    parts: list = field(default_factory=list)


@dataclass
class OArray:
    elems: list = field(default_factory=list)


@dataclass(frozen=True)
class OParam:
    word: int


@dataclass
class OAnyOf:
    options: list = field(default_factory=list)


HOLE = OHole()


def _class_index(classes: list[IrClass]) -> dict[str, IrClass]:
    return {c.name: c for c in classes}


def _find_method(classes: list[IrClass], key: str) -> IrMethod | None:
    for c in classes:
        for m in c.methods:
            if m.key == key:
                return m
    return None


def _init_env(method: IrMethod) -> dict:
    env: dict[str, object] = {}
    words = method.param_words()
    first = method.registers - words
    for w in range(words):
        env[f"p{w}"] = OParam(w)
        if method.registers > 0:
            env[f"v{first + w}"] = OParam(w)
    return env


def interpret_to(method: IrMethod, stop_index: int, classes: list[IrClass]) -> dict:
    """Run the straight-line abstract interpreter up to (not including) stop_index."""
    env = _init_env(method)
    last_result: object = HOLE
    for ins in method.instructions:
        if ins.index >= stop_index:
            break
        if ins.op is Op.CONST_STRING:
            env[ins.dest] = OConst(ins.literal)
        elif ins.op is Op.MOVE:
            src = env.get(ins.src, HOLE)
            if ins.idx_reg is not None and isinstance(src, OArray):
                env[ins.dest] = OAnyOf(list(src.elems)) if src.elems else HOLE
            else:
                env[ins.dest] = src
        elif ins.op is Op.MOVE_RESULT:
            env[ins.dest] = last_result
        elif ins.op is Op.INVOKE:
            last_result = _apply_invoke(ins, env)
        elif ins.op is Op.FILLED_NEW_ARRAY:
            last_result = OArray([env.get(r, HOLE) for r in ins.regs])
        elif ins.op is Op.NEW_ARRAY:
            env[ins.dest] = OArray([])
        elif ins.op is Op.APUT:
            arr = env.get(ins.array, HOLE)
            if isinstance(arr, OArray):
                arr.elems.append(env.get(ins.src, HOLE))
        elif ins.op is Op.SGET:
            env[ins.dest] = ("sfield", ins.field_ref)
        elif ins.op is Op.IGET:
            env[ins.dest] = ("ifield", ins.field_ref)
        # sput/iput/returns/other: no register effect the oracle tracks
    return env


def _apply_invoke(ins, env) -> object:
    mref = ins.method
    if mref.class_name == STRING_BUILDER:
        if mref.name == "<init>":
            b = OBuilder()
            if mref.params and ins.regs[1:]:
                b.parts.append(env.get(ins.regs[1], HOLE))
            if ins.regs:
                env[ins.regs[0]] = b
            return HOLE
        if mref.name == "append":
            recv = env.get(ins.regs[0], HOLE)
            arg = env.get(ins.regs[1], HOLE) if len(ins.regs) > 1 else HOLE
            if not mref.params or mref.params[0] != "Ljava/lang/String;":
                arg = HOLE
            if isinstance(recv, OBuilder):
                nb = OBuilder(list(recv.parts) + [arg])
            else:
                nb = OBuilder([HOLE, arg])
            env[ins.regs[0]] = nb
            return nb
        if mref.name == "toString":
            return env.get(ins.regs[0], HOLE)
    return HOLE


def _resolve_value(val, classes: list[IrClass], depth: int, seen: frozenset) -> set[tuple]:
    if isinstance(val, OConst):
        return {(val.text,)}
    if isinstance(val, OBuilder):
        combos: set[tuple] = {()}
        for part in val.parts:
            part_res = _resolve_value(part, classes, depth, seen)
            combos = {c + p for c in combos for p in part_res}
            if len(combos) > 64:
                return {(None,)}
        return {_normalize(c) for c in combos}
    if isinstance(val, OAnyOf):
        out: set[tuple] = set()
        for opt in val.options:
            out |= _resolve_value(opt, classes, depth, seen)
        return out or {(None,)}
    if isinstance(val, OParam):
        return {(None,)}
    if isinstance(val, tuple) and len(val) == 2 and val[0] in ("sfield", "ifield"):
        return _resolve_field(val[0], val[1], classes, depth, seen)
    return {(None,)}


def _resolve_field(kind: str, fref, classes: list[IrClass], depth: int, seen) -> set[tuple]:
    index = _class_index(classes)
    cls = index.get(fref.class_name)
    if cls is None:
        return {(None,)}
    initializers = [m for m in cls.methods
                    if m.name == ("<clinit>" if kind == "sfield" else "<init>")]
    out: set[tuple] = set()
    for m in initializers:
        for ins in m.instructions:
            stores = (ins.op is Op.SPUT) if kind == "sfield" else (ins.op is Op.IPUT)
            if stores and ins.field_ref == fref:
                env = interpret_to(m, ins.index, classes)
                out |= _resolve_value(env.get(ins.src, HOLE), classes, depth, seen)
    if not out:
        # a field with a declared literal default and no initializer store
        for f in cls.fields:
            if f.name == fref.name and f.constant is not None:
                out.add((f.constant,))
    return out or {(None,)}


def _normalize(fragments: tuple) -> tuple:
    merged: list = []
    for f in fragments:
        if isinstance(f, str) and merged and isinstance(merged[-1], str):
            merged[-1] += f
        else:
            merged.append(f)
    if not merged:
        return (None,)
    return tuple(merged)


def _caller_sites(classes: list[IrClass], target_key: str):
    for cls in classes:
        for m in cls.methods:
            for ins in m.instructions:
                if ins.op is Op.INVOKE and ins.method.key == target_key:
                    yield m, ins


def expected_resolutions(classes: list[IrClass], method_key: str, index: int,
                         reg: str, depth: int = 5) -> set[tuple]:
    """All fragment tuples the named register may hold just before `index` runs."""
    method = _find_method(classes, method_key)
    assert method is not None, method_key
    return _resolve_at(classes, method, index, reg, depth, frozenset())


def _resolve_at(classes, method, index, reg, depth, seen) -> set[tuple]:
    env = interpret_to(method, index, classes)
    val = env.get(reg, HOLE)
    # Only a name that IS a parameter expands through callers; parameter
    # contributions inside a concatenation stay holes (partial result).
    if isinstance(val, OParam):
        return _expand_param(classes, method, val.word, depth, seen)
    return _resolve_value(val, classes, depth, seen)


def _expand_param(classes, method, word, depth, seen) -> set[tuple]:
    if depth <= 0 or method.key in seen:
        return {(None,)}
    out: set[tuple] = set()
    for caller, ins in _caller_sites(classes, method.key):
        if ins.regs and word < len(ins.regs):
            arg_reg = ins.regs[word]
            out |= _resolve_at(classes, caller, ins.index, arg_reg,
                               depth - 1, seen | {method.key})
    return out or {(None,)}


def expected_array_elements(classes: list[IrClass], method_key: str, index: int,
                            reg: str, depth: int = 5) -> list[set[tuple]]:
    """Per-slot resolution sets for an array-valued register at a site."""
    method = _find_method(classes, method_key)
    assert method is not None, method_key
    env = interpret_to(method, index, classes)
    val = env.get(reg, HOLE)
    if not isinstance(val, OArray):
        return []
    return [_resolve_value(e, classes, depth, frozenset()) for e in val.elems]
