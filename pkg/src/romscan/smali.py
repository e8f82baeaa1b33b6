"""Parser, pretty-printer and data model for a small smali-style grammar.

Only the instruction families the analyses need are modeled exactly:
string constants, invokes, moves, field accesses, arrays and returns.
Everything else parses to opcode `other` with operands dropped but the
instruction index preserved, so offsets and straight-line order survive.

Array element loads (aget*) are lowered to opcode `move` from the array
register; the index register is kept as a third operand purely so that
printing and re-parsing round-trips.  Backward value tracing then reaches
the array's definition without a dedicated opcode.

The grammar subset is documented in docs/smali-subset.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .common import SmaliParseError


class Op(str, Enum):
    CONST_STRING = "const-string"
    INVOKE = "invoke"
    MOVE_RESULT = "move-result"
    MOVE = "move"
    SGET = "sget"
    SPUT = "sput"
    IGET = "iget"
    IPUT = "iput"
    NEW_ARRAY = "new-array"
    APUT = "aput"
    FILLED_NEW_ARRAY = "filled-new-array"
    RETURN_VALUE = "return-value"
    RETURN_VOID = "return-void"
    OTHER = "other"


WIDE_TYPES = ("J", "D")

ACCESS_FLAG_WORDS = frozenset({
    "public", "private", "protected", "static", "final", "synthetic",
    "abstract", "native", "bridge", "varargs", "declared-synchronized",
    "synchronized", "strictfp", "transient", "volatile", "enum",
    "constructor", "interface", "annotation",
})

_FLAG_ORDER = (
    "public", "private", "protected", "static", "final", "synchronized",
    "declared-synchronized", "volatile", "transient", "native", "interface",
    "abstract", "strictfp", "synthetic", "annotation", "enum", "constructor",
    "bridge", "varargs",
)


@dataclass(frozen=True)
class MethodRef:
    class_name: str
    name: str
    params: tuple[str, ...]
    ret: str

    @property
    def key(self) -> str:
        return f"{self.class_name}->{self.name}({''.join(self.params)}){self.ret}"


@dataclass(frozen=True)
class FieldRef:
    class_name: str
    name: str
    type_desc: str

    @property
    def key(self) -> str:
        return f"{self.class_name}->{self.name}:{self.type_desc}"


@dataclass(frozen=True)
class IrInstruction:
    index: int
    op: Op
    mnemonic: str
    dest: str | None = None
    src: str | None = None
    literal: str | None = None
    regs: tuple[str, ...] = ()
    method: MethodRef | None = None
    field_ref: FieldRef | None = None
    obj: str | None = None
    array: str | None = None
    idx_reg: str | None = None
    type_desc: str | None = None


@dataclass
class IrField:
    name: str
    type_desc: str
    static: bool
    flags: frozenset[str]
    constant: str | None = None
    annotations: tuple[str, ...] = ()

    def __eq__(self, other) -> bool:
        if not isinstance(other, IrField):
            return NotImplemented
        return (self.name, self.type_desc, self.static, self.flags, self.constant,
                tuple(sorted(self.annotations))) == (
            other.name, other.type_desc, other.static, other.flags, other.constant,
            tuple(sorted(other.annotations)))


@dataclass
class IrMethod:
    class_name: str
    name: str
    params: tuple[str, ...]
    ret: str
    flags: frozenset[str]
    registers: int
    instructions: tuple[IrInstruction, ...]

    @property
    def signature(self) -> tuple[str, tuple[str, ...], str]:
        return (self.name, self.params, self.ret)

    @property
    def key(self) -> str:
        return f"{self.class_name}->{self.name}({''.join(self.params)}){self.ret}"

    @property
    def is_static(self) -> bool:
        return "static" in self.flags

    @property
    def access_flags(self) -> frozenset[str]:
        derived = {f for f in self.flags if f in ("public", "private", "protected", "static", "constructor")}
        if self.name == "<clinit>":
            derived.add("class-initializer")
        return frozenset(derived)

    def param_words(self) -> int:
        words = 0 if self.is_static else 1
        for p in self.params:
            words += 2 if p in WIDE_TYPES else 1
        return words

    def param_word_of(self, reg: str) -> int | None:
        """Map a register to its parameter word index, or None for a local."""
        if reg.startswith("p"):
            return int(reg[1:])
        n = int(reg[1:])
        first_param_reg = self.registers - self.param_words()
        if self.registers > 0 and n >= first_param_reg:
            return n - first_param_reg
        return None

    def param_index_of_word(self, word: int) -> int | None:
        """Parameter list index for a word, or None when the word is `this`."""
        w = word
        if not self.is_static:
            if w == 0:
                return None
            w -= 1
        acc = 0
        for i, p in enumerate(self.params):
            width = 2 if p in WIDE_TYPES else 1
            if acc <= w < acc + width:
                return i
            acc += width
        return None

    def __eq__(self, other) -> bool:
        if not isinstance(other, IrMethod):
            return NotImplemented
        return (self.class_name, self.name, self.params, self.ret, self.flags,
                self.registers, self.instructions) == (
            other.class_name, other.name, other.params, other.ret, other.flags,
            other.registers, other.instructions)


@dataclass
class IrClass:
    name: str
    super_name: str
    flags: frozenset[str]
    fields: list[IrField]
    methods: list[IrMethod]
    source_path: str

    def __eq__(self, other) -> bool:
        if not isinstance(other, IrClass):
            return NotImplemented
        return (self.name, self.super_name, self.flags, self.fields, self.methods) == (
            other.name, other.super_name, other.flags, other.fields, other.methods)


def split_type_list(s: str) -> tuple[str, ...]:
    """Split a concatenated descriptor list like "Lfoo/B;I[J" into descriptors."""
    out: list[str] = []
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == "[":
            j += 1
        if j < len(s) and s[j] == "L":
            k = s.index(";", j) + 1
        else:
            k = j + 1
        out.append(s[i:k])
        i = k
    return tuple(out)


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "0": "\0",
            "'": "'", '"': '"', "\\": "\\"}


def unescape_literal(raw: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(raw):
        c = raw[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        if i + 1 >= len(raw):
            out.append("\\")
            break
        nxt = raw[i + 1]
        if nxt == "u" and i + 5 < len(raw):
            out.append(chr(int(raw[i + 2:i + 6], 16)))
            i += 6
        elif nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        else:
            out.append(nxt)
            i += 2
    return "".join(out)


def escape_literal(text: str) -> str:
    out: list[str] = []
    for c in text:
        if c == "\\":
            out.append("\\\\")
        elif c == '"':
            out.append('\\"')
        elif c == "\n":
            out.append("\\n")
        elif c == "\t":
            out.append("\\t")
        elif c == "\r":
            out.append("\\r")
        elif 0x20 <= ord(c) <= 0x7E:
            out.append(c)
        else:
            out.append(f"\\u{ord(c):04x}")
    return "".join(out)


_METHOD_REF_RE = re.compile(r"^(\[*L[^;]+;|\[+[ZBSCIJFD])->([^(]+)\(([^)]*)\)(.+)$")
_FIELD_REF_RE = re.compile(r"^(\[*L[^;]+;)->([^:]+):(.+)$")


def parse_method_ref(text: str) -> MethodRef | None:
    m = _METHOD_REF_RE.match(text)
    if not m:
        return None
    return MethodRef(class_name=m.group(1), name=m.group(2),
                     params=split_type_list(m.group(3)), ret=m.group(4))


def parse_field_ref(text: str) -> FieldRef | None:
    m = _FIELD_REF_RE.match(text)
    if not m:
        return None
    return FieldRef(class_name=m.group(1), name=m.group(2), type_desc=m.group(3))


def _expand_register_list(inner: str) -> tuple[str, ...]:
    inner = inner.strip()
    if not inner:
        return ()
    if ".." in inner:
        lo, hi = [r.strip() for r in inner.split("..")]
        prefix = lo[0]
        return tuple(f"{prefix}{n}" for n in range(int(lo[1:]), int(hi[1:]) + 1))
    return tuple(r.strip() for r in inner.split(","))


def _strip_comment(line: str) -> str:
    if "#" in line and '"' not in line:
        line = line[: line.index("#")]
    return line.strip()


class _Lines:
    def __init__(self, text: str):
        self.raw = text.splitlines()
        self.pos = 0

    def next_significant(self) -> tuple[int, str] | None:
        while self.pos < len(self.raw):
            lineno = self.pos + 1
            line = _strip_comment(self.raw[self.pos])
            self.pos += 1
            if line:
                return lineno, line
        return None

    def peek_significant(self) -> tuple[int, str] | None:
        saved = self.pos
        item = self.next_significant()
        self.pos = saved
        return item


def _parse_instruction(index: int, line: str, path: str, lineno: int) -> IrInstruction:
    parts = line.split(None, 1)
    mnemonic = parts[0]
    rest = parts[1].strip() if len(parts) > 1 else ""

    def bad(msg: str) -> SmaliParseError:
        return SmaliParseError(f"{msg}: {line!r}", path=path, line=lineno)

    if mnemonic.startswith("const-string"):
        m = re.match(r"^([vp]\d+),\s*\"(.*)\"$", rest, re.S)
        if not m:
            raise bad("malformed const-string")
        return IrInstruction(index, Op.CONST_STRING, mnemonic, dest=m.group(1),
                             literal=unescape_literal(m.group(2)))
    if mnemonic.startswith("invoke-"):
        m = re.match(r"^\{(.*)\},\s*(\S+)$", rest)
        if not m:
            raise bad("malformed invoke")
        mref = parse_method_ref(m.group(2))
        if mref is None:
            raise bad("malformed method reference")
        return IrInstruction(index, Op.INVOKE, mnemonic,
                             regs=_expand_register_list(m.group(1)), method=mref)
    if mnemonic.startswith("move-result"):
        return IrInstruction(index, Op.MOVE_RESULT, mnemonic, dest=rest.strip())
    if mnemonic.startswith("move-exception"):
        return IrInstruction(index, Op.OTHER, mnemonic)
    if mnemonic.startswith("move"):
        regs = [r.strip() for r in rest.split(",")]
        if len(regs) != 2:
            raise bad("malformed move")
        return IrInstruction(index, Op.MOVE, mnemonic, dest=regs[0], src=regs[1])
    if mnemonic.startswith("sget"):
        m = re.match(r"^([vp]\d+),\s*(\S+)$", rest)
        fref = parse_field_ref(m.group(2)) if m else None
        if not m or fref is None:
            raise bad("malformed sget")
        return IrInstruction(index, Op.SGET, mnemonic, dest=m.group(1), field_ref=fref)
    if mnemonic.startswith("sput"):
        m = re.match(r"^([vp]\d+),\s*(\S+)$", rest)
        fref = parse_field_ref(m.group(2)) if m else None
        if not m or fref is None:
            raise bad("malformed sput")
        return IrInstruction(index, Op.SPUT, mnemonic, src=m.group(1), field_ref=fref)
    if mnemonic.startswith("iget"):
        m = re.match(r"^([vp]\d+),\s*([vp]\d+),\s*(\S+)$", rest)
        fref = parse_field_ref(m.group(3)) if m else None
        if not m or fref is None:
            raise bad("malformed iget")
        return IrInstruction(index, Op.IGET, mnemonic, dest=m.group(1), obj=m.group(2), field_ref=fref)
    if mnemonic.startswith("iput"):
        m = re.match(r"^([vp]\d+),\s*([vp]\d+),\s*(\S+)$", rest)
        fref = parse_field_ref(m.group(3)) if m else None
        if not m or fref is None:
            raise bad("malformed iput")
        return IrInstruction(index, Op.IPUT, mnemonic, src=m.group(1), obj=m.group(2), field_ref=fref)
    if mnemonic == "new-array":
        m = re.match(r"^([vp]\d+),\s*([vp]\d+),\s*(\S+)$", rest)
        if not m:
            raise bad("malformed new-array")
        return IrInstruction(index, Op.NEW_ARRAY, mnemonic, dest=m.group(1), src=m.group(2),
                             type_desc=m.group(3))
    if mnemonic.startswith("aget"):
        m = re.match(r"^([vp]\d+),\s*([vp]\d+),\s*([vp]\d+)$", rest)
        if not m:
            raise bad("malformed aget")
        return IrInstruction(index, Op.MOVE, mnemonic, dest=m.group(1), src=m.group(2),
                             idx_reg=m.group(3))
    if mnemonic.startswith("aput"):
        m = re.match(r"^([vp]\d+),\s*([vp]\d+),\s*([vp]\d+)$", rest)
        if not m:
            raise bad("malformed aput")
        return IrInstruction(index, Op.APUT, mnemonic, src=m.group(1), array=m.group(2),
                             idx_reg=m.group(3))
    if mnemonic.startswith("filled-new-array"):
        m = re.match(r"^\{(.*)\},\s*(\S+)$", rest)
        if not m:
            raise bad("malformed filled-new-array")
        return IrInstruction(index, Op.FILLED_NEW_ARRAY, mnemonic,
                             regs=_expand_register_list(m.group(1)), type_desc=m.group(2))
    if mnemonic == "return-void":
        return IrInstruction(index, Op.RETURN_VOID, mnemonic)
    if mnemonic.startswith("return"):
        return IrInstruction(index, Op.RETURN_VALUE, mnemonic, src=rest.strip())
    return IrInstruction(index, Op.OTHER, mnemonic)


_SKIP_BODY_DIRECTIVES = (
    ".param", ".line", ".prologue", ".local ", ".end local", ".restart local",
    ".source", ".catch", ".catchall",
)

_SKIP_BLOCK_DIRECTIVES = {
    ".packed-switch": ".end packed-switch",
    ".sparse-switch": ".end sparse-switch",
    ".array-data": ".end array-data",
}


def _skip_annotation(lines: _Lines, path: str, start_line: int) -> str:
    """Consume an .annotation block, returning its type descriptor."""
    item = lines.peek_significant()
    desc = ""
    if item is not None:
        m = re.match(r"^\.annotation\s+\w+\s+(\S+)$", item[1])
        if m:
            desc = m.group(1)
    depth = 0
    while True:
        item = lines.next_significant()
        if item is None:
            raise SmaliParseError("unbalanced .annotation block", path=path, line=start_line)
        _, line = item
        if line.startswith(".annotation"):
            depth += 1
        elif line == ".end annotation":
            depth -= 1
            if depth == 0:
                return desc


def _parse_method(lines: _Lines, class_name: str, header: str, path: str,
                  header_line: int) -> IrMethod:
    m = re.match(r"^\.method\s+((?:[\w-]+\s+)*)(\S+)\(([^)]*)\)(\S+)$", header)
    if not m:
        raise SmaliParseError(f"malformed .method directive: {header!r}", path=path, line=header_line)
    flags = frozenset(w for w in m.group(1).split() if w)
    name = m.group(2)
    params = split_type_list(m.group(3))
    ret = m.group(4)
    is_static = "static" in flags

    registers = 0
    locals_count: int | None = None
    instructions: list[IrInstruction] = []

    while True:
        item = lines.next_significant()
        if item is None:
            raise SmaliParseError(f"unbalanced .method block for {name}", path=path, line=header_line)
        lineno, line = item
        if line == ".end method":
            break
        if line.startswith(".registers"):
            registers = int(line.split()[1])
            continue
        if line.startswith(".locals"):
            locals_count = int(line.split()[1])
            continue
        if line.startswith(".annotation"):
            lines.pos -= 1
            _skip_annotation(lines, path, lineno)
            continue
        if any(line.startswith(d) for d in _SKIP_BODY_DIRECTIVES):
            continue
        blk = next((d for d in _SKIP_BLOCK_DIRECTIVES if line.startswith(d)), None)
        if blk is not None:
            end = _SKIP_BLOCK_DIRECTIVES[blk]
            while True:
                inner = lines.next_significant()
                if inner is None:
                    raise SmaliParseError(f"unbalanced {blk} block", path=path, line=lineno)
                if inner[1] == end:
                    break
            continue
        if line.startswith(":"):
            continue
        if line.startswith("."):
            continue
        instructions.append(_parse_instruction(len(instructions), line, path, lineno))

    param_words = (0 if is_static else 1) + sum(2 if p in WIDE_TYPES else 1 for p in params)
    if locals_count is not None and registers == 0:
        registers = locals_count + param_words

    return IrMethod(class_name=class_name, name=name, params=params, ret=ret,
                    flags=flags, registers=registers, instructions=tuple(instructions))


def parse_class(text: str, source: str = "<memory>") -> IrClass:
    lines = _Lines(text)
    item = lines.next_significant()
    if item is None or not item[1].startswith(".class"):
        lineno = item[0] if item is not None else 1
        raise SmaliParseError("missing .class header", path=source, line=lineno)
    lineno, header = item
    m = re.match(r"^\.class\s+((?:[\w-]+\s+)*)(\S+)$", header)
    if not m:
        raise SmaliParseError(f"malformed .class directive: {header!r}", path=source, line=lineno)
    class_flags = frozenset(w for w in m.group(1).split() if w)
    class_name = m.group(2)

    super_name = "Ljava/lang/Object;"
    fields: list[IrField] = []
    methods: list[IrMethod] = []

    while True:
        item = lines.next_significant()
        if item is None:
            break
        lineno, line = item
        if line.startswith(".super"):
            super_name = line.split()[1]
        elif line.startswith(".source") or line.startswith(".implements"):
            continue
        elif line.startswith(".annotation"):
            lines.pos -= 1
            _skip_annotation(lines, source, lineno)
        elif line.startswith(".field"):
            fields.append(_parse_field(lines, line, source, lineno))
        elif line.startswith(".method"):
            methods.append(_parse_method(lines, class_name, line, source, lineno))
        elif line.startswith(".end field"):
            continue
        else:
            continue

    return IrClass(name=class_name, super_name=super_name, flags=class_flags,
                   fields=fields, methods=methods, source_path=source)


def _parse_field(lines: _Lines, line: str, path: str, lineno: int) -> IrField:
    body = line[len(".field"):].strip()
    constant: str | None = None
    m = re.match(r'^(.*?)\s*=\s*"(.*)"$', body, re.S)
    if m:
        body = m.group(1)
        constant = unescape_literal(m.group(2))
    elif "=" in body and body.rindex("=") > body.rindex(":"):
        body = body[: body.rindex("=")].strip()

    words = body.split()
    flag_words = []
    for w in words[:-1]:
        if w in ACCESS_FLAG_WORDS:
            flag_words.append(w)
        else:
            raise SmaliParseError(f"malformed .field directive: {line!r}", path=path, line=lineno)
    nametype = words[-1]
    if ":" not in nametype:
        raise SmaliParseError(f"malformed .field directive: {line!r}", path=path, line=lineno)
    name, _, type_desc = nametype.partition(":")
    flags = frozenset(flag_words)

    annotations: list[str] = []
    nxt = lines.peek_significant()
    if nxt is not None and nxt[1].startswith(".annotation"):
        while True:
            peek = lines.peek_significant()
            if peek is None:
                raise SmaliParseError("unbalanced .field block", path=path, line=lineno)
            if peek[1].startswith(".annotation"):
                annotations.append(_skip_annotation(lines, path, peek[0]))
                continue
            if peek[1] == ".end field":
                lines.next_significant()
            break

    return IrField(name=name, type_desc=type_desc, static="static" in flags,
                   flags=flags, constant=constant, annotations=tuple(sorted(annotations)))


def _format_flags(flags: frozenset[str]) -> str:
    ordered = [f for f in _FLAG_ORDER if f in flags]
    ordered += sorted(flags - set(_FLAG_ORDER))
    return " ".join(ordered)


def format_instruction(ins: IrInstruction) -> str:
    if ins.op is Op.CONST_STRING:
        return f'{ins.mnemonic} {ins.dest}, "{escape_literal(ins.literal or "")}"'
    if ins.op is Op.INVOKE:
        regs = _format_reg_list(ins.mnemonic, ins.regs)
        return f"{ins.mnemonic} {regs}, {ins.method.key}"
    if ins.op is Op.MOVE_RESULT:
        return f"{ins.mnemonic} {ins.dest}"
    if ins.op is Op.MOVE:
        if ins.idx_reg is not None:
            return f"{ins.mnemonic} {ins.dest}, {ins.src}, {ins.idx_reg}"
        return f"{ins.mnemonic} {ins.dest}, {ins.src}"
    if ins.op is Op.SGET:
        return f"{ins.mnemonic} {ins.dest}, {ins.field_ref.key}"
    if ins.op is Op.SPUT:
        return f"{ins.mnemonic} {ins.src}, {ins.field_ref.key}"
    if ins.op is Op.IGET:
        return f"{ins.mnemonic} {ins.dest}, {ins.obj}, {ins.field_ref.key}"
    if ins.op is Op.IPUT:
        return f"{ins.mnemonic} {ins.src}, {ins.obj}, {ins.field_ref.key}"
    if ins.op is Op.NEW_ARRAY:
        return f"{ins.mnemonic} {ins.dest}, {ins.src}, {ins.type_desc}"
    if ins.op is Op.APUT:
        return f"{ins.mnemonic} {ins.src}, {ins.array}, {ins.idx_reg}"
    if ins.op is Op.FILLED_NEW_ARRAY:
        regs = _format_reg_list(ins.mnemonic, ins.regs)
        return f"{ins.mnemonic} {regs}, {ins.type_desc}"
    if ins.op is Op.RETURN_VALUE:
        return f"{ins.mnemonic} {ins.src}"
    if ins.op is Op.RETURN_VOID:
        return ins.mnemonic
    return ins.mnemonic


def _format_reg_list(mnemonic: str, regs: tuple[str, ...]) -> str:
    if mnemonic.endswith("/range") and regs:
        return f"{{{regs[0]} .. {regs[-1]}}}"
    return "{" + ", ".join(regs) + "}"


def format_class(cls: IrClass) -> str:
    out: list[str] = []
    flags = _format_flags(cls.flags)
    out.append(f".class {flags} {cls.name}" if flags else f".class {cls.name}")
    out.append(f".super {cls.super_name}")
    for f in cls.fields:
        line = ".field"
        ff = _format_flags(f.flags)
        if ff:
            line += f" {ff}"
        line += f" {f.name}:{f.type_desc}"
        if f.constant is not None:
            line += f' = "{escape_literal(f.constant)}"'
        out.append("")
        out.append(line)
        if f.annotations:
            for a in f.annotations:
                out.append(f"    .annotation runtime {a}")
                out.append("    .end annotation")
            out.append(".end field")
    for meth in cls.methods:
        out.append("")
        mf = _format_flags(meth.flags)
        head = f".method {mf} " if mf else ".method "
        out.append(f"{head}{meth.name}({''.join(meth.params)}){meth.ret}")
        out.append(f"    .registers {meth.registers}")
        for ins in meth.instructions:
            out.append(f"    {format_instruction(ins)}")
        out.append(".end method")
    return "\n".join(out) + "\n"


def parse_smali_file(path: Path, rel_path: str | None = None) -> IrClass:
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    return parse_class(text, source=rel_path if rel_path is not None else str(path))
