import pytest

from romscan.common import SmaliParseError
from romscan.smali import (
    Op,
    format_class,
    parse_class,
    parse_method_ref,
    split_type_list,
    unescape_literal,
)

from conftest import FIXTURES


def read_fixture(name: str) -> str:
    return (FIXTURES / "ir" / name).read_text()


def test_minimal_class_structure():
    cls = parse_class(read_fixture("minimal.smali"), "minimal.smali")
    assert cls.name == "Lfix/Minimal;"
    assert cls.super_name == "Ljava/lang/Object;"
    assert len(cls.methods) == 2
    assert [len(m.instructions) for m in cls.methods] == [5, 5]


def test_missing_class_header_errors_at_line_one():
    with pytest.raises(SmaliParseError) as err:
        parse_class("hello\n.super Ljava/lang/Object;\n", "bad.smali")
    assert err.value.line == 1


def test_unbalanced_method_block():
    text = ".class Lx/Y;\n.super Ljava/lang/Object;\n.method public go()V\n    .registers 1\n"
    with pytest.raises(SmaliParseError) as err:
        parse_class(text, "bad.smali")
    assert err.value.line == 3


def test_reflection_fixture_has_three_invokes():
    cls = parse_class(read_fixture("reflect_fetch.smali"), "reflect_fetch.smali")
    (method,) = cls.methods
    invokes = [i for i in method.instructions if i.op is Op.INVOKE]
    assert len(invokes) == 3
    targets = [(i.method.class_name, i.method.name) for i in invokes]
    assert targets == [
        ("Ljava/lang/Class;", "forName"),
        ("Ljava/lang/Class;", "getMethod"),
        ("Ljava/lang/reflect/Method;", "invoke"),
    ]


def test_unsupported_opcodes_become_other_with_index_preserved():
    cls = parse_class(read_fixture("minimal.smali"), "minimal.smali")
    second = cls.methods[1]
    assert [i.op for i in second.instructions] == [
        Op.OTHER, Op.OTHER, Op.OTHER, Op.MOVE, Op.RETURN_VALUE,
    ]
    assert [i.index for i in second.instructions] == [0, 1, 2, 3, 4]


def test_const_string_carries_literal_and_dest():
    cls = parse_class(read_fixture("minimal.smali"), "minimal.smali")
    ins = cls.methods[0].instructions[0]
    assert ins.op is Op.CONST_STRING
    assert ins.dest == "v0"
    assert ins.literal == "alpha"


def test_roundtrip_structural_identity():
    first = parse_class(read_fixture("roundtrip.smali"), "roundtrip.smali")
    printed = format_class(first)
    second = parse_class(printed, "reprinted")
    assert first == second


def test_roundtrip_field_details():
    cls = parse_class(read_fixture("roundtrip.smali"), "roundtrip.smali")
    by_name = {f.name: f for f in cls.fields}
    assert by_name["KEY"].constant == 'ro.fixture.key\n\t"quoted"'
    assert by_name["KEY"].static is True
    assert by_name["sName"].constant is None
    assert by_name["tag"].annotations == ("Lfix/Anno;",)
    assert by_name["count"].static is True


def test_aget_lowered_to_move_from_array_register():
    cls = parse_class(read_fixture("roundtrip.smali"), "roundtrip.smali")
    mix = next(m for m in cls.methods if m.name == "mix")
    aget = next(i for i in mix.instructions if i.mnemonic == "aget-object")
    assert aget.op is Op.MOVE
    assert aget.dest == "v6"
    assert aget.src == "v3"


def test_range_invoke_expands_registers():
    cls = parse_class(read_fixture("roundtrip.smali"), "roundtrip.smali")
    mix = next(m for m in cls.methods if m.name == "mix")
    rng = next(i for i in mix.instructions if i.mnemonic.endswith("/range"))
    assert rng.regs == ("v0", "v1")


def test_param_word_mapping_with_wide_types():
    cls = parse_class(read_fixture("roundtrip.smali"), "roundtrip.smali")
    mix = next(m for m in cls.methods if m.name == "mix")
    # static (J, String): words 0-1 are the long, word 2 the string
    assert mix.param_words() == 3
    assert mix.param_word_of("p2") == 2
    assert mix.param_word_of("v11") == 2
    assert mix.param_index_of_word(2) == 1
    assert mix.param_word_of("v0") is None
    init = next(m for m in cls.methods if m.name == "<init>")
    assert init.param_word_of("p0") == 0
    assert init.param_index_of_word(0) is None  # `this`
    assert init.param_index_of_word(1) == 0


def test_clinit_access_flag_derivation():
    text = (
        ".class Lx/Y;\n.super Ljava/lang/Object;\n"
        ".method static constructor <clinit>()V\n    .registers 1\n    return-void\n.end method\n"
    )
    cls = parse_class(text, "t.smali")
    assert "class-initializer" in cls.methods[0].access_flags


def test_split_type_list():
    assert split_type_list("Lfoo/B;I[J[Ljava/lang/String;") == (
        "Lfoo/B;", "I", "[J", "[Ljava/lang/String;",
    )
    assert split_type_list("") == ()


def test_parse_method_ref():
    ref = parse_method_ref("Landroid/os/SystemProperties;->get(Ljava/lang/String;)Ljava/lang/String;")
    assert ref is not None
    assert ref.class_name == "Landroid/os/SystemProperties;"
    assert ref.name == "get"
    assert ref.params == ("Ljava/lang/String;",)
    assert ref.key == "Landroid/os/SystemProperties;->get(Ljava/lang/String;)Ljava/lang/String;"


def test_unescape_literal():
    assert unescape_literal("a\\nb") == "a\nb"
    assert unescape_literal("\\u0041") == "A"
    assert unescape_literal('say \\"hi\\"') == 'say "hi"'
