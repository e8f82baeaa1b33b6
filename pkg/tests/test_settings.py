"""Settings key definitions and third-party readability."""

import random

import pytest

from romscan.common import DiagnosticSink
from romscan.settings import (
    SettingDefinition,
    extract_setting_definitions,
    readability_verdict,
    setting_readable,
)
from romscan.smali import parse_class


def make_def(annotations=(), namespace="Secure", name="demo_key"):
    return SettingDefinition(namespace=namespace, name=name, field_name="DEMO_KEY",
                             class_name="Landroid/provider/Settings$Secure;",
                             annotations=tuple(sorted(annotations)))


def verdict_for(defined, annotations, sdk, name="demo_key", namespace="Secure"):
    defs = {}
    if defined:
        defs[(namespace, name)] = make_def(annotations, namespace=namespace, name=name)
    return readability_verdict(name, namespace, defs, sdk)


# Hand-computed truth table over defined x annotations x {29, 33}:
# (defined, annotations, sdk) -> (readable, reason).  An undefined key is
# always served; SystemApi always blocks; from API 31 a defined key
# additionally needs the Readable annotation.  Twelve rows: the four
# annotation sets at both API levels for a defined key, and the undefined
# key at both API levels in two namespaces.
TRUTH_TABLE = [
    (True, (), 29, True, "pre12-no-systemapi"),
    (True, (), 33, False, "post12-not-readable"),
    (True, ("Readable",), 29, True, "pre12-no-systemapi"),
    (True, ("Readable",), 33, True, "post12-readable"),
    (True, ("SystemApi",), 29, False, "pre12-systemapi"),
    (True, ("SystemApi",), 33, False, "post12-not-readable"),
    (True, ("Readable", "SystemApi"), 29, False, "both-annotations-system-only"),
    (True, ("Readable", "SystemApi"), 33, False, "both-annotations-system-only"),
    (False, (), 29, True, "undefined-setting"),
    (False, (), 33, True, "undefined-setting"),
    (False, (), 29, True, "undefined-setting"),   # Global namespace, see below
    (False, (), 33, True, "undefined-setting"),
]


@pytest.mark.parametrize("row,case", list(enumerate(TRUTH_TABLE)))
def test_readability_truth_table(row, case):
    defined, annotations, sdk, want_readable, want_reason = case
    namespace = "Global" if row >= 10 else "Secure"
    verdict = verdict_for(defined, annotations, sdk, namespace=namespace)
    assert verdict.readable is want_readable
    assert verdict.reason == want_reason
    assert verdict.defined is defined
    assert verdict.sdk_version == sdk


def test_verdict_invariants_over_all_combinations():
    # defined=False forces the undefined reason and readability; SystemApi
    # forces unreadable at every level
    for annotations in ((), ("Readable",), ("SystemApi",), ("Readable", "SystemApi")):
        for sdk in (21, 29, 30, 31, 33, 35):
            undefined = verdict_for(False, (), sdk)
            assert undefined.readable is True
            assert undefined.reason == "undefined-setting"
            verdict = verdict_for(True, annotations, sdk)
            if "SystemApi" in annotations:
                assert verdict.readable is False


def test_sdk_zero_treated_as_pre_gate_with_diagnostic():
    sink = DiagnosticSink()
    verdict = readability_verdict("demo_key", "Secure",
                                  {("Secure", "demo_key"): make_def()}, 0, sink)
    assert verdict.readable is True
    assert verdict.reason == "pre12-no-systemapi"
    assert [d.code for d in sink.items] == ["setting-sdk-unknown"]


def _readable_reference(defined, readable_ann, system_api, sdk):
    # independent restatement used only for the randomized cross-check
    if not defined:
        return True
    blocked = system_api or (sdk >= 31 and not readable_ann)
    return not blocked


def test_readability_randomized_against_reference():
    rng = random.Random(20240814)
    for _ in range(1000):
        defined = rng.random() < 0.8
        readable_ann = rng.random() < 0.5
        system_api = rng.random() < 0.5
        sdk = rng.randint(21, 35)
        definition = None
        if defined:
            annotations = []
            if readable_ann:
                annotations.append("Readable")
            if system_api:
                annotations.append("SystemApi")
            definition = make_def(annotations)
        expected = _readable_reference(defined, readable_ann, system_api, sdk)
        assert setting_readable(definition, sdk) is expected


SECURE_SMALI = """\
.class public Landroid/provider/Settings$Secure;
.super Ljava/lang/Object;

.field public static final GOOD_KEY:Ljava/lang/String; = "good_key"
    .annotation runtime Landroid/annotation/Readable;
    .end annotation
.end field

.field public static final HIDDEN_KEY:Ljava/lang/String; = "hidden_key"
    .annotation runtime Landroid/annotation/SystemApi;
    .end annotation
.end field

.field public static final BARE_KEY:Ljava/lang/String; = "bare_key"

.field public static DYNAMIC_KEY:Ljava/lang/String;

.field public static final NOT_A_KEY:I = 7

.field private instanceField:Ljava/lang/String;
"""

OTHER_SMALI = """\
.class public Lcom/example/NotSettings;
.super Ljava/lang/Object;

.field public static final SOME_KEY:Ljava/lang/String; = "some_key"
"""

TEN_FIELD_SMALI = """\
.class public Landroid/provider/Settings$Global;
.super Ljava/lang/Object;

.field public static final KEY_0:Ljava/lang/String; = "global_key_0"
.field public static final KEY_1:Ljava/lang/String; = "global_key_1"
.field public static final KEY_2:Ljava/lang/String; = "global_key_2"
.field public static final KEY_3:Ljava/lang/String; = "global_key_3"
.field public static final KEY_4:Ljava/lang/String; = "global_key_4"
.field public static final KEY_5:Ljava/lang/String; = "global_key_5"
.field public static final KEY_6:Ljava/lang/String; = "global_key_6"
.field public static final KEY_7:Ljava/lang/String; = "global_key_7"
.field public static final KEY_8:Ljava/lang/String; = "global_key_8"
.field public static final KEY_9:Ljava/lang/String; = "global_key_9"
"""


def test_extract_definitions_and_diagnostics():
    sink = DiagnosticSink()
    classes = [parse_class(SECURE_SMALI, "a.smali"), parse_class(OTHER_SMALI, "b.smali")]
    defs = extract_setting_definitions(classes, sink)
    assert set(defs) == {("Secure", "good_key"), ("Secure", "hidden_key"), ("Secure", "bare_key")}
    assert defs[("Secure", "good_key")].annotations == ("Readable",)
    assert defs[("Secure", "hidden_key")].annotations == ("SystemApi",)
    assert defs[("Secure", "bare_key")].annotations == ()
    codes = [d.code for d in sink.items]
    assert codes == ["setting-definition-not-constant"]
    assert "DYNAMIC_KEY" in sink.items[0].message


def test_extract_definitions_ten_field_class():
    classes = [parse_class(TEN_FIELD_SMALI, "g.smali")]
    defs = extract_setting_definitions(classes)
    assert len(defs) == 10
    assert set(defs) == {("Global", f"global_key_{i}") for i in range(10)}


def test_verdict_uses_namespace():
    classes = [parse_class(SECURE_SMALI, "a.smali")]
    defs = extract_setting_definitions(classes)
    in_secure = readability_verdict("good_key", "Secure", defs, 33)
    assert in_secure.defined and in_secure.readable
    assert in_secure.reason == "post12-readable"
    # the same name in another namespace is undefined there, hence readable
    in_global = readability_verdict("good_key", "Global", defs, 33)
    assert not in_global.defined and in_global.readable
    assert in_global.reason == "undefined-setting"


def test_rom_setting_definitions_match_expectations(rom_corpus, rom_expected):
    sink = DiagnosticSink()
    defs = extract_setting_definitions(rom_corpus, sink)
    expected = rom_expected["setting_definitions"]
    got = {name: d for (_, name), d in defs.items()}
    assert sorted(got) == sorted(expected)
    for name, want in expected.items():
        assert got[name].namespace == want["namespace"], name
        assert list(got[name].annotations) == want["annotations"], name
    assert [d.code for d in sink.items] == ["setting-definition-not-constant"]


def test_rom_setting_candidates_match_expectations(rom_corpus, rom_descriptor, rom_expected):
    defs = extract_setting_definitions(rom_corpus)
    sdk = rom_descriptor.sdk_version
    vulnerable = []
    for name, want in rom_expected["setting_candidates"].items():
        namespace = "Global" if name == "tracker_device_id" else "Secure"
        verdict = readability_verdict(name, namespace, defs, sdk)
        assert verdict.defined == want["defined"], name
        assert verdict.readable == want["readable"], name
        assert verdict.reason == want["reason"], name
        if verdict.readable:
            vulnerable.append(name)
    assert sorted(vulnerable) == rom_expected["vulnerable_settings"]


def test_rom_settings_before_readable_gate(rom_corpus, rom_expected):
    # below API 31 the Readable annotation is not required, but SystemApi
    # still blocks: only the shadowed bluetooth key stays unreadable
    defs = extract_setting_definitions(rom_corpus)
    readable = {
        name: readability_verdict(
            name, "Global" if name == "tracker_device_id" else "Secure",
            defs, 29).readable
        for name in rom_expected["setting_candidates"]
    }
    assert readable == {
        "nova_sim_imsi": True,
        "tracker_device_id": True,
        "nova_btaddr_shadow": False,
    }
