"""Service relay channels: direct returns, helper returns, aggregate folds."""

import pytest

from romscan.callgraph import build_call_graph
from romscan.common import DiagnosticSink
from romscan.config import ScanConfig
from romscan.selinux import AttributeResolver, assess_property, load_policy, load_property_contexts
from romscan.services import (
    detect_service_channels,
    find_service_leaks,
    is_service_class,
)
from romscan.smali import parse_class
from romscan.usages import extract_usages


def channels_for(sources, config=None, sink=None):
    config = config or ScanConfig()
    classes = [parse_class(text, f"unit/app/x/smali/c{i}.smali")
               for i, text in enumerate(sources)]
    graph = build_call_graph(classes)
    usages, _ = extract_usages(classes, graph, config)
    return detect_service_channels(classes, usages, config, sink=sink), classes


SERVICE_HEAD = """\
.class public Lcom/demo/DeviceService;
.super Lcom/demo/IDevice$Stub;
"""

READ_IMEI = """\
    const-string v0, "persist.demo.imei"
    const-string v1, ""
    invoke-static {v0, v1}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v0
"""


def test_service_class_detection():
    stub_child = parse_class(SERVICE_HEAD, "a.smali")
    platform_child = parse_class(
        ".class public La/B;\n.super Lcom/android/server/SystemService;\n", "b.smali")
    stub_itself = parse_class(
        ".class public Lcom/demo/IDevice$Stub;\n.super Landroid/os/Binder;\n", "c.smali")
    plain = parse_class(".class public La/C;\n.super Ljava/lang/Object;\n", "d.smali")
    assert is_service_class(stub_child)
    assert is_service_class(platform_child)
    assert not is_service_class(stub_itself)
    assert not is_service_class(plain)


def test_service_detection_walks_superclass_chain():
    base = parse_class(".class public La/Base;\n.super Lcom/demo/IDevice$Stub;\n", "a.smali")
    mid = parse_class(".class public La/Mid;\n.super La/Base;\n", "b.smali")
    leaf = parse_class(".class public La/Leaf;\n.super La/Mid;\n", "c.smali")
    by_name = {c.name: c for c in (base, mid, leaf)}
    assert is_service_class(leaf, by_name)
    # without the corpus the intermediate parents are invisible
    assert not is_service_class(leaf)
    loop_a = parse_class(".class public La/L1;\n.super La/L2;\n", "d.smali")
    loop_b = parse_class(".class public La/L2;\n.super La/L1;\n", "e.smali")
    cyc = {c.name: c for c in (loop_a, loop_b)}
    assert not is_service_class(loop_a, cyc)


def test_direct_return_channel():
    src = SERVICE_HEAD + f"""
.method public getImei()Ljava/lang/String;
    .registers 3
{READ_IMEI}    return-object v0
.end method
"""
    channels, _ = channels_for([src])
    assert len(channels) == 1
    ch = channels[0]
    assert ch.channel == "direct-return"
    assert ch.method == "getImei()Ljava/lang/String;"
    assert ch.usage.name.value == "persist.demo.imei"
    assert ch.hops == 0


def test_private_flows_become_diagnostics_not_channels():
    private_reader = SERVICE_HEAD + f"""
.method private secret()Ljava/lang/String;
    .registers 3
{READ_IMEI}    return-object v0
.end method
"""
    plain_class = f"""\
.class public Lcom/demo/Plain;
.super Ljava/lang/Object;

.method public getImei()Ljava/lang/String;
    .registers 3
{READ_IMEI}    return-object v0
.end method
"""
    sink = DiagnosticSink()
    channels, _ = channels_for([private_reader, plain_class], sink=sink)
    assert channels == []
    assert [d.code for d in sink.items] == ["service-flow-private"]
    assert "secret()Ljava/lang/String;" in sink.items[0].message
    assert "persist.demo.imei" in sink.items[0].message


def test_overwritten_value_is_not_returned():
    src = SERVICE_HEAD + f"""
.method public getImei()Ljava/lang/String;
    .registers 3
{READ_IMEI}    const-string v0, "scrubbed"
    return-object v0
.end method
"""
    channels, _ = channels_for([src])
    assert channels == []


HELPER_CHAIN = SERVICE_HEAD + f"""
.method private readIt()Ljava/lang/String;
    .registers 3
{READ_IMEI}    return-object v0
.end method

.method private hop1()Ljava/lang/String;
    .registers 1
    invoke-direct {{p0}}, Lcom/demo/DeviceService;->readIt()Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method

.method public getViaOne()Ljava/lang/String;
    .registers 1
    invoke-direct {{p0}}, Lcom/demo/DeviceService;->readIt()Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method

.method public getViaTwo()Ljava/lang/String;
    .registers 1
    invoke-direct {{p0}}, Lcom/demo/DeviceService;->hop1()Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method
"""


def test_helper_return_within_depth_limit():
    channels, _ = channels_for([HELPER_CHAIN])
    got = {(c.method, c.channel, c.hops) for c in channels}
    assert got == {
        ("getViaOne()Ljava/lang/String;", "via-helper-return", 1),
        ("getViaTwo()Ljava/lang/String;", "via-helper-return", 2),
    }


def test_helper_return_beyond_depth_limit_is_dropped():
    channels, _ = channels_for([HELPER_CHAIN], ScanConfig(service_helper_depth=1))
    got = {(c.method, c.hops) for c in channels}
    assert got == {("getViaOne()Ljava/lang/String;", 1)}


def test_aggregate_channel_through_container_call():
    src = SERVICE_HEAD + f"""
.method public dump(Ljava/util/Map;)Ljava/util/Map;
    .registers 5
{READ_IMEI}    const-string v1, "imei"
    invoke-interface {{p1, v1, v0}}, Ljava/util/Map;->put(Ljava/lang/Object;Ljava/lang/Object;)Ljava/lang/Object;
    return-object p1
.end method
"""
    channels, _ = channels_for([src])
    assert len(channels) == 1
    assert channels[0].channel == "via-aggregate"


def test_aggregate_that_never_escapes_is_no_channel():
    src = SERVICE_HEAD + f"""
.method public stash(Ljava/util/Map;)V
    .registers 5
{READ_IMEI}    const-string v1, "imei"
    invoke-interface {{p1, v1, v0}}, Ljava/util/Map;->put(Ljava/lang/Object;Ljava/lang/Object;)Ljava/lang/Object;
    return-void
.end method
"""
    channels, _ = channels_for([src])
    assert channels == []


def test_aggregate_survives_builder_call_chain():
    src = SERVICE_HEAD + """
.method public describe()Ljava/lang/String;
    .registers 5
    new-instance v0, Ljava/lang/StringBuilder;
    invoke-direct {v0}, Ljava/lang/StringBuilder;-><init>()V
    const-string v2, "persist.demo.imei"
    const-string v3, ""
    invoke-static {v2, v3}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v2
    invoke-virtual {v0, v2}, Ljava/lang/StringBuilder;->append(Ljava/lang/String;)Ljava/lang/StringBuilder;
    move-result-object v1
    invoke-virtual {v1}, Ljava/lang/StringBuilder;->toString()Ljava/lang/String;
    move-result-object v1
    return-object v1
.end method
"""
    channels, _ = channels_for([src])
    assert [(c.method, c.channel) for c in channels] == [
        ("describe()Ljava/lang/String;", "via-aggregate")]


def test_leak_filter_drops_readable_benign_and_unresolved():
    src = SERVICE_HEAD + f"""
.method public getImei()Ljava/lang/String;
    .registers 3
{READ_IMEI}    return-object v0
.end method

.method public getOpenMeid()Ljava/lang/String;
    .registers 3
    const-string v0, "persist.demo.meid.open"
    const-string v1, ""
    invoke-static {{v0, v1}}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method

.method public getModel()Ljava/lang/String;
    .registers 3
    const-string v0, "persist.demo.model"
    const-string v1, ""
    invoke-static {{v0, v1}}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method

.method public getForeign()Ljava/lang/String;
    .registers 3
    const-string v0, "gsm.demo.imei"
    const-string v1, ""
    invoke-static {{v0, v1}}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v0
    return-object v0
.end method

.method public relayDynamic(Landroid/content/Intent;)Ljava/lang/String;
    .registers 4
    const-string v0, "prop_key"
    invoke-virtual {{p1, v0}}, Landroid/content/Intent;->getStringExtra(Ljava/lang/String;)Ljava/lang/String;
    move-result-object v1
    const-string v2, ""
    invoke-static {{v1, v2}}, Landroid/os/SystemProperties;->get(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;
    move-result-object v1
    return-object v1
.end method
"""
    config = ScanConfig()
    channels, _ = channels_for([src], config)
    assert len(channels) == 5
    leaks = find_service_leaks(channels, config,
                               is_readable=lambda name: name == "persist.demo.meid.open")
    assert [(l.method, l.property_name) for l in leaks] == [
        ("getForeign()Ljava/lang/String;", "gsm.demo.imei"),
        ("getImei()Ljava/lang/String;", "persist.demo.imei"),
    ]
    assert all(l.identifier.value == "IMEI" for l in leaks)
    assert leaks[0].to_dict()["channel"] == "direct-return"
    assert leaks[0].to_dict()["public"] is True


# ---------------------------------------------------------------------------
# whole-image checks


@pytest.fixture(scope="module")
def rom_is_readable(rom_descriptor):
    root = rom_descriptor.root_path
    entries = load_property_contexts(root, rom_descriptor.context_files)
    policy = load_policy(root, rom_descriptor.policy_files)
    resolver = AttributeResolver(policy)
    subject = ScanConfig().selinux_subject

    def is_readable(name: str) -> bool:
        return assess_property(name, entries, policy, resolver, subject).readable

    return is_readable


def test_rom_service_channels(rom_corpus, rom_extraction):
    usages, _ = rom_extraction
    sink = DiagnosticSink()
    channels = detect_service_channels(rom_corpus, usages, ScanConfig(), sink=sink)
    got = {(c.service, c.method, c.channel) for c in channels}
    assert got == {
        ("Lcom/android/server/nova/NovaDeviceService;", "getDirectSerial()Ljava/lang/String;", "direct-return"),
        ("Lcom/android/server/nova/NovaDeviceService;", "getImeiFromHelper()Ljava/lang/String;", "via-helper-return"),
        ("Lcom/android/server/nova/NovaDeviceService;", "generatePostString()Ljava/lang/String;", "via-aggregate"),
        ("Lcom/android/server/nova/NovaStatsService;", "getModel()Ljava/lang/String;", "direct-return"),
    }
    private = [d.message for d in sink.items if d.code == "service-flow-private"]
    assert len(private) == 2
    assert any("helperRead" in d and "persist.nova.sec.svc.imei" in d for d in private)
    assert any("internalOnly" in d and "persist.nova.sec.svc.imsi" in d for d in private)


def test_rom_service_leaks_match_expectations(rom_corpus, rom_extraction,
                                              rom_is_readable, rom_expected):
    usages, _ = rom_extraction
    config = ScanConfig()
    channels = detect_service_channels(rom_corpus, usages, config)
    leaks = find_service_leaks(channels, config, rom_is_readable)
    got = sorted((l.to_dict() for l in leaks),
                 key=lambda d: (d["service"], d["method"]))
    want = sorted(rom_expected["service_leaks"],
                  key=lambda d: (d["service"], d["method"]))
    assert got == want
