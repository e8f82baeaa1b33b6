"""Whole-image checks on the bundled ROM tree against hand-computed expectations."""

import json

import pytest

from romscan.ingest import read_sdk_version
from romscan.smali import Op

from conftest import FIXTURES
from oracle_strings import expected_resolutions

ROM_ROOT = FIXTURES / "rom"
EXPECTED = json.loads((FIXTURES / "rom_expected.json").read_text())


@pytest.fixture(scope="module")
def descriptor(rom_descriptor):
    return rom_descriptor


@pytest.fixture(scope="module")
def corpus(rom_corpus):
    return rom_corpus


@pytest.fixture(scope="module")
def extraction(rom_extraction):
    return rom_extraction


def test_rom_classification(descriptor):
    assert descriptor.code_units == EXPECTED["units"]
    assert descriptor.framework_unit == EXPECTED["framework_unit"]
    assert descriptor.context_files == EXPECTED["context_files"]
    assert descriptor.policy_files == EXPECTED["policy_files"]
    assert descriptor.build_prop_path == "system/build.prop"
    assert descriptor.sdk_version == EXPECTED["device"]["sdk"]
    text = (ROM_ROOT / descriptor.build_prop_path).read_text()
    assert read_sdk_version(text) == EXPECTED["device"]["sdk"]


def test_usage_totals(extraction):
    usages, _ = extraction
    assert len(usages) == EXPECTED["usage_total"]
    props = [u for u in usages if u.kind == "property"]
    sets = [u for u in usages if u.kind == "setting"]
    assert len(props) == EXPECTED["property_usage_total"]
    assert len(sets) == EXPECTED["setting_usage_total"]


def test_usage_counts_per_unit(extraction):
    usages, _ = extraction
    counts = {}
    for u in usages:
        unit = "/".join(u.source_path.split("/")[:3])
        counts[unit] = counts.get(unit, 0) + 1
    assert counts == EXPECTED["usage_counts_by_unit"]


def test_property_idiom_histogram(extraction):
    usages, _ = extraction
    hist = {}
    for u in usages:
        if u.kind == "property":
            hist[u.idiom] = hist.get(u.idiom, 0) + 1
    assert hist == EXPECTED["property_usages_by_idiom"]


def test_property_status_histogram(extraction):
    usages, _ = extraction
    hist = {}
    for u in usages:
        if u.kind == "property":
            hist[u.name.status] = hist.get(u.name.status, 0) + 1
    assert hist == EXPECTED["property_usages_by_status"]
    partials = [list(u.name.fragments) for u in usages
                if u.kind == "property" and u.name.status == "partial"]
    assert partials == EXPECTED["partial_fragments"]


def test_setting_usage_records(extraction):
    usages, _ = extraction
    got = sorted((u.namespace, u.operation, u.name.value)
                 for u in usages if u.kind == "setting")
    want = sorted((s["namespace"], s["operation"], s["name"])
                  for s in EXPECTED["setting_usages"])
    assert got == want


def test_expected_rom_diagnostics(extraction):
    _, diags = extraction
    codes = {d.code for d in diags.items}
    assert "reflection-foreign-target" in codes
    assert "reflection-plumbing-unused" in codes
    # successfully classified reflection plumbing must not be reported unused
    assert "reflection-field-unused" not in codes
    assert "reflection-return-unused" not in codes


def test_every_property_site_agrees_with_oracle(corpus, extraction):
    """The backward tracer and the forward oracle agree at every direct site.

    Exec and reflection sites transform the traced value before it becomes a
    property name, so the comparison covers the direct-call sites where the
    traced register is the name itself.
    """
    usages, _ = extraction
    methods = {}
    for cls in corpus:
        for m in cls.methods:
            methods[m.key] = m
    checked = 0
    sites = {}
    for u in usages:
        if u.kind == "property" and u.idiom == "direct-call":
            sites.setdefault((u.site.method_key, u.site.index), set()).add(u.name.fragments)
    for (mkey, index), got in sorted(sites.items()):
        ins = methods[mkey].instructions[index]
        assert ins.op is Op.INVOKE
        want = expected_resolutions(corpus, mkey, index, ins.regs[0])
        assert got == want, f"disagreement at {mkey}@{index}"
        checked += 1
    assert checked >= 20
