"""End-to-end scan of one unpacked ROM tree.

Orchestration only: classify the tree, parse the disassembled code,
extract property and settings usages, reduce them to identifier
candidates, judge each against the SELinux policy and the settings
readability rules, and trace service relay channels.  Per-file problems
become diagnostics and the scan continues with what parsed.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .callgraph import build_call_graph
from .common import Diagnostic, DiagnosticSink, PolicyParseError, SmaliParseError
from .config import ScanConfig
from .filtering import filter_usages
from .ingest import RomDescriptor, classify_rom, scan_property_like_names, scan_rom_strings
from .report import RomFindings, SCHEMA_VERSION
from .selinux import (
    AttributeResolver,
    PropertyAccess,
    SELinuxPolicy,
    assess_property,
    parse_cil,
    parse_property_contexts,
    parse_rules_dump,
)
from .services import detect_service_channels, find_service_leaks
from .settings import extract_setting_definitions, readability_verdict
from .smali import parse_smali_file
from .usages import extract_usages


def collect_smali_files(descriptor: RomDescriptor) -> list[tuple[str, Path]]:
    """(relative posix path, absolute path) for every smali file, unit by unit."""
    files: list[tuple[str, Path]] = []
    for unit in descriptor.code_units:
        path = descriptor.abspath(unit)
        if path.is_dir():
            for found in sorted(path.rglob("*.smali")):
                files.append((found.relative_to(descriptor.root_path).as_posix(), found))
        else:
            files.append((unit, path))
    return files


def parse_code_units(descriptor: RomDescriptor, sink: DiagnosticSink,
                     threads: int = 1) -> list:
    """Parse every smali file; broken files become diagnostics, not failures.

    Results keep the sorted-file order regardless of thread count, so the
    rest of the pipeline sees the same input either way.
    """
    files = collect_smali_files(descriptor)

    def parse_one(item: tuple[str, Path]):
        rel, path = item
        try:
            return parse_smali_file(path, rel_path=rel), None
        except SmaliParseError as exc:
            return None, Diagnostic("smali-parse-error", str(exc), rel)
        except OSError as exc:
            return None, Diagnostic("smali-read-error", str(exc), rel)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(parse_one, files))
    else:
        results = [parse_one(item) for item in files]

    classes = []
    for cls, diag in results:
        if diag is not None:
            sink.items.append(diag)
        else:
            classes.append(cls)
    return classes


def load_rom_contexts(descriptor: RomDescriptor, sink: DiagnosticSink) -> list:
    entries = []
    for rel in descriptor.context_files:
        try:
            text = descriptor.abspath(rel).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            sink.emit("context-read-error", str(exc), rel)
            continue
        entries.extend(parse_property_contexts(text, source=rel, sink=sink))
    return entries


def load_rom_policy(descriptor: RomDescriptor, sink: DiagnosticSink) -> SELinuxPolicy:
    policy = SELinuxPolicy()
    for rel in descriptor.policy_files:
        try:
            text = descriptor.abspath(rel).read_text(encoding="utf-8", errors="replace")
        except OSError as exc:
            sink.emit("policy-read-error", str(exc), rel)
            continue
        try:
            if rel.endswith(".cil"):
                policy.merge(parse_cil(text, source=rel, sink=sink))
            else:
                policy.merge(parse_rules_dump(text, source=rel, sink=sink))
        except PolicyParseError as exc:
            sink.emit("policy-parse-error", str(exc), rel)
    return policy


def scan(rom_root: Path, brand: str, model: str, config: ScanConfig | None = None,
         sdk_override: int | None = None, threads: int = 1) -> RomFindings:
    """Scan one ROM tree and return its findings."""
    config = config if config is not None else ScanConfig()
    config.validate()
    descriptor = classify_rom(Path(rom_root), brand, model)
    if sdk_override is not None:
        descriptor.sdk_version = sdk_override

    sink = DiagnosticSink()
    classes = parse_code_units(descriptor, sink, threads=threads)
    graph = build_call_graph(classes)
    usages, sink = extract_usages(classes, graph, config, sink)

    hits = scan_rom_strings(descriptor, config.min_string_length, config.active_prefixes())
    string_index = {h.text for h in hits}
    property_candidates, setting_candidates = filter_usages(
        usages, string_index, descriptor.brand, config)

    entries = load_rom_contexts(descriptor, sink)
    policy = load_rom_policy(descriptor, sink)
    resolver = AttributeResolver(policy, sink)

    assessed: dict[str, PropertyAccess] = {}

    def assess(name: str) -> PropertyAccess:
        if name not in assessed:
            assessed[name] = assess_property(
                name, entries, policy, resolver, config.selinux_subject, sink)
        return assessed[name]

    property_findings = []
    for cand in property_candidates:
        if "*" in cand.name:
            sink.emit("property-pattern-unassessed",
                      f"{cand.name} never matched a concrete name",
                      cand.usages[0].source_path if cand.usages else "")
            property_findings.append((cand, None))
            continue
        property_findings.append((cand, assess(cand.name)))

    definitions = extract_setting_definitions(classes, sink)
    if descriptor.framework_unit is None:
        sink.emit("framework-unit-missing",
                  "no framework code unit found; undefined-setting verdicts are low confidence")
    setting_findings = []
    for cand in setting_candidates:
        for namespace in cand.namespaces:
            verdict = readability_verdict(
                cand.name, namespace, definitions, descriptor.sdk_version, sink)
            setting_findings.append((cand, verdict))

    channels = detect_service_channels(classes, usages, config, sink)
    leaks = find_service_leaks(
        channels, config,
        is_readable=lambda name: assess(name).readable_for(config.strict_selinux))

    return RomFindings(
        descriptor=descriptor,
        property_findings=property_findings,
        setting_findings=setting_findings,
        service_channels=leaks,
        diagnostics=sink.items,
        strict_selinux=config.strict_selinux,
    )


def pilot(rom_root: Path, config: ScanConfig | None = None) -> dict:
    """String-scan only: surface property-like names without code analysis."""
    config = config if config is not None else ScanConfig()
    config.validate()
    descriptor = classify_rom(Path(rom_root), brand="", model="")
    hits = scan_rom_strings(descriptor, config.min_string_length, config.active_prefixes())
    return {
        "kind": "string-pilot",
        "schema_version": SCHEMA_VERSION,
        "string_hits": len(hits),
        "property_like_names": scan_property_like_names(hits),
    }


def oracle_agreement(seeds: int) -> dict:
    """Sweep random device models and compare the analyzer with the simulator.

    Every property is checked for both app domains against the policy
    evaluator, and every stored setting against the readability rules.
    """
    from .devicesim import (
        SIM_SUBJECTS,
        generate_random_spec,
        simulate_property_read,
        simulate_setting_read,
    )

    property_checks = 0
    setting_checks = 0
    mismatches: list[str] = []
    for seed in range(seeds):
        spec = generate_random_spec(seed)
        resolver = AttributeResolver(spec.policy)
        for name in sorted(spec.properties):
            for subject in SIM_SUBJECTS:
                access = assess_property(name, spec.contexts, spec.policy, resolver, subject)
                expected = simulate_property_read(spec, name, subject)
                property_checks += 1
                if access.readable != expected:
                    mismatches.append(f"seed {seed}: property {name} / {subject}")
        definitions = {(d.namespace, d.name): d for d in spec.setting_defs}
        for namespace, name in sorted(spec.settings):
            verdict = readability_verdict(name, namespace, definitions, spec.sdk_version)
            expected = simulate_setting_read(spec, namespace, name)
            setting_checks += 1
            if verdict.readable != expected:
                mismatches.append(f"seed {seed}: setting {namespace}/{name}")
    return {
        "seeds": seeds,
        "property_checks": property_checks,
        "setting_checks": setting_checks,
        "mismatches": mismatches,
    }
