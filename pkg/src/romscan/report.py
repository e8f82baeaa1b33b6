"""Findings documents, corpus aggregation, and table emission.

A scan produces one versioned findings document per ROM.  Any number of
findings documents fold into a corpus aggregate: per-brand and per-SDK
tallies, deduplicated name sets, and names recurring across devices of
one brand.  The fold is associative, so partial aggregates merge into
the same result as a single pass over all documents.

Serialization is canonical throughout (sorted keys, two-space indent,
trailing newline), so identical inputs always produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .common import Diagnostic, RomScanError
from .ingest import RomDescriptor

SCHEMA_VERSION = 1

FINDINGS_KIND = "rom-findings"
AGGREGATE_KIND = "corpus-aggregate"

_COUNT_KEYS = (
    "sensitive_properties",
    "vulnerable_properties",
    "sensitive_settings",
    "vulnerable_settings",
)


class SchemaError(RomScanError):
    """Raised when a document is not the expected kind or schema version."""


class InvariantError(RomScanError):
    """Raised when an aggregate violates its own counting invariants."""


def canonical_json_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=True) + "\n").encode("utf-8")


def _check_document(doc: dict, kind: str) -> None:
    found_kind = doc.get("kind")
    if found_kind != kind:
        raise SchemaError(f"expected a {kind} document, got kind {found_kind!r}")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"schema version mismatch: document has {version!r}, this tool reads {SCHEMA_VERSION}")


# ---------------------------------------------------------------------------
# per-ROM findings


def property_vulnerable(candidate, access, strict: bool) -> bool:
    """A property finding counts as vulnerable only when the candidate survived
    demotion and the policy grants the configured app domain read access."""
    return access is not None and candidate.demotion is None and access.readable_for(strict)


def setting_vulnerable(candidate, verdict) -> bool:
    return candidate.demotion is None and verdict.readable


@dataclass
class RomFindings:
    """Everything one scan learned about one ROM."""

    descriptor: RomDescriptor
    property_findings: list            # (SensitiveCandidate, PropertyAccess | None) pairs
    setting_findings: list             # (SensitiveCandidate, SettingVerdict) pairs
    service_channels: list             # ServiceLeak records
    diagnostics: list[Diagnostic] = field(default_factory=list)
    strict_selinux: bool = False

    def vulnerable_property_names(self) -> list[str]:
        names = {c.name for c, a in self.property_findings
                 if property_vulnerable(c, a, self.strict_selinux)}
        return sorted(names)

    def vulnerable_setting_names(self) -> list[str]:
        names = {c.name for c, v in self.setting_findings if setting_vulnerable(c, v)}
        return sorted(names)

    def to_dict(self) -> dict:
        property_rows = []
        for cand, access in self.property_findings:
            property_rows.append({
                "candidate": cand.to_dict(),
                "verdict": access.to_dict() if access is not None else None,
                "vulnerable": property_vulnerable(cand, access, self.strict_selinux),
            })
        setting_rows = []
        for cand, verdict in self.setting_findings:
            setting_rows.append({
                "candidate": cand.to_dict(),
                "verdict": verdict.to_dict(),
                "vulnerable": setting_vulnerable(cand, verdict),
            })
        diag_rows = [d.to_dict() for d in sorted(
            self.diagnostics, key=lambda d: (d.source, d.code, d.message))]
        return {
            "kind": FINDINGS_KIND,
            "schema_version": SCHEMA_VERSION,
            "strict_selinux": self.strict_selinux,
            "descriptor": self.descriptor.to_dict(),
            "property_findings": property_rows,
            "setting_findings": setting_rows,
            "service_channels": [leak.to_dict() for leak in self.service_channels],
            "diagnostics": diag_rows,
            "summary": {
                "sensitive_properties": len(property_rows),
                "vulnerable_properties": sum(r["vulnerable"] for r in property_rows),
                "sensitive_settings": len(setting_rows),
                "vulnerable_settings": sum(r["vulnerable"] for r in setting_rows),
                "service_channels": len(self.service_channels),
                "diagnostics": len(diag_rows),
            },
        }

    def to_json_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())


# ---------------------------------------------------------------------------
# corpus aggregation


def _device_record(doc: dict) -> dict:
    desc = doc["descriptor"]
    record = {
        "brand": desc["brand"],
        "model": desc["model"],
        "sdk_version": desc["sdk_version"],
    }
    record["sensitive_properties"] = len(doc["property_findings"])
    record["vulnerable_properties"] = sum(
        1 for row in doc["property_findings"] if row["vulnerable"])
    record["sensitive_settings"] = len(doc["setting_findings"])
    record["vulnerable_settings"] = sum(
        1 for row in doc["setting_findings"] if row["vulnerable"])
    return record


def _merge_records(a: dict, b: dict) -> dict:
    """Same device seen twice: elementwise max keeps the merge idempotent."""
    merged = dict(a)
    merged["sdk_version"] = max(a["sdk_version"], b["sdk_version"])
    for key in _COUNT_KEYS:
        merged[key] = max(a[key], b[key])
    return merged


def _concrete(name: str) -> bool:
    """Pattern placeholders ('*' holes) are not resolved names and stay out of
    the dedup sets and recurrence keys."""
    return "*" not in name


@dataclass
class CorpusAggregate:
    """Associative fold state over findings documents.

    Tallies per brand and per SDK version derive from the per-device
    records; the raw state keeps only what cannot be recomputed.
    """

    device_records: dict = field(default_factory=dict)
    # (brand, model) -> record dict with sdk_version and the four counts
    unique_properties: set = field(default_factory=set)
    unique_settings: set = field(default_factory=set)
    vulnerable_sightings: dict = field(default_factory=dict)
    # ("property" | "setting", name) -> {(brand, model), ...}

    @classmethod
    def from_findings_doc(cls, doc: dict) -> "CorpusAggregate":
        _check_document(doc, FINDINGS_KIND)
        agg = cls()
        record = _device_record(doc)
        device = (record["brand"], record["model"])
        agg.device_records[device] = record
        for row in doc["property_findings"]:
            name = row["candidate"]["name"]
            if not _concrete(name):
                continue
            agg.unique_properties.add(name)
            if row["vulnerable"]:
                agg.vulnerable_sightings.setdefault(("property", name), set()).add(device)
        for row in doc["setting_findings"]:
            name = row["candidate"]["name"]
            if not _concrete(name):
                continue
            agg.unique_settings.add(name)
            if row["vulnerable"]:
                agg.vulnerable_sightings.setdefault(("setting", name), set()).add(device)
        return agg

    def merge(self, other: "CorpusAggregate") -> "CorpusAggregate":
        merged = CorpusAggregate()
        merged.device_records = dict(self.device_records)
        for device, record in other.device_records.items():
            if device in merged.device_records:
                merged.device_records[device] = _merge_records(
                    merged.device_records[device], record)
            else:
                merged.device_records[device] = record
        merged.unique_properties = self.unique_properties | other.unique_properties
        merged.unique_settings = self.unique_settings | other.unique_settings
        merged.vulnerable_sightings = {
            key: set(devices) for key, devices in self.vulnerable_sightings.items()}
        for key, devices in other.vulnerable_sightings.items():
            merged.vulnerable_sightings.setdefault(key, set()).update(devices)
        return merged

    # -- derived views ------------------------------------------------------

    def _tally(self, records: list[dict]) -> dict:
        tally = {key: 0 for key in _COUNT_KEYS}
        for record in records:
            for key in _COUNT_KEYS:
                tally[key] += record[key]
        tally["devices"] = len(records)
        tally["sensitive_devices"] = sum(
            1 for r in records if r["sensitive_properties"] or r["sensitive_settings"])
        tally["vulnerable_devices"] = sum(
            1 for r in records if r["vulnerable_properties"] or r["vulnerable_settings"])
        return tally

    def brands(self) -> list[str]:
        return sorted({brand for brand, _ in self.device_records})

    def per_brand(self) -> dict:
        out = {}
        for brand in self.brands():
            records = [r for (b, _), r in self.device_records.items() if b == brand]
            tally = self._tally(records)
            by_version: dict[str, int] = {}
            for record in records:
                key = str(record["sdk_version"])
                by_version[key] = by_version.get(key, 0) + 1
            tally["devices_by_version"] = dict(sorted(by_version.items()))
            out[brand] = tally
        return out

    def per_version(self) -> dict:
        versions = sorted({r["sdk_version"] for r in self.device_records.values()})
        out = {}
        for version in versions:
            records = [r for r in self.device_records.values()
                       if r["sdk_version"] == version]
            out[str(version)] = self._tally(records)
        return out

    def totals(self) -> dict:
        tally = self._tally(list(self.device_records.values()))
        tally["unique_properties"] = len(self.unique_properties)
        tally["unique_settings"] = len(self.unique_settings)
        return tally

    def recurrences(self) -> dict:
        """Vulnerable names seen on two or more devices of a single brand.

        Keys are 'property:<name>' / 'setting:<name>'; values list every
        (brand, model) the name appeared on.
        """
        out = {}
        for (kind, name), devices in self.vulnerable_sightings.items():
            per_brand: dict[str, int] = {}
            for brand, _ in devices:
                per_brand[brand] = per_brand.get(brand, 0) + 1
            if any(count >= 2 for count in per_brand.values()):
                out[f"{kind}:{name}"] = [list(d) for d in sorted(devices)]
        return dict(sorted(out.items()))

    def validate(self) -> None:
        per_brand = self.per_brand()
        totals = self.totals()
        for key in _COUNT_KEYS + ("devices", "sensitive_devices", "vulnerable_devices"):
            brand_sum = sum(tally[key] for tally in per_brand.values())
            if brand_sum != totals[key]:
                raise InvariantError(
                    f"per-brand {key} sums to {brand_sum}, totals say {totals[key]}")
            version_sum = sum(tally[key] for tally in self.per_version().values())
            if version_sum != totals[key]:
                raise InvariantError(
                    f"per-version {key} sums to {version_sum}, totals say {totals[key]}")
        for scope, tally in [("totals", totals)] + list(per_brand.items()):
            for kind in ("properties", "settings", "devices"):
                sensitive = tally[f"sensitive_{kind}"]
                vulnerable = tally[f"vulnerable_{kind}"]
                if vulnerable > sensitive:
                    raise InvariantError(
                        f"{scope}: vulnerable_{kind} {vulnerable} exceeds "
                        f"sensitive_{kind} {sensitive}")

    def to_dict(self) -> dict:
        records = [self.device_records[key] for key in sorted(self.device_records)]
        return {
            "kind": AGGREGATE_KIND,
            "schema_version": SCHEMA_VERSION,
            "devices": records,
            "per_brand": self.per_brand(),
            "per_version": self.per_version(),
            "totals": self.totals(),
            "unique_properties": sorted(self.unique_properties),
            "unique_settings": sorted(self.unique_settings),
            "recurrences": self.recurrences(),
        }

    def to_json_bytes(self) -> bytes:
        return canonical_json_bytes(self.to_dict())


def aggregate(docs: list[dict]) -> CorpusAggregate:
    """Fold findings documents into one aggregate; refuses mismatched schemas."""
    result = CorpusAggregate()
    for doc in docs:
        result = result.merge(CorpusAggregate.from_findings_doc(doc))
    result.validate()
    return result


# ---------------------------------------------------------------------------
# emission


def _int_percent(vulnerable: int, sensitive: int) -> int:
    """Integer percentage, half away from zero: the vulnerable share of the
    sensitive count.  Zero sensitive reports zero."""
    if sensitive == 0:
        return 0
    return (200 * vulnerable + sensitive) // (2 * sensitive)


def _csv_row(label: str, tally: dict, versions: list[str]) -> list:
    by_version = tally.get("devices_by_version", {})
    row = [
        label,
        tally["devices"],
        tally["sensitive_devices"],
        tally["vulnerable_devices"],
    ]
    row.extend(by_version.get(version, 0) for version in versions)
    row.extend([
        tally["sensitive_properties"],
        tally["vulnerable_properties"],
        _int_percent(tally["vulnerable_properties"], tally["sensitive_properties"]),
        tally["sensitive_settings"],
        tally["vulnerable_settings"],
        _int_percent(tally["vulnerable_settings"], tally["sensitive_settings"]),
    ])
    return row


def emit_csv(doc: dict) -> bytes:
    """Brand-per-row table: device tallies, per-SDK device counts, then
    sensitive/vulnerable counts with integer percentages."""
    versions = sorted(doc["per_version"], key=int)
    header = ["brand", "devices", "sensitive_devices", "vulnerable_devices"]
    header.extend(f"devices_sdk{version}" for version in versions)
    header.extend([
        "sensitive_properties", "vulnerable_properties", "vulnerable_properties_pct",
        "sensitive_settings", "vulnerable_settings", "vulnerable_settings_pct",
    ])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for brand in sorted(doc["per_brand"]):
        writer.writerow(_csv_row(brand, doc["per_brand"][brand], versions))
    totals = dict(doc["totals"])
    totals["devices_by_version"] = {
        version: doc["per_version"][version]["devices"] for version in versions}
    writer.writerow(_csv_row("total", totals, versions))
    return buf.getvalue().encode("utf-8")


def emit(aggregate_doc, fmt: str) -> bytes:
    """Render an aggregate as canonical JSON or as the brand table CSV."""
    if isinstance(aggregate_doc, CorpusAggregate):
        doc = aggregate_doc.to_dict()
    else:
        doc = aggregate_doc
        _check_document(doc, AGGREGATE_KIND)
    if fmt == "json":
        return canonical_json_bytes(doc)
    if fmt == "csv":
        return emit_csv(doc)
    raise ValueError(f"unknown emit format {fmt!r}")
