"""Readability of Settings provider keys for third-party apps.

The framework's Settings namespace classes declare one String constant per
key.  From API level 31 the provider only serves a key to normal apps when
its constant carries a Readable annotation; SystemApi keys are off limits at
every level.  A key no constant declares is served unconditionally, so an
undefined name found in device code is readable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

from .common import DiagnosticSink

# Framework classes that declare settings keys, mapped to namespace labels.
SETTINGS_CLASSES: dict[str, str] = {
    "Landroid/provider/Settings$System;": "System",
    "Landroid/provider/Settings$Secure;": "Secure",
    "Landroid/provider/Settings$Global;": "Global",
}

SETTINGS_NAMESPACES: tuple[str, ...] = ("System", "Secure", "Global")

READABLE_ANNOTATION = "Readable;"
SYSTEM_API_ANNOTATION = "SystemApi;"

# First API level that requires the Readable annotation for app access.
READABLE_GATE_SDK = 31

STRING_TYPE = "Ljava/lang/String;"


@dataclass(frozen=True)
class SettingDefinition:
    namespace: str                   # System | Secure | Global
    name: str                        # the runtime key, e.g. "android_id"
    field_name: str
    class_name: str
    annotations: tuple[str, ...]     # basenames: "Readable", "SystemApi", ...

    @property
    def readable_annotated(self) -> bool:
        return "Readable" in self.annotations

    @property
    def system_api(self) -> bool:
        return "SystemApi" in self.annotations

    def to_dict(self) -> dict:
        return {
            "namespace": self.namespace,
            "name": self.name,
            "field_name": self.field_name,
            "annotations": list(self.annotations),
        }


def _annotation_basename(descriptor: str) -> str:
    tail = descriptor.rsplit("/", 1)[-1]
    return tail[:-1] if tail.endswith(";") else tail


def extract_setting_definitions(classes: list, sink: DiagnosticSink | None = None,
                                ) -> dict[tuple[str, str], SettingDefinition]:
    """Collect key constants from any Settings namespace classes in the corpus."""
    defs: dict[tuple[str, str], SettingDefinition] = {}
    for cls in classes:
        namespace = SETTINGS_CLASSES.get(cls.name)
        if namespace is None:
            continue
        for fld in cls.fields:
            if not fld.static or fld.type_desc != STRING_TYPE:
                continue
            if fld.constant is None:
                if sink:
                    sink.emit("setting-definition-not-constant",
                              f"{cls.name}->{fld.name} has no literal value",
                              cls.source_path)
                continue
            names = tuple(sorted({_annotation_basename(a) for a in fld.annotations}))
            definition = SettingDefinition(namespace=namespace, name=fld.constant,
                                           field_name=fld.name, class_name=cls.name,
                                           annotations=names)
            defs[(namespace, fld.constant)] = definition
    return defs


REASON_UNDEFINED = "undefined-setting"
REASON_PRE12_OPEN = "pre12-no-systemapi"
REASON_PRE12_SYSTEM = "pre12-systemapi"
REASON_POST12_READABLE = "post12-readable"
REASON_POST12_CLOSED = "post12-not-readable"
REASON_BOTH_SYSTEM_ONLY = "both-annotations-system-only"


@dataclass(frozen=True)
class SettingVerdict:
    name: str
    namespace: str
    defined: bool
    readable: bool
    reason: str
    sdk_version: int
    definition: SettingDefinition | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "namespace": self.namespace,
            "defined": self.defined,
            "readable": self.readable,
            "reason": self.reason,
            "sdk_version": self.sdk_version,
            "annotations": list(self.definition.annotations) if self.definition else [],
        }


def setting_readable(definition: SettingDefinition | None, sdk_version: int) -> bool:
    """Can an app with no special privilege read this key?"""
    if definition is None:
        return True
    if definition.system_api:
        return False
    if sdk_version >= READABLE_GATE_SDK:
        return definition.readable_annotated
    return True


def _verdict_reason(definition: SettingDefinition | None, sdk_version: int) -> str:
    if definition is None:
        return REASON_UNDEFINED
    if definition.readable_annotated and definition.system_api:
        return REASON_BOTH_SYSTEM_ONLY
    if sdk_version >= READABLE_GATE_SDK:
        if definition.readable_annotated and not definition.system_api:
            return REASON_POST12_READABLE
        return REASON_POST12_CLOSED
    if definition.system_api:
        return REASON_PRE12_SYSTEM
    return REASON_PRE12_OPEN


def readability_verdict(name: str, namespace: str,
                        definitions: dict[tuple[str, str], SettingDefinition],
                        sdk_version: int,
                        sink: DiagnosticSink | None = None) -> SettingVerdict:
    if sdk_version <= 0 and sink:
        sink.emit("setting-sdk-unknown",
                  f"sdk version {sdk_version} treated as below the annotation gate")
    definition = definitions.get((namespace, name))
    return SettingVerdict(
        name=name,
        namespace=namespace,
        defined=definition is not None,
        readable=setting_readable(definition, sdk_version),
        reason=_verdict_reason(definition, sdk_version),
        sdk_version=sdk_version,
        definition=definition,
    )
