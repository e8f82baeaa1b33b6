"""Scanner configuration: defaults, JSON config-file loading, and dump support.

Every tunable that the analyses consume lives here so a scan is fully
described by (ROM tree, brand, model, ScanConfig).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .common import ConfigError


class IdentifierClass(str, Enum):
    IMEI = "IMEI"
    MEID = "MEID"
    IMSI = "IMSI"
    ICCID = "ICCID"
    SERIAL_NUMBER = "SerialNumber"
    WIFI_MAC = "WifiMac"
    BLUETOOTH_MAC = "BluetoothMac"


# When several identifier classes match one name, the first in this order wins.
# Classes with brand-agnostic, highly specific keywords come first; SerialNumber
# is last because its keywords ("deviceid", ".sn", ...) are the most generic.
IDENTIFIER_PRIORITY: tuple[IdentifierClass, ...] = (
    IdentifierClass.IMEI,
    IdentifierClass.MEID,
    IdentifierClass.IMSI,
    IdentifierClass.ICCID,
    IdentifierClass.WIFI_MAC,
    IdentifierClass.BLUETOOTH_MAC,
    IdentifierClass.SERIAL_NUMBER,
)

DEFAULT_KEYWORDS: dict[IdentifierClass, tuple[str, ...]] = {
    IdentifierClass.IMEI: ("imei",),
    IdentifierClass.MEID: ("meid",),
    IdentifierClass.IMSI: ("imsi",),
    IdentifierClass.ICCID: ("iccid", "simserial"),
    IdentifierClass.SERIAL_NUMBER: ("serialno", "serial_no", "deviceid", "device_id", ".sn", "_sn"),
    IdentifierClass.WIFI_MAC: ("wifimac", "wifi_mac", "wlanaddr", "macaddr"),
    IdentifierClass.BLUETOOTH_MAC: ("btmac", "bt_mac", "btaddr", "bluetooth_mac"),
}

# Property-name prefixes treated as "looks like a system property" in string
# scans.  "sys." is a known fourth family but ships disabled by default.
DEFAULT_PROPERTY_PREFIXES: tuple[str, ...] = ("ro.", "persist.", "vendor.")
OPTIONAL_SYS_PREFIX = "sys."

DEFAULT_SYSTEM_COMPONENT_PREFIXES: tuple[str, ...] = (
    "/system/framework",
    "/system/priv-app",
    "/system_ext",
    "/vendor",
)

# Foreign-brand tokens that show up inside property names.  A name carrying a
# marker of brand X found on a ROM of brand Y != X is treated as a spoof value
# (copied code), not a real identifier store on this device.
DEFAULT_BRAND_MARKERS: dict[str, str] = {
    "miui": "xiaomi",
    "xiaomi": "xiaomi",
    "coloros": "oppo",
    "oppo": "oppo",
    "emui": "huawei",
    "huawei": "huawei",
    "flyme": "meizu",
    "meizu": "meizu",
    "oneplus": "oneplus",
    "funtouch": "vivo",
    "vivo": "vivo",
    "samsung": "samsung",
    "realme": "realme",
    "honor": "honor",
}

# Receiver methods that fold an argument into a container that may later be
# returned (string builders, maps, JSON objects, lists).
DEFAULT_AGGREGATE_METHODS: tuple[str, ...] = ("append", "put", "putOpt", "add", "insert", "push")


@dataclass
class ScanConfig:
    property_prefixes: tuple[str, ...] = DEFAULT_PROPERTY_PREFIXES
    include_sys_prefix: bool = False
    min_string_length: int = 4
    depth_limit: int = 5
    max_param_expansions: int = 8
    keywords: dict[IdentifierClass, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_KEYWORDS)
    )
    system_component_prefixes: tuple[str, ...] = DEFAULT_SYSTEM_COMPONENT_PREFIXES
    brand_markers: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_BRAND_MARKERS))
    selinux_subject: str = "untrusted_app"
    strict_selinux: bool = False
    service_helper_depth: int = 2
    aggregate_methods: tuple[str, ...] = DEFAULT_AGGREGATE_METHODS
    reset_min_value_length: int = 6

    def active_prefixes(self) -> tuple[str, ...]:
        if self.include_sys_prefix:
            return self.property_prefixes + (OPTIONAL_SYS_PREFIX,)
        return self.property_prefixes

    def validate(self) -> None:
        if self.min_string_length < 1:
            raise ConfigError("min_string_length must be >= 1")
        if self.depth_limit < 1:
            raise ConfigError("depth_limit must be >= 1")
        if self.max_param_expansions < 1:
            raise ConfigError("max_param_expansions must be >= 1")
        if self.reset_min_value_length < 1:
            raise ConfigError("reset_min_value_length must be >= 1")
        for cls in IdentifierClass:
            words = self.keywords.get(cls)
            if not words:
                raise ConfigError(f"keyword list for {cls.value} must be non-empty")
            for w in words:
                if w != w.lower():
                    raise ConfigError(f"keyword {w!r} for {cls.value} must be lowercase")
        if not self.property_prefixes:
            raise ConfigError("property_prefixes must be non-empty")

    def to_dict(self) -> dict:
        return {
            "property_prefixes": list(self.property_prefixes),
            "include_sys_prefix": self.include_sys_prefix,
            "min_string_length": self.min_string_length,
            "depth_limit": self.depth_limit,
            "max_param_expansions": self.max_param_expansions,
            "keywords": {cls.value: list(words) for cls, words in sorted(self.keywords.items(), key=lambda kv: kv[0].value)},
            "system_component_prefixes": list(self.system_component_prefixes),
            "brand_markers": dict(sorted(self.brand_markers.items())),
            "selinux_subject": self.selinux_subject,
            "strict_selinux": self.strict_selinux,
            "service_helper_depth": self.service_helper_depth,
            "aggregate_methods": list(self.aggregate_methods),
            "reset_min_value_length": self.reset_min_value_length,
        }

    def dump_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _require_type(value, expected, name: str):
    if not isinstance(value, expected):
        raise ConfigError(f"config field {name!r} has wrong type (expected {expected.__name__})")
    return value


def load_config(path: Path) -> ScanConfig:
    """Load a JSON config file; unknown keys are rejected, missing keys keep defaults."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")

    cfg = ScanConfig()
    known = set(cfg.to_dict().keys())
    unknown = set(raw.keys()) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    if "property_prefixes" in raw:
        cfg.property_prefixes = tuple(
            _require_type(p, str, "property_prefixes[]") for p in _require_type(raw["property_prefixes"], list, "property_prefixes")
        )
    if "include_sys_prefix" in raw:
        cfg.include_sys_prefix = _require_type(raw["include_sys_prefix"], bool, "include_sys_prefix")
    if "min_string_length" in raw:
        cfg.min_string_length = _require_type(raw["min_string_length"], int, "min_string_length")
    if "depth_limit" in raw:
        cfg.depth_limit = _require_type(raw["depth_limit"], int, "depth_limit")
    if "max_param_expansions" in raw:
        cfg.max_param_expansions = _require_type(raw["max_param_expansions"], int, "max_param_expansions")
    if "keywords" in raw:
        table = _require_type(raw["keywords"], dict, "keywords")
        parsed: dict[IdentifierClass, tuple[str, ...]] = dict(DEFAULT_KEYWORDS)
        for key, words in table.items():
            try:
                cls = IdentifierClass(key)
            except ValueError as exc:
                raise ConfigError(f"unknown identifier class {key!r} in keywords") from exc
            parsed[cls] = tuple(_require_type(w, str, f"keywords[{key}][]") for w in _require_type(words, list, f"keywords[{key}]"))
        cfg.keywords = parsed
    if "system_component_prefixes" in raw:
        cfg.system_component_prefixes = tuple(
            _require_type(p, str, "system_component_prefixes[]")
            for p in _require_type(raw["system_component_prefixes"], list, "system_component_prefixes")
        )
    if "brand_markers" in raw:
        table = _require_type(raw["brand_markers"], dict, "brand_markers")
        cfg.brand_markers = {
            _require_type(k, str, "brand_markers key").lower(): _require_type(v, str, "brand_markers value").lower()
            for k, v in table.items()
        }
    if "selinux_subject" in raw:
        cfg.selinux_subject = _require_type(raw["selinux_subject"], str, "selinux_subject")
    if "strict_selinux" in raw:
        cfg.strict_selinux = _require_type(raw["strict_selinux"], bool, "strict_selinux")
    if "service_helper_depth" in raw:
        cfg.service_helper_depth = _require_type(raw["service_helper_depth"], int, "service_helper_depth")
    if "aggregate_methods" in raw:
        cfg.aggregate_methods = tuple(
            _require_type(m, str, "aggregate_methods[]") for m in _require_type(raw["aggregate_methods"], list, "aggregate_methods")
        )
    if "reset_min_value_length" in raw:
        cfg.reset_min_value_length = _require_type(raw["reset_min_value_length"], int, "reset_min_value_length")

    cfg.validate()
    return cfg
