"""ROM tree ingestion: file classification, build metadata, binary string scan.

The scanner consumes an unpacked ROM directory whose code has already been
disassembled to smali-style text.  This module walks the tree and sorts the
relevant files into:

  * code units     - maximal directories containing only .smali files
                     (plus loose .smali files outside such directories)
  * context files  - basename ends with "property_contexts"
  * policy files   - ".cil" policy text or ".rules" normalized rule dumps
  * build.prop     - shallowest instance wins

It also provides the strings-style scan over raw bytes used both for the
pilot survey of property-like names and for candidate corroboration.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .common import IngestError

_SDK_KEY = "ro.build.version.sdk"


@dataclass
class RomDescriptor:
    root_path: Path
    brand: str
    model: str
    sdk_version: int = 0
    code_units: list[str] = field(default_factory=list)
    context_files: list[str] = field(default_factory=list)
    policy_files: list[str] = field(default_factory=list)
    framework_unit: str | None = None
    build_prop_path: str | None = None

    def abspath(self, rel: str) -> Path:
        return self.root_path / PurePosixPath(rel)

    def to_dict(self) -> dict:
        return {
            "brand": self.brand,
            "model": self.model,
            "sdk_version": self.sdk_version,
            "code_units": list(self.code_units),
            "context_files": list(self.context_files),
            "policy_files": list(self.policy_files),
            "framework_unit": self.framework_unit,
            "build_prop_path": self.build_prop_path,
        }


@dataclass(frozen=True)
class BinaryStringHit:
    file_path: str
    offset: int
    text: str
    property_like: bool


def read_sdk_version(build_prop_text: str) -> int:
    """Parse ro.build.version.sdk out of key=value lines; 0 when absent or malformed."""
    for line in build_prop_text.splitlines():
        line = line.strip()
        if line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        if key.strip() == _SDK_KEY:
            try:
                n = int(value.strip())
            except ValueError:
                return 0
            return n if n >= 1 else 0
    return 0


def _rel_posix(path: Path, root: Path) -> str:
    return PurePosixPath(path.relative_to(root)).as_posix()


def classify_rom(root: Path, brand: str, model: str) -> RomDescriptor:
    """Walk the tree once and classify everything the pipeline consumes.

    A directory is a code unit when its whole subtree consists of .smali files
    only (and contains at least one); we keep the maximal such directories.
    .smali files living next to other file kinds become single-file units.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"ROM root is not a readable directory: {root}")

    subtree_all_smali: dict[Path, bool] = {}
    subtree_has_smali: dict[Path, bool] = {}
    context_files: list[str] = []
    policy_files: list[str] = []
    build_props: list[Path] = []
    loose_smali: list[Path] = []
    dir_children: dict[Path, list[Path]] = {}

    for dirpath, dirnames, filenames in os.walk(root, topdown=False):
        d = Path(dirpath)
        dirnames.sort()
        filenames.sort()
        children = [d / name for name in dirnames]
        dir_children[d] = children
        files_all_smali = all(name.endswith(".smali") for name in filenames)
        files_have_smali = any(name.endswith(".smali") for name in filenames)
        kids_all = all(subtree_all_smali.get(c, False) for c in children)
        kids_have = any(subtree_has_smali.get(c, False) for c in children)
        subtree_all_smali[d] = files_all_smali and kids_all
        subtree_has_smali[d] = files_have_smali or kids_have

        for name in filenames:
            p = d / name
            if name.endswith("property_contexts"):
                context_files.append(_rel_posix(p, root))
            elif name.endswith(".cil") or name.endswith(".rules"):
                policy_files.append(_rel_posix(p, root))
            elif name == "build.prop":
                build_props.append(p)

    def is_pure(d: Path) -> bool:
        return subtree_all_smali.get(d, False) and subtree_has_smali.get(d, False)

    code_unit_dirs: list[Path] = []

    def collect_units(d: Path) -> None:
        if is_pure(d):
            code_unit_dirs.append(d)
            return
        for name in sorted(os.listdir(d)):
            p = d / name
            if p.is_dir():
                collect_units(p)
            elif name.endswith(".smali"):
                loose_smali.append(p)

    collect_units(root)

    code_units = sorted(_rel_posix(p, root) for p in code_unit_dirs + loose_smali)

    framework_unit = None
    for unit in code_units:
        if "framework" in PurePosixPath(unit).name:
            framework_unit = unit
            break

    build_prop_path = None
    sdk_version = 0
    if build_props:
        best = min(build_props, key=lambda p: (len(p.relative_to(root).parts), _rel_posix(p, root)))
        build_prop_path = _rel_posix(best, root)
        try:
            sdk_version = read_sdk_version(best.read_text(encoding="utf-8", errors="replace"))
        except OSError as exc:
            raise IngestError(f"cannot read {best}: {exc}") from exc

    return RomDescriptor(
        root_path=root,
        brand=brand,
        model=model,
        sdk_version=sdk_version,
        code_units=code_units,
        context_files=sorted(context_files),
        policy_files=sorted(policy_files),
        framework_unit=framework_unit,
        build_prop_path=build_prop_path,
    )


def extract_binary_strings(file: Path, min_len: int, prefixes: tuple[str, ...],
                           rel_path: str | None = None) -> list[BinaryStringHit]:
    """Return every maximal run of >= min_len printable ASCII bytes in the file."""
    if min_len < 1:
        raise IngestError(f"min_len must be >= 1, got {min_len}")
    try:
        data = Path(file).read_bytes()
    except OSError as exc:
        raise IngestError(f"cannot read {file}: {exc}") from exc
    pattern = re.compile(b"[\\x20-\\x7e]{%d,}" % min_len)
    path_str = rel_path if rel_path is not None else str(file)
    hits = []
    for m in pattern.finditer(data):
        text = m.group().decode("ascii")
        hits.append(BinaryStringHit(
            file_path=path_str,
            offset=m.start(),
            text=text,
            property_like=text.startswith(tuple(prefixes)),
        ))
    return hits


def scan_property_like_names(hits: list[BinaryStringHit]) -> list[str]:
    """Deduplicated, sorted property-like names from a hit list."""
    return sorted({h.text for h in hits if h.property_like})


def scan_rom_strings(descriptor: RomDescriptor, min_len: int,
                     prefixes: tuple[str, ...]) -> list[BinaryStringHit]:
    """String-scan every regular file outside the code units.

    Disassembled code text is excluded: its constants enter the pipeline as
    code, and counting them here would make every resolved name corroborate
    itself.  Hit paths are ROM-relative.
    """
    root = descriptor.root_path
    unit_dirs = [PurePosixPath(u) for u in descriptor.code_units]

    def in_code_unit(rel: str) -> bool:
        rp = PurePosixPath(rel)
        for u in unit_dirs:
            if rp == u or str(rp).startswith(str(u) + "/"):
                return True
        return False

    hits: list[BinaryStringHit] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            p = Path(dirpath) / name
            rel = _rel_posix(p, root)
            if in_code_unit(rel):
                continue
            hits.extend(extract_binary_strings(p, min_len, prefixes, rel_path=rel))
    hits.sort(key=lambda h: (h.file_path, h.offset))
    return hits
