import json
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"
ROM_ROOT = FIXTURES / "rom"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def rom_expected() -> dict:
    return json.loads((FIXTURES / "rom_expected.json").read_text())


@pytest.fixture(scope="session")
def rom_descriptor():
    from romscan.ingest import classify_rom

    return classify_rom(ROM_ROOT, brand="nova", model="nv10")


@pytest.fixture(scope="session")
def rom_corpus(rom_descriptor):
    from romscan.smali import parse_smali_file

    classes = []
    for unit in rom_descriptor.code_units:
        root = ROM_ROOT / unit
        for path in sorted(root.rglob("*.smali")):
            classes.append(parse_smali_file(path, rel_path=path.relative_to(ROM_ROOT).as_posix()))
    return classes


@pytest.fixture(scope="session")
def rom_extraction(rom_corpus):
    from romscan.callgraph import build_call_graph
    from romscan.config import ScanConfig
    from romscan.usages import extract_usages

    graph = build_call_graph(rom_corpus)
    return extract_usages(rom_corpus, graph, ScanConfig())
