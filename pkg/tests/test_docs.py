import json
from pathlib import Path

from gst.gcot.metadata import templates

ROOT = Path(__file__).resolve().parent.parent


def _strings(node):
    if isinstance(node, str):
        yield node
    elif isinstance(node, list):
        for v in node:
            yield from _strings(v)
    else:
        for v in node.values():
            yield from _strings(v)


def test_templates_doc_mirrors_json():
    doc = (ROOT / "docs" / "templates.md").read_text(encoding="utf-8")
    for s in _strings(templates()):
        for line in s.split("\n"):
            if line:
                assert f"    {line}" in doc, line


def test_templates_json_is_package_data():
    assert json.loads((ROOT / "src" / "gst" / "gcot" / "templates.json").read_text()) == templates()
