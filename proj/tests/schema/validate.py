"""Validates golden fixtures and a fresh synthetic run against schemas/."""
import json
import pathlib
import subprocess
import sys
import tempfile

from jsonschema import Draft202012Validator
from referencing import Registry, Resource

root = pathlib.Path(sys.argv[1])
cli = sys.argv[2]
schema_dir = root / "schemas"

registry = Registry()
schemas = {}
for p in sorted(schema_dir.glob("*.schema.json")):
    doc = json.loads(p.read_text())
    Draft202012Validator.check_schema(doc)
    registry = registry.with_resource(doc["$id"], Resource.from_contents(doc))
    schemas[p.name.split(".")[0]] = doc

failures = 0
checked = 0


def check(kind, instance, where):
    global failures, checked
    checked += 1
    errors = list(Draft202012Validator(schemas[kind], registry=registry).iter_errors(instance))
    for e in errors:
        failures += 1
        print(f"{where}: {kind}: {'/'.join(map(str, e.absolute_path))}: {e.message}")


def check_lines(kind, path):
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            check(kind, json.loads(line), f"{path}:{n}")


golden = root / "tests" / "data" / "golden"
check("annotations", json.loads((golden / "annotations.json").read_text()), "golden/annotations.json")
check("calibration", json.loads((golden / "calib_identity.json").read_text()), "golden/calib_identity.json")
check("calibration", json.loads((golden / "calib_inverse.json").read_text()), "golden/calib_inverse.json")
check("script", json.loads((golden / "script.json").read_text()), "golden/script.json")
check_lines("detection_line", golden / "detections.jsonl")
check_lines("result_line", golden / "results.jsonl")

with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    data = tmp / "data"
    subprocess.run([cli, "synth", "--out", str(data), "--scenes", "6", "--3d"], check=True, stdout=subprocess.DEVNULL)
    subprocess.run([cli, "run", "--config", str(data / "config.json"), "--out", str(tmp / "runs")],
                   check=True, stdout=subprocess.DEVNULL)
    check("annotations", json.loads((data / "annotations.json").read_text()), "synth/annotations.json")
    check("calibration", json.loads((data / "calibration.json").read_text()), "synth/calibration.json")
    check("config", json.loads((data / "config.json").read_text()), "synth/config.json")
    check_lines("detection_line", data / "detections.jsonl")
    for s in sorted((data / "scripts").glob("*.json")):
        check("script", json.loads(s.read_text()), f"synth/{s.name}")
    (run,) = list((tmp / "runs").iterdir())
    check_lines("result_line", run / "results.jsonl")
    check("report", json.loads((run / "report.json").read_text()), "run/report.json")
    check("manifest", json.loads((run / "manifest.json").read_text()), "run/manifest.json")

print(f"{checked} documents checked, {failures} violation(s)")
sys.exit(1 if failures else 0)
