"""Acceptance criterion A10: exported containers work end to end."""

import json
import subprocess
import sys

from rksp_export import ExportSpec, export

from test_export import PROMPTS, ToyResidualModel, read_header


def test_a10_exported_container_profiles_end_to_end(tmp_path):
    out = tmp_path / "snap.rksp"
    summary = export(ToyResidualModel(dim=10, layers=3, seed=1),
                     ExportSpec(PROMPTS, max_states=128), out)
    header = read_header(out)
    assert header["magic"] == b"RKSP" and header["flags"] & 0x1

    profile_json = tmp_path / "profile.json"
    result = subprocess.run(
        [sys.executable, "-m", "rksp.cli", "profile", "--input", str(out),
         "--output", str(profile_json), "--seed", "0"],
        capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    report = json.loads(profile_json.read_text())
    assert report["layer_count"] == summary.layer_count == 3
    assert 0.0 <= report["risk_score"] <= 1.0
    print(f"\n[A10] PASS — toy-model container ({summary.layer_count} layers, "
          f"{summary.states_written} states) loads, validates and profiles "
          f"through the primary CLI (risk={report['risk_score']:.3f})")
