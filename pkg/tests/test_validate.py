import json
import subprocess
import sys

from fracid.validate import validate_suite


def test_fresh_suite_passes():
    report = validate_suite()
    failed = [c.name for c in report.checks if not c.passed]
    assert report.all_passed, failed
    names = {c.name for c in report.checks}
    assert {"caputo_weights", "gradient_fd", "duality_identity", "sampler_moments"} <= names


def test_injected_weight_bug_is_caught():
    report = validate_suite(faults=("weights_reversed",))
    by_name = {c.name: c for c in report.checks}
    assert not by_name["caputo_weights"].passed
    assert not report.all_passed


def test_injected_adjoint_sign_error_is_caught():
    report = validate_suite(faults=("adjoint_sign_flip",))
    by_name = {c.name: c for c in report.checks}
    assert not by_name["gradient_fd"].passed


def test_report_serialization(tmp_path):
    report = validate_suite()
    path = tmp_path / "report.json"
    report.to_json(path)
    doc = json.loads(path.read_text())
    assert doc["all_passed"] is True
    assert all({"name", "passed", "detail"} <= set(c) for c in doc["checks"])


def test_cli_validate_exit_code():
    run = subprocess.run(
        [sys.executable, "-m", "fracid.cli", "validate"], capture_output=True, text=True
    )
    assert run.returncode == 0, run.stdout + run.stderr
    assert "[PASS] caputo_weights" in run.stdout
