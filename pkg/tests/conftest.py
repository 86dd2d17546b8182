"""Shared fixtures and the one-line-per-criterion acceptance summary."""

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from fingraph.synthetic import bundled_dir

FIXTURES = Path(__file__).parent / "fixtures"

_criteria: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    entry = _criteria.setdefault(crit, {"title": dict(report.user_properties).get("title", ""), "failed": []})
    if report.failed:
        entry["failed"].append(report.nodeid.split("::")[-1])


@pytest.fixture(autouse=True)
def _record_criterion(request):
    marker = request.node.get_closest_marker("acceptance")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args[0]))
        request.node.user_properties.append(("title", marker.kwargs.get("title", "")))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria):
        entry = _criteria[crit]
        status = "FAIL" if entry["failed"] else "PASS"
        detail = f"  (failing: {', '.join(entry['failed'])})" if entry["failed"] else ""
        terminalreporter.write_line(f"criterion {crit}: {status}  {entry['title']}{detail}")


@pytest.fixture(scope="session")
def synthetic_dir() -> Path:
    return bundled_dir()


@pytest.fixture
def synthetic_copy(tmp_path, synthetic_dir) -> Path:
    dst = tmp_path / "synthetic"
    shutil.copytree(synthetic_dir, dst)
    return dst


def run_pipeline(workdir: Path, data: Path) -> None:
    """ingest, build and index the bundled corpus into ``workdir`` with offline providers."""
    from fingraph.cli import main

    common = ["--workdir", str(workdir)]
    assert main(["ingest", "--corpus", str(data / "corpus"), *common]) == 0
    assert main(["build", *common, "--aliases", str(data / "aliases.json"), "--refdata", str(data / "refdata.csv"),
                 "--chat-provider", "scripted", "--chat-fixtures", str(data / "chat_fixtures.json")]) == 0
    assert main(["index", *common]) == 0


@pytest.fixture(scope="session")
def synthetic_workdir(tmp_path_factory, synthetic_dir) -> Path:
    work = tmp_path_factory.mktemp("synthetic_work")
    run_pipeline(work, synthetic_dir)
    return work
