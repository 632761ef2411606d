import pytest

from tabseg.data import write_phantom_dataset


@pytest.fixture(scope="session")
def phantom_root(tmp_path_factory):
    """Two small sites with retest scans: 5 subjects each, 32^3 voxels."""
    root = tmp_path_factory.mktemp("phantoms")
    write_phantom_dataset(root / "siteA", 5, 32, "siteA", seed=1, retest=True)
    write_phantom_dataset(root / "siteB", 5, 32, "siteB", seed=2, retest=True)
    return root


def write_plan(path, **values) -> str:
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), encoding="utf-8")
    return str(path)


# -- acceptance summary: one pass/fail line per criterion ---------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, text = marker.args
    entry = _CRITERIA.setdefault(number, {"text": text, "failed": False, "ran": False})
    entry["ran"] = entry["ran"] or rep.when == "call"
    entry["failed"] = entry["failed"] or rep.failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "FAIL" if entry["failed"] else ("PASS" if entry["ran"] else "SKIP")
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {entry['text']}")
