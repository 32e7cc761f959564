import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """``check(number, title, ok, detail)``: record one acceptance check and assert it."""
    results = request.config.stash[_RESULTS]

    def check(number: int, title: str, ok: bool, detail: str = "") -> None:
        entry = results.setdefault(number, {"title": title, "checks": []})
        entry["checks"].append((request.node.name, bool(ok), detail))
        assert ok, f"criterion {number} ({title}): {detail}"

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        entry = results[n]
        ok = all(c[1] for c in entry["checks"])
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {entry['title']}")
        for name, passed, detail in entry["checks"]:
            terminalreporter.write_line(f"    [{'ok' if passed else 'FAIL'}] {name}: {detail}")
