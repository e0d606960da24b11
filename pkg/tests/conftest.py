import pytest

_criteria = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")
    config.stash[_criteria] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    results = item.config.stash[_criteria]
    ok = results.get(n, (title, True))[1]
    if rep.when == "call" or rep.failed:
        ok = ok and rep.passed
        results[n] = (title, ok)


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_criteria]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title}")
