import pytest

_RESULTS: list[tuple[str, str, float, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _RESULTS.append((mark.args[0], "PASS" if rep.passed else "FAIL", rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, seconds, detail in _RESULTS:
        line = f"{status}  {name}  ({seconds:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
