"""Collects ``@pytest.mark.acceptance(n, title)`` outcomes into one PASS/FAIL line each."""
import pytest

_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ok = rep.passed
    crash = getattr(rep.longrepr, "reprcrash", None)
    if not ok and crash is not None and crash.message:
        detail = "; ".join(filter(None, [detail, crash.message.splitlines()[0][:160]]))
    prev = _verdicts.get(number)
    _verdicts[number] = (title, (prev is None or prev[1]) and ok, detail)
    line = f"criterion {number} {'PASS' if _verdicts[number][1] else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    # written straight to the terminal so the line shows without -s
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        title, ok, detail = _verdicts[number]
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
