import pytest

_criteria = {}


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    # a skip is reported in setup or call; a pass needs the call phase; a failure in any phase wins
    if report.when == "call" or report.skipped or report.failed:
        if report.skipped:
            status = "SKIP"
        elif report.failed:
            status = "FAIL"
        else:
            status = "PASS"
        previous = _criteria.get(props["criterion"])
        if previous is None or previous[0] != "FAIL":
            _criteria[props["criterion"]] = (status, props.get("title", ""), props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title, detail = _criteria[number]
        line = f"criterion {number:>2} {status}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
