from collections import defaultdict

import pytest

_outcomes = defaultdict(list)  # criterion id -> [(test name, outcome, detail)]
_notes = defaultdict(list)  # criterion id -> measured values worth printing


@pytest.fixture
def note(request):
    """``note("accuracy=0.97")`` attaches a measurement to the test's acceptance line."""
    marker = request.node.get_closest_marker("acceptance")
    cid = marker.args[0] if marker else None
    return lambda text: _notes[cid].append(text)


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome, detail = "PASS", ""
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome, detail = "SKIP", str(call.excinfo.value.msg)
        else:
            outcome, detail = "FAIL", call.excinfo.exconly().splitlines()[0][:160]
        _outcomes[marker.args[0]].append((item.name, outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_outcomes, key=lambda c: int(c[1:])):
        results = _outcomes[cid]
        states = {o for _, o, _ in results}
        verdict = "FAIL" if "FAIL" in states else "PASS" if "PASS" in states else "SKIP"
        passed = sum(o == "PASS" for _, o, _ in results)
        extra = [f"{name}: {d}" for name, o, d in results if o != "PASS" and d] + _notes.get(cid, [])
        line = f"{cid} {verdict} ({passed}/{len(results)} checks passed)"
        terminalreporter.write_line(line + (" | " + "; ".join(extra) if extra else ""))
