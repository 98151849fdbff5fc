import pytest

# criterion number -> [title, outcome, note]
_CRITERIA = {}


class KappaLedger:
    """Operations run with a finite kappa and the boundary violations seen
    in them, summed across the acceptance runs."""

    def __init__(self):
        self.ops = 0
        self.violations = 0
        self.sources = []

    def add(self, label, ops, violations):
        self.ops += ops
        self.violations += violations
        self.sources.append((label, ops, violations))


LEDGER = KappaLedger()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, [title, None, ""])
    if call.when == "setup" and call.excinfo is not None:
        skipped = call.excinfo.errisinstance(pytest.skip.Exception)
        entry[1] = "SKIP" if skipped else "FAIL"
        entry[2] = str(call.excinfo.value).splitlines()[0] if skipped else "setup error"
    elif call.when == "call":
        if call.excinfo is None:
            entry[1] = "PASS"
            entry[2] = getattr(item, "criterion_note", "")
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            entry[1] = "SKIP"
            entry[2] = str(call.excinfo.value).splitlines()[0]
        else:
            entry[1] = "FAIL"
            entry[2] = str(call.excinfo.value).splitlines()[0][:160]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, note = _CRITERIA[number]
        line = f"criterion {number:2d} {outcome or 'NOT RUN':7s} {title}"
        if note:
            line += f" -- {note}"
        tr.write_line(line)
