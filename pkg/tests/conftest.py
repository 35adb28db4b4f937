import pytest

_RESULTS: dict[str, tuple[str, str]] = {}


class Criterion:
    """Records one acceptance verdict so the session can print a summary line."""

    def __init__(self, key: str, title: str):
        self.key, self.title = key, title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    c = Criterion(*marker.args)
    yield c
    rep = getattr(request.node, "rep_call", None)
    if rep is None or rep.skipped:
        reason = rep.longrepr[2] if rep is not None and isinstance(rep.longrepr, tuple) else "skipped"
        _RESULTS[c.key] = ("SKIP", f"{c.title} ({reason})")
    else:
        verdict = "PASS" if rep.passed else "FAIL"
        _RESULTS[c.key] = (verdict, c.title + (f" [{'; '.join(c.details)}]" if c.details else ""))
    print(f"\n{_RESULTS[c.key][0]} criterion {c.key}: {_RESULTS[c.key][1]}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(k)):
        verdict, text = _RESULTS[key]
        terminalreporter.write_line(f"{verdict} criterion {key}: {text}")
