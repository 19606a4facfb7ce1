import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


class AcceptanceLog:
    """Collects one verdict per acceptance criterion; parts of a criterion AND together."""

    def __init__(self, store):
        self.store = store

    def record(self, number, title, ok, detail=""):
        prev = self.store.get(number)
        if prev is not None:
            ok = ok and prev[1]
            detail = "; ".join(x for x in (prev[2], detail) if x)
        self.store[number] = (title, ok, detail)


@pytest.fixture(scope="session")
def acceptance(request):
    return AcceptanceLog(request.config.stash.setdefault(_ACCEPTANCE, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, ok, detail = store[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
