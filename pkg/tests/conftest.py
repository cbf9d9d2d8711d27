import pytest

# criterion id -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion.

    Usage: ``criterion(3, "detail")`` before the assertions; the outcome is
    taken from the test result.
    """
    entry = {}

    def declare(number, title):
        entry["number"], entry["title"] = number, title
        entry["detail"] = ""

    def note(text):
        entry["detail"] = text

    declare.note = note
    yield declare
    if "number" in entry:
        rep = getattr(request.node, "rep_call", None)
        passed = bool(rep and rep.passed)
        ACCEPTANCE[entry["number"]] = (passed, entry["title"], entry["detail"])
        print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {entry['number']}: {entry['title']}"
              f"{' | ' + entry['detail'] if entry['detail'] else ''}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
