import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Filled by the acceptance suite: (criterion, passed, detail).
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda item: item[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}")
