import sys
from pathlib import Path

# Shared oracle helpers live next to the tests.
sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines, key=lambda k: (int(k.rstrip("abcd")), k)):
        terminalreporter.write_line(lines[key])
