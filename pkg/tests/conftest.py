import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from _acceptance import REPORT  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(REPORT.values(), key=lambda s: int(s.split()[0].lstrip("#"))):
        terminalreporter.write_line(line)
