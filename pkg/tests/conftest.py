import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

N_CRITERIA = 11
# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not any(item for item in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
               if "test_acceptance" in item.nodeid):
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
