#!/usr/bin/env python3
"""Run the two-scale operator invariant suite and print the JSON report."""

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from homog.harness import run_operator_checks  # noqa: E402


def main():
    report = run_operator_checks()
    print(json.dumps(report.as_dict(), indent=2))
    return 0 if report.all_passed else 2


if __name__ == "__main__":
    sys.exit(main())
