"""Run the acceptance suite and print one PASS/FAIL line per criterion.

    python3 scripts/run_acceptance.py [extra pytest args]
"""
import os
import sys

import pytest

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
here = os.path.dirname(os.path.abspath(__file__))

if __name__ == "__main__":
    args = [os.path.join(here, "..", "tests", "test_acceptance.py"), "-q", "-s", *sys.argv[1:]]
    sys.exit(pytest.main(args))
