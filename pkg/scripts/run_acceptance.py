"""Fill the acceptance run cache and print one PASS/FAIL line per criterion.

    python scripts/run_acceptance.py [--cache DIR]
"""
import argparse
import logging
import sys
import time
from pathlib import Path

from hybrid_rl import acceptance as A

ap = argparse.ArgumentParser()
ap.add_argument("--cache", type=Path, default=A.DEFAULT_CACHE)
ap.add_argument("--arm", action="append", help="only run these arms")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

t0 = time.time()
for name in args.arm or A.ARMS:
    t = time.time()
    runs = A.load_arm(name, args.cache)
    print(f"{name:<16} final mean {runs.final().mean():7.2f}   ({time.time() - t:.0f}s)",
          flush=True)
if args.arm:
    sys.exit(0)
results = A.evaluate_all(args.cache)
print()
for r in results:
    print(r.line())
print(f"\n{sum(r.passed for r in results)}/{len(results)} criteria pass "
      f"({time.time() - t0:.0f}s)")
sys.exit(0 if all(r.passed for r in results) else 1)
