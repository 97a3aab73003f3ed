"""Finite-difference audit of every hand-written backward pass.

Every layer, both network variants, and the loss gradient are compared
against central differences at step 1e-6.  The loss check runs 100
random instances with mixed hierarchies, ignore labels, and random
alpha/lambda.  Run with  python3 demos/gradient_check.py
"""

import sys
import time

from ialseg import run_all_checks

t0 = time.time()
results = run_all_checks(seed=0, loss_instances=100)
elapsed = time.time() - t0

print(f"{'case':28s} {'max rel error':>14s}")
for r in results:
    flag = "" if r.ok else "   <-- FAIL"
    print(f"{r.name:28s} {r.max_rel_error:14.3e}{flag}")

worst = max(r.max_rel_error for r in results)
print(f"\nworst over {len(results)} cases: {worst:.3e}  ({elapsed:.1f}s)")
if not all(r.ok for r in results):
    sys.exit(1)
print("all gradients agree with finite differences")
