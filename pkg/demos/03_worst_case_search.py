"""Find the worst-case hierarchical shift for one metric on a small cohort.

The search runs Frank-Wolfe on within-instance sampling offsets (one run per
pool), then tilts the across-instance distribution toward the pools whose
shifted loss is highest. The report records the worst-case expected decision
loss, both offset levels, and the per-iteration trace of every inner run.

Run 01_synthetic_cohort.py first to create demos/output/{cohort,model}.json.
"""

from pathlib import Path

import numpy as np

from allocshift import (FwParams, MisclassRate, UncertaintyBudget,
                        find_worst_case, load_cohort, load_predictor,
                        offset_to_distribution, save_report)

OUT = Path(__file__).parent / "output"
cohort = load_cohort(str(OUT / "cohort.json"))
model = load_predictor(str(OUT / "model.json"))

budget = UncertaintyBudget(rho_ind=4.0, rho_xi=2.0)
params = FwParams(iterations=15, num_samples=4000, num_samples2=2000,
                  draw_size=5, seed=0)
report = find_worst_case(cohort, model, MisclassRate(), budget, params)

print(f"worst-case expected decision loss: {report.value:.4f}")
xi = offset_to_distribution(report.shift.across)
for pid, weight, lam in zip(report.instance_ids, xi, report.instance_losses):
    print(f"  {pid}: across-weight {weight:.3f}, shifted loss {lam:+.4f}")

hardest = int(np.argmax(xi))
q = report.shift.individual_distribution(hardest)
print(f"within-instance distribution for {report.instance_ids[hardest]}: "
      f"{np.round(q, 3)} (uniform would be {1 / len(q):.3f} everywhere)")

report_path = OUT / "worst_case.json"
save_report(report, str(report_path))
print(f"wrote {report_path}")
