"""Generate a synthetic cohort, train a logistic predictor, save both.

A cohort is a list of instance pools: each pool holds the individuals over
which one allocation decision is made jointly. The synthetic generator draws
numeric and categorical features, group membership, costs, and labels from a
seeded latent model, so the same spec + seed always yields the same cohort.
"""

from pathlib import Path

import numpy as np

from allocshift import (SyntheticSpec, TrainConfig, generate_synthetic,
                        predict_pool, save_predictor, train, write_cohort)

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

spec = SyntheticSpec(instances=4, pool_size=10, numeric_features=3,
                     categorical_features=1, categorical_levels=3,
                     task="binary", groups=2, label_noise=1.0)
cohort = generate_synthetic(spec, seed=7)
print(f"cohort: {len(cohort.pools)} pools x {spec.pool_size} individuals, "
      f"task={cohort.task}")

model = train(cohort, "logistic", TrainConfig(epochs=100), seed=0)

for pool in cohort.pools:
    scores = predict_pool(model, pool)
    hits = np.mean((scores >= 0.5) == (pool.labels >= 0.5))
    print(f"  {pool.instance_id}: base rate {pool.labels.mean():.2f}, "
          f"accuracy {hits:.2f}")

cohort_path = OUT / "cohort.json"
model_path = OUT / "model.json"
write_cohort(cohort, str(cohort_path))
save_predictor(model, str(model_path))
print(f"wrote {cohort_path} and {model_path}")
