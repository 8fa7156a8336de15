"""A reduced bias-shift comparison, end to end.

Train answer priors are skewed (80% of "how many cube" questions share one
majority answer); the out-of-distribution test split promotes a different
majority per type. A model that answers from the question pattern scores
near the inverted prior mass on that split. The grounded encoder resists.

This demo runs one seed on a reduced dataset (under a minute). The acceptance
suite (tests/test_acceptance.py) runs the full five-seed version; the same
pipeline is scriptable through the CLI:

    vqalab gen-data --out runs/data
    vqalab train --data runs/data --variant baseline --seed 0 --out runs/base
    vqalab train --data runs/data --variant vgqe     --seed 0 --out runs/vgqe
    vqalab eval  --checkpoint runs/base/checkpoint.json --data runs/data \
                 --split test --report runs/base_test.json
    vqalab eval  --checkpoint runs/vgqe/checkpoint.json --data runs/data \
                 --split test --report runs/vgqe_test.json
    vqalab report --baseline runs/base_test.json --vgqe runs/vgqe_test.json \
                 --out runs/comparison

Run:  python demos/demo_04_bias_shift.py
"""

from vqalab.data import DataConfig, answer_distribution, generate_dataset
from vqalab.experiment import run_bias_shift

ds = generate_dataset(DataConfig(n_train=6000, n_test=1500, seed=0))

qtype = 0
name = ds.type_names()[qtype]
hist_train = answer_distribution(ds.train, qtype, ds.vocab.answer_count)
hist_test = answer_distribution(ds.test, qtype, ds.vocab.answer_count)
print(f"answer priors for '{name}':")
for a, answer in enumerate(ds.vocab.answers):
    if hist_train[a] or hist_test[a]:
        print(f"  {answer:>8s}: train {hist_train[a]:.2f}  ood-test {hist_test[a]:.2f}")

print("\ntraining both variants (one seed, reduced data)...")
result = run_bias_shift(ds, seeds=(0,), epochs=12)
for line in result.summary_lines():
    print(" ", line)
