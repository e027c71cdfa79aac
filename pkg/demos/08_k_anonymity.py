"""Mondrian multidimensional k-anonymity: generalize quasi-identifiers
into ranges/value sets so every released row is indistinguishable from at
least k-1 others.

Run: python3 demos/08_k_anonymity.py
"""

import numpy as np

from privsec.mondrian import QiTable, anonymize, verify_k_anonymity

rng = np.random.default_rng(0)
n = 12
table = QiTable(
    columns={
        "age": rng.integers(18, 70, size=n).tolist(),
        "zip": rng.choice(["11111", "22222", "33333"], size=n).tolist(),
        "diagnosis": rng.choice(["flu", "cold", "ok"], size=n).tolist(),
    },
    qi=[("age", "numeric"), ("zip", "categorical")],
    sensitive=["diagnosis"],
)

anon = anonymize(table, k=3)
print(f"3-anonymous: {verify_k_anonymity(anon, 3)}\n")
print(f"{'age':>10} {'zip':>14} {'diagnosis':>10}  part")
for i in range(n):
    print(f"{anon.columns['age'][i]:>10} {anon.columns['zip'][i]:>14} "
          f"{anon.columns['diagnosis'][i]:>10}  {anon.partition_ids[i]}")
