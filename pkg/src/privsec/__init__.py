"""privsec: a desk-scale laboratory for ML security and privacy.

Attack and defense building blocks (federated learning with hooks,
gradient inversion, DPSGD with a moments accountant, Paillier-encrypted
aggregation, SVM evasion/poisoning, membership inference, Mondrian
k-anonymity) composable through a unified experiment harness.
"""

__version__ = "0.1.0"
