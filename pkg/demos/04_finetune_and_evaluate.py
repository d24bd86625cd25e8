"""Fine-tune the pair encoder on a labeled pairwise property task.

A fresh regression head is stacked on the pair embedding z_pair; the
encoder can start from scratch or from a pre-training checkpoint. The
evaluation protocol is 5-fold cross-validation with the held-out fold
split evenly into validation (plateau schedule + early stopping) and
test (final RMSE / AUROC).
"""

import json
from pathlib import Path

import numpy as np

from pairmol.chem import parse_smiles
from pairmol.data import (
    MoleculePair,
    assign_roles,
    generate_conformer,
    make_splits,
)
from pairmol.finetune import FinetuneConfig, run_finetune
from pairmol.nets import EncoderConfig, SchNetConfig

SOLUTES = ["CCO", "CCC", "CCN", "CCCO", "CC(C)O", "CCCC", "CCS", "CC=O",
           "CCCN", "CCCC(C)O", "CCCl", "CC#N"]
SOLVENTS = ["O", "CO", "C", "CCO"]


def surrogate_label(s1: str, s2: str) -> float:
    """Toy stand-in for a solvation free energy: composition-driven."""
    combined = s1 + s2
    return 0.3 * combined.count("C") - 0.8 * combined.count("O")


def main() -> None:
    conformers = {}

    def pair_for(s1, s2):
        for s in (s1, s2):
            if s not in conformers:
                m = parse_smiles(s)
                conformers[s] = (m, generate_conformer(m, 0, use_cache=False))
        (m1, c1), (m2, c2) = conformers[s1], conformers[s2]
        larger, smaller = assign_roles(c1, c2)
        heavy = {c1.molecule.id: m1, c2.molecule.id: m2}
        rng = np.random.default_rng(abs(hash((s1, s2))) % 2**32)
        return MoleculePair(larger=larger, smaller=smaller,
                            label=surrogate_label(s1, s2)
                            + float(rng.normal(scale=0.05)),
                            larger_2d=heavy[larger.molecule.id],
                            smaller_2d=heavy[smaller.molecule.id])

    dataset = [pair_for(a, b) for a in SOLUTES for b in SOLVENTS]
    print(f"labeled dataset: {len(dataset)} pairs")

    splits = make_splits(dataset, "kfold5", seed=0)
    encoder_cfg = EncoderConfig(
        hidden_dim=16, projection_dim=16,
        schnet=SchNetConfig(hidden=32, filters=32, interactions=2, n_rbf=32))
    cfg = FinetuneConfig(task="regression", lr=0.005, max_epochs=15,
                         plateau_patience=5, early_stop_patience=10,
                         batch_size=16, seed=0)

    report = run_finetune(cfg, splits, dataset, encoder_cfg=encoder_cfg,
                          report_path=Path("finetune_demo_report.json"))
    print(f"\n5-fold cross-validation RMSE: "
          f"{report['mean']:.4f} +/- {report['std']:.4f}")
    for run in report["runs"]:
        print(f"  fold {run['fold']}: RMSE {run['metric']:.4f} "
              f"after {run['epochs_run']} epochs")
    print("\nfull report (per-run metrics, config echo, content hashes) in "
          "finetune_demo_report.json")
    print(json.dumps({k: report[k] for k in ("task", "n_runs",
                                             "config_hash")}, indent=2))


if __name__ == "__main__":
    main()
