"""Geometric pre-training for molecular pair property prediction.

Builds virtual interaction environments from conformer pairs, pre-trains a
2D pair encoder against an invariant 3D encoder with contrastive alignment
and equivariant intermolecular force prediction, then fine-tunes on
pairwise property tasks.
"""

from .chem import Molecule2D, parse_smiles
from .data import (
    Conformer3D,
    MoleculePair,
    SplitSpec,
    assign_roles,
    generate_conformer,
    load_pair_dataset,
    make_splits,
    molecule_radius,
    sample_pretrain_pairs,
)
from .geometry import (
    LocalFrame,
    VirtualGeometry,
    build_virtual_geometry,
    frame_projection,
    local_frame,
    pseudo_force_targets,
)
from .nets import EncoderConfig, PairEncoder, interaction_matrix, predict_forces
from .pretrain import PretrainConfig, force_loss, ntxent_loss, run_pretraining
from .finetune import FinetuneConfig, evaluate, plateau_schedule, run_finetune

__version__ = "0.1.0"
