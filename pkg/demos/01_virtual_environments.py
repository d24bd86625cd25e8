"""Build a virtual interaction environment for one molecule pair.

The library turns a (larger, smaller) conformer pair into a single 3D
"environment": the larger molecule keeps its geometry, and n randomly
rotated replicas of the smaller molecule are scattered around randomly
chosen non-aromatic target atoms. Each replica also carries unit
pseudo-force targets pointing from its target atom to each replica atom.
"""

from pathlib import Path

import numpy as np

from pairmol.chem import parse_smiles
from pairmol.data import MoleculePair, assign_roles, generate_conformer
from pairmol.geometry import (
    build_virtual_geometry,
    export_geometry,
    frame_projection,
    local_frame,
)


def main() -> None:
    ethanol = parse_smiles("CCO")
    water = parse_smiles("O")
    c1 = generate_conformer(ethanol, seed=0, use_cache=False)
    c2 = generate_conformer(water, seed=0, use_cache=False)
    larger, smaller = assign_roles(c1, c2)
    pair = MoleculePair(larger=larger, smaller=smaller,
                        larger_2d=ethanol, smaller_2d=water)
    print(f"larger molecule: {larger.molecule.id} "
          f"({larger.molecule.n_atoms} atoms with hydrogens)")
    print(f"smaller molecule: {smaller.molecule.id} "
          f"({smaller.molecule.n_atoms} atoms)")

    vg = build_virtual_geometry(pair, n=3, rng=42)
    print(f"\nenvironment: {len(vg.coords)} atoms total, "
          f"{vg.n_replicas} replicas at target atoms {vg.target_atoms}")

    for i in range(vg.n_replicas):
        centroid = vg.replica_coords(i).mean(axis=0)
        target = vg.coords[vg.target_atoms[i]]
        print(f"replica {i}: centroid at distance "
              f"{np.linalg.norm(centroid - target):.3f} A from its target "
              f"(= molecule radius of the smaller molecule)")

    # pseudo-force targets are unit vectors by construction
    norms = np.linalg.norm(vg.pseudo_forces, axis=-1)
    print(f"\npseudo-force norms: min {norms.min():.6f}, "
          f"max {norms.max():.6f} (all exactly 1)")

    # the per-atom-pair local frame that makes force prediction equivariant
    local = vg.replica_local_coords(0)
    frame = local_frame(local[0], local[1])
    print("\nlocal frame for the first replica atom pair:")
    print(np.round(frame.axes, 4))
    print("frame projection (invariant 6-vector):",
          np.round(frame_projection(frame, local[0], local[1]), 4))

    out = Path("environment_demo")
    elements = (list(pair.larger.molecule.elements)
                + list(pair.smaller.molecule.elements) * vg.n_replicas)
    export_geometry(vg, elements, out.with_suffix(".xyz"),
                    out.with_suffix(".json"))
    print(f"\nwrote {out}.xyz and {out}.json")


if __name__ == "__main__":
    main()
