"""Hemisphere and ICA/MCA subvolume recombination for LVO classification.

Modules
-------
volume     binary voxel volumes in a shared atlas frame, VMV1 files
labels     class triples, label composition, recombination counts
recombine  epoch planning and materialisation of recombined stacks
deform     coarse-anchor elastic deformation
phantom    procedural vessel-tree cohorts with controllable occlusions
model      numpy 3D CNN (whole head, H-stack, IM-stack) and its trainer
eval       class AUC, side accuracy, folds and the ablation driver
cli        command-line entry point (``subrecomb``)
"""

__version__ = "0.1.0"
