"""Motion estimators, refiners, networks, checkpoints and training.

Import the submodules directly; the physics package depends on
``models.layers`` and this package must stay import-light.
"""
