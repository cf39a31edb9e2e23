"""Surface-to-skeleton toolkit: part-based skeleton registration to 2D masks,
skeleton shape-space learning, surface-to-skeleton regression, and
anatomically constrained reposing, verified on procedural synthetic bodies."""

__version__ = "0.1.0"

from . import bundleio, cli, energy, evalmetrics, fitters, geom, masks, puppet, stats, synth  # noqa: F401
