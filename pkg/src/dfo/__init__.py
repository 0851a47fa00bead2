"""Direct pose estimation on learned (or synthetic) feature pyramids.

Modules: geometry (SE(3), projection), grids (pyramids, sampling),
selection (sparse point masks), solver (coarse-to-fine Gauss-Newton),
losses (training objective), synthetic (analytic scenes), evalio (pose and
depth evaluation), config, pipeline and cli.
"""

__version__ = "0.1.0"
