"""Spatio-spectral super-resolution toolkit.

Reconstructs a high-resolution hyperspectral cube from a single low-resolution
multispectral image by unfolding three proximal-gradient solvers (spatial
upsampling, spectral lifting, fusion under a radiometric constraint), followed
by a windowed top-k multi-head attention post-processor.  Includes the
acquisition simulator, a two-phase trainer, reference metrics, and a CLI.
"""

__version__ = "0.1.0"
