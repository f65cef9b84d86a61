"""cryoforge: a synthetic cryo-ET data engine.

Turns atomic structures into density maps, scatters them through a
virtual sample, simulates tilt-series acquisition, aligns and
reconstructs tomograms, and extracts SNR-graded subtomograms with full
ground truth. Also ships the supporting SO(3) utilities, a
shift/rotation-equivariant phase tokenizer, and noise-resilient
contrastive losses.
"""

__version__ = "0.1.0"
