"""3D TV-L1 optical flow on morphological-wavelet lattices."""

__version__ = "0.1.0"
