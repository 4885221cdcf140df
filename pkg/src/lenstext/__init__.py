"""Simulation of lensless text detection and recognition.

Modules
-------
imgcore      image arrays, PGM/PNG I/O, resampling and quality metrics
scene        synthetic text scenes with word-level ground truth
optics       PSF models and the crop-convolve capture model with its adjoint
recon        ADMM, FISTA and Wiener reconstruction
textdet      threshold / component / merge word detection
ocr          segmentation and template-matching recognition
evaluation   detection and recognition scoring
sweep        end-to-end pipeline and optical-condition sweeps
cli          the ``lenstext`` command
"""

__version__ = "0.1.0"
