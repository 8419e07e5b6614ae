"""Physics-parameter-aware PDE forecasting toolkit.

Pipeline: synthetic PDE episode generation with in/out-of-domain parameter
splits -> parameter-fused autoencoding into a vector-quantized state
dictionary -> codebook-guided latent augmentation -> Fourier-enhanced graph
ODE forecasting -> evaluation (MSE/SSIM/PSNR, energy spectra).
"""

__version__ = "0.1.0"
