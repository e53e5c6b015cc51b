"""Physics-informed spatiotemporal forecasting with graph transport, a latent
neural ODE and calibrated ensemble uncertainty."""
from . import autodiff, graphnet, spectral, encoder, odecore, fusion, model, dataio, train

__version__ = "0.1.0"

__all__ = ["autodiff", "graphnet", "spectral", "encoder", "odecore", "fusion", "model",
           "dataio", "train", "__version__"]
