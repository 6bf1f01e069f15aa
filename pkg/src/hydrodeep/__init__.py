"""
HydroDeep: distance-weighted grid inputs, a dual-branch CNN+LSTM discharge
predictor and layer-freezing transfer between watersheds.
"""

__version__ = "0.1.0"
