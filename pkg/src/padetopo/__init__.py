"""Wide-band topology optimisation of 2D sound-hard scatterers.

Frequency responses are expanded in the angular frequency with Taylor jets,
converted to rational (Pade) approximants and integrated over a band in
closed form. Topological derivatives follow from an adjoint solve and the
chain rule through every stage of the approximation.
"""
import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
