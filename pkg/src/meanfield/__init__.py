"""Numerical toolkit for concentrating solutions of singular mean-field equations."""
import os

# thread count for the BLAS and FFT back ends; must be set before numpy loads
if os.environ.get("MEANFIELD_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["MEANFIELD_THREADS"])
from .surface import FlatTorus, RoundSphere, QuadratureGrid, Field, chart_at, integrate, poisson_solve
from .greens import HAVE_COMPILED

__version__ = "0.1.0"
