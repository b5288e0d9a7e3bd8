"""Retail electricity pricing with meta-predicted HVAC demand response.

Building blocks: synthetic environment + RC plant oracle (envgen), NARX
training (narx), white-box constraint unrolling (whitebox), a shared
augmented-Lagrangian NLP engine (nlp), the demand-response and pricing
problems (dr, pricing), radial-feeder power flow and sensitivities
(gridflow), and the closed-loop online-learning harness (pipeline, cli).
"""

from .envgen import EnvProfile, PriceProfile, RcBuilding, SeasonParams
from .narx import (NarxArch, NarxParams, NarxRegressor, SearchRange, TrainHyper,
                   TrainingSet, nmse)
from .nlp import NlpOptions, NlpProblem, NlpSolution
from .whitebox import DayTail, UnrolledNet

__all__ = [
    "EnvProfile", "PriceProfile", "RcBuilding", "SeasonParams",
    "NarxArch", "NarxParams", "NarxRegressor", "SearchRange", "TrainHyper",
    "TrainingSet", "nmse",
    "NlpOptions", "NlpProblem", "NlpSolution",
    "DayTail", "UnrolledNet",
]

__version__ = "0.1.0"
