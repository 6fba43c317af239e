"""Bounds and strategies for partially observable probabilistic timed automata."""

from .errors import (
    CapacityError, DivergingValueError, ImpossibleObservationError, ModelError, ParseError,
    PoptaError, PropertyError, StrategyBudgetError,
)
from .pomdp import Belief, Pomdp, TargetSpec
from .solver import ObjectiveSpec, ValueTable, solve
from .strategy import BeliefStrategy, BoundsReport, Refinement, bounds, evaluate, refine, synthesize

__version__ = "0.1.0"
