"""Distributed NIDS consensus simulator with Byzantine attack mitigation."""

from .attacks import (AdditiveDisruption, AttackModel, ConstantTransmission,
                      InitialStateFalsification, apply_attack, select_target)
from .consensus import (PhaseAborted, PhaseResult, WeightMatrix, build_max_degree_weights,
                        consensus_step, observation, run_phase)
from .topology import (DisconnectionReport, Graph, build_petersen, build_random, build_ring,
                       build_topology, build_torus, remove_node)

__version__ = "0.1.0"
