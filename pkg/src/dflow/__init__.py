"""Decentralised orchestration of dataflow workflows over simulated or real networks."""

from .costmodel import CostModel, MissingSize
from .dsl import CheckedWorkflow, CompileError, Diagnostic, WorkflowSpec, check, compile_source, parse, pretty_print
from .graph import CycleDetected, Pattern, WorkflowGraph, build_graph, classify, stages
from .partition import (CostEstimate, DeploymentPlan, Mode, TooLarge, UnknownSite, brute_force_min_cut,
                        estimate_cost, partition)
from .runtime import (FragmentFailed, ProxyUnreachable, ServiceUnreachable, Timeout, centralised_execute, deploy,
                      orchestrate)
from .transport import ExecutionTrace, LinkModel, SimTransport, SocketTransport, Topology

__version__ = "0.1.0"
