"""Consortium-ledger trust framework for cross-domain UAV service function chains."""

from .baselines import SchemeId, run_centralized_ta, run_static_config
from .election import ElectionOutcome, ElectionParams, ScoreReport, run_election
from .errors import ConfigError
from .harness import ScenarioConfig, audit_dump, load_config, run_scenario, sweep_latency, sweep_throughput
from .ledger import ConsortiumLedger, LedgerBlock, LedgerRecord, verify_chain
from .model import DomainDescriptor, EsTopology, Hop, NodeIdentity, SfcRequest
from .simnet import FailureScript, Kernel, LatencyModel
from .world import TaskResult, World, WorldParams, run_sfc_task

__version__ = "0.1.0"
