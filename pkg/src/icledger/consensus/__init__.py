from .log import (
    ConsensusError,
    ConsensusLog,
    Exclusion,
    FaultBoundExceeded,
    IncludedCheckPoint,
    SafetyViolation,
    bootstrap_result,
    chain_cm,
    classify_cm,
    fault_bound,
    filter_cms,
    make_cm,
    quorum_size,
    result_problem,
    select_entries,
    sign_cm,
)
from .oracle import OracleClient, OracleConsensus, bft_agree, oracle_result
from .pbft import PbftReplica, PbftTimings, leader_of
