from .baselines import HybridChunk, chunk_reread_bytes, chunked_prefill_splitter
from .common import POLICIES, PolicyParams
from .ledger import Eviction, KvLedger
from .pipeline import Batch, Pipeline, TraceEvent
from .run import RunResult, run

__all__ = [
    "POLICIES", "Batch", "Eviction", "HybridChunk", "KvLedger", "Pipeline", "PolicyParams",
    "RunResult", "TraceEvent", "chunk_reread_bytes", "chunked_prefill_splitter", "run",
]
