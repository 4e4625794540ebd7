"""revmem: memory-efficient training with reversible residual networks and
8-bit optimizer states, plus a byte-exact memory ledger."""

from .engine import (
    MemoryLedger,
    Network,
    SavedStore,
    gpus_required,
    ledger_plan,
    ledger_report,
    max_batch,
    rev_backward,
    rev_downsample,
    rev_downsample_inverse,
    rev_forward,
    rev_inverse,
    run_backward,
    run_forward,
)
from .errors import (
    CapacityError,
    ConfigError,
    QuantizationError,
    RevmemError,
    ShapeError,
    StateError,
)
from .layers import Param, RevBlock, RevDownsample
from .loss import aam_softmax_loss
from .quant import (
    DynamicTreeMap,
    QuantizedState,
    build_dynamic_tree_map,
    dequantize_blockwise,
    nearest_codes_exhaustive,
    quantize_blockwise,
    state_from_bytes,
)
from .zoo import NetworkSpec, REGISTRY_NAMES, build, registry_spec, spec_from_json, spec_to_json, toy_spec

__version__ = "0.1.0"
