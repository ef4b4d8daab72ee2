"""Bandwidth-aware multi-agent feature exchange.

Senders summarize their feature maps into lightweight importance metadata;
the receiving agent turns the collected metadata into a global, budgeted
allocation plan; senders answer with priority-ordered sparse payloads over a
bit-exact wire format; and a routing stage harmonizes the assembled tensor
for fusion.
"""

from .config import BudgetConfig
from .coordinator import (AgentReport, AllocationPlan, allocate, compute_shares,
                          plan_round, refine_saliency, spatial_distribution)
from .core import (FeatureMap, Kernel2D, PatchGrid, conv2d, gaussian_smooth,
                   global_avg_pool, l1_norm_per_channel, laplacian_kernel, softmax)
from .errors import AllocationError, EncodingError, ProtocolError, StructuralError
from .harness import AgentState, BandwidthLedger, communication_rate, run_round
from .metrics import (FidelityReport, PruningCurve, baseline_random_allocation,
                      fidelity, pruning_experiment, reference_fuse)
from .params import ProtocolParams, build_params
from .routing import (AssembledTensor, RoutedTensor, RoutingGates, assemble,
                      expert_forward, gate, recalibrate_agents, route, se_branch)
from .scenario import SceneConfig, SyntheticScene, generate_scene
from .sender import (ChannelSaliencyMap, ChannelWeights, GroupAssignment,
                     ImportanceBundle, PatchScoreTable, Sender,
                     SpatialImportanceMap, build_message, channel_saliency,
                     classify_groups, ordering_violations, predict_spatial,
                     score_patches, sort_channels)
from .wire import (MetadataMessage, PayloadBlock, PayloadMessage, PlanMessage,
                   decode, encode)

__version__ = "0.1.0"
