"""protofed: deterministic simulator of prototype-exchange federated graph
learning with topology-aware client prototypes, a trainable server-side
prototype generator, and exact communication accounting."""

from .backbone import (Backbone, GraphOperator, forward, init_backbone,
                       local_loss, make_operator, predict, train_epoch)
from .config import FederationConfig, resolve_config
from .engine import (FederationState, run_experiment, run_round, run_rounds,
                     setup_experiment)
from .generators import generate_homophily, generate_sbm
from .graph import (Graph, edge_homophily, khop_class_neighborhood, load_graph,
                    save_graph, sparsify)
from .partition import (Partition, balanced_partition, louvain_partition,
                        modularity, partition_graph)
from .prototypes import (AttentionScorer, Prototype, add_prototype_noise,
                         naive_local_prototypes, pseudo_annotate,
                         topology_aware_prototypes)
from .server import (GpgState, adaptive_margin, build_query_sets,
                     client_similarity, contrastive_loss, cosine_similarity,
                     init_gpg, naive_global_aggregate, personalized_fusion,
                     train_gpg)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
