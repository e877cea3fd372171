"""Hybrid flow-field surrogate: a differentiable coarse Euler solver embedded
in a graph convolutional network over unstructured airfoil meshes."""

from .mesh import (
    Graph,
    Marker,
    Mesh,
    MeshFormatError,
    build_graph,
    element_orientations,
    knn,
    mesh_hash,
    parse_su2,
    signed_distance,
    triangulate,
    write_su2,
)
from .meshopt import UpdateProjection, detect_flips, project_update
from .solver import (
    FlowState,
    ForwardRecord,
    FreestreamSpec,
    SolverError,
    SolverOutput,
    cells_to_nodes,
    euler_residual,
    freestream_state,
    solve,
    solve_backward,
)
from .gnn import (
    AdamState,
    GcnLayer,
    NormalizedAdjacency,
    adam_step,
    gcn_backward,
    gcn_forward,
    normalized_adjacency,
)
from .upsample import UpsamplePlan, apply, apply_backward, build_plan
from .data import (
    Dataset,
    DatasetError,
    FieldSample,
    MeshPair,
    SplitSpec,
    airfoil_omesh,
    desk_mesh_pair,
    generate_ground_truth,
    load_dataset,
    make_split,
    rectangle_mesh,
    save_dataset,
)
from .pipeline import (
    ConfigError,
    ModelParams,
    Prediction,
    TrainConfig,
    build_features,
    evaluate,
    forward,
    forward_backward,
    loss_mse,
    predict_gcn_only,
    predict_ucm,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
