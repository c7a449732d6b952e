from .retrieval import (
    DetectionResult,
    RetrievalConfig,
    SimilarityMatrix,
    build_similarity,
    detect_loops,
    non_max_suppression,
    sequence_match,
)
from .selector import (
    CandidateArea,
    LoopPair,
    PlaceRecord,
    SelectorConfig,
    cluster_candidate_areas,
    find_preliminary_loops,
    gate_threshold,
    pose_distance,
    select_candidate_areas,
    triangle_area,
)
