#pragma once

#include <cstdint>

#include "sgalign/rng.hpp"
#include "sgalign/scene_graph.hpp"
#include "sgalign/tensor.hpp"

namespace sgalign {

// Learnable quantities owned by the graph tower input side.
struct GraphParams {
    Tensor entity_embeddings;         // [|entities|, d]
    Tensor predicate_embeddings;      // [|predicates|, d]
    Tensor node_structural_encodings; // [max_nodes, d]
    Tensor graph_token;               // [1, d]
    // box embedder: 4 -> d affine, layer norm, ReLU, d -> d affine.
    // The final affine starts at zero so location-bound collapses to
    // location-free at init.
    Tensor box_w1, box_b1, box_norm_gain, box_norm_bias, box_w2, box_b2;
    std::size_t max_nodes = 0;
    std::size_t dim = 0;
};

GraphParams make_graph_params(std::size_t num_entities, std::size_t num_predicates,
                              std::size_t max_nodes, std::size_t dim, Rng& rng);

struct GraphSequenceMeta {
    std::vector<std::size_t> kept_nodes;     // original indices, ascending
    std::vector<std::size_t> dropped_nodes;  // clipped-node record
    std::vector<std::size_t> encoding_slots; // structural-encoding row per kept node
};

// Serialized graph: row 0 is the graph token (zero encoding), then node
// tokens, then edge tokens.
struct GraphSequence {
    Tensor tokens;    // [(1+M'+N'), d]
    Tensor encodings; // [(1+M'+N'), d]
    GraphSequenceMeta meta;
    std::size_t num_nodes = 0; // M'
    std::size_t num_edges = 0; // N'

    std::size_t length() const { return 1 + num_nodes + num_edges; }
};

// Restricted-input query construction: node-only drops edge tokens and all
// structural encodings; edge-only keeps edge tokens with zeroed encodings.
enum class QueryRestriction { Full, NodeOnly, EdgeOnly };

// Direction-preserving edge encoding: subject encoding minus object encoding.
Tensor edge_encoding(const Tensor& enc_subject, const Tensor& enc_object);

// Box embedder as a batch: boxes [M,4] -> [M,d].
Tensor embed_boxes(const Tensor& boxes, const GraphParams& params);
Tensor embed_box(const BBox& box, const GraphParams& params); // [1, d]

// Serialization per the graph-sequence construction:
//   1. if M > max_nodes, uniformly sample max_nodes survivors (rng) and drop
//      the rest together with their incident edges;
//   2. structural-encoding slots: random injection when shuffle is on,
//      index order otherwise;
//   3. node tokens = entity embeddings (+ box embeddings when use_boxes),
//      edge tokens = predicate embeddings, edge encodings = slot differences;
//   4. graph token first with a zero encoding row.
GraphSequence serialize(const SceneGraph& graph, const GraphParams& params, Rng& rng,
                        bool shuffle, bool use_boxes,
                        QueryRestriction restriction = QueryRestriction::Full);

} // namespace sgalign
