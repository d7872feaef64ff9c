#include "sgalign/graph_tokens.hpp"

#include <algorithm>
#include <cmath>

#include "sgalign/ops.hpp"

namespace sgalign {

namespace {

constexpr double kBoxNormEps = 1e-5;

Tensor uniform_fan_in(Rng& rng, std::size_t fan_in, Shape shape) {
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.uniform(-a, a);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

Tensor normal_embedding(Rng& rng, Shape shape, std::size_t dim) {
    const double stddev = std::sqrt(1.0 / static_cast<double>(dim));
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = rng.normal(0.0, stddev);
    return Tensor::from_data(std::move(shape), std::move(data), true);
}

} // namespace

GraphParams make_graph_params(std::size_t num_entities, std::size_t num_predicates,
                              std::size_t max_nodes, std::size_t dim, Rng& rng) {
    if (max_nodes < 1) throw ConfigError("max_nodes must be at least 1");
    GraphParams p;
    p.max_nodes = max_nodes;
    p.dim = dim;
    p.entity_embeddings = normal_embedding(rng, {num_entities, dim}, dim);
    p.predicate_embeddings = normal_embedding(rng, {num_predicates, dim}, dim);
    p.node_structural_encodings = normal_embedding(rng, {max_nodes, dim}, dim);
    p.graph_token = normal_embedding(rng, {1, dim}, dim);
    p.box_w1 = uniform_fan_in(rng, 4, {4, dim});
    p.box_b1 = Tensor::zeros({dim}, true);
    p.box_norm_gain = Tensor::full({dim}, 1.0, true);
    p.box_norm_bias = Tensor::zeros({dim}, true);
    p.box_w2 = Tensor::zeros({dim, dim}, true);
    p.box_b2 = Tensor::zeros({dim}, true);
    return p;
}

Tensor edge_encoding(const Tensor& enc_subject, const Tensor& enc_object) {
    return ops::sub(enc_subject, enc_object);
}

Tensor embed_boxes(const Tensor& boxes, const GraphParams& params) {
    if (boxes.cols() != 4) {
        throw ShapeError("embed_boxes: expected [M,4] boxes, got " + shape_to_string(boxes.shape()));
    }
    Tensor h = ops::add_rowwise(ops::matmul(boxes, params.box_w1), params.box_b1);
    h = ops::layer_norm(h, params.box_norm_gain, params.box_norm_bias, kBoxNormEps);
    h = ops::relu(h);
    return ops::add_rowwise(ops::matmul(h, params.box_w2), params.box_b2);
}

Tensor embed_box(const BBox& box, const GraphParams& params) {
    return embed_boxes(Tensor::from_data({1, 4}, {box.x, box.y, box.w, box.h}), params);
}

GraphSequence serialize(const SceneGraph& graph, const GraphParams& params, Rng& rng,
                        bool shuffle, bool use_boxes, QueryRestriction restriction) {
    if (graph.nodes.empty()) throw DataError("cannot serialize an empty scene graph");
    if (use_boxes && !graph.location_bound()) {
        throw DataError("location-bound serialization requested but the graph has nodes without boxes");
    }
    const std::size_t M = graph.nodes.size();
    const std::size_t d = params.dim;

    GraphSequenceMeta meta;
    if (M > params.max_nodes) {
        auto kept = rng.sample_without_replacement(M, params.max_nodes);
        std::sort(kept.begin(), kept.end());
        meta.kept_nodes = kept;
        std::vector<std::uint8_t> is_kept(M, 0);
        for (std::size_t i : kept) is_kept[i] = 1;
        for (std::size_t i = 0; i < M; ++i) {
            if (!is_kept[i]) meta.dropped_nodes.push_back(i);
        }
    } else {
        meta.kept_nodes.resize(M);
        for (std::size_t i = 0; i < M; ++i) meta.kept_nodes[i] = i;
    }
    const std::size_t kept_count = meta.kept_nodes.size();

    // structural-encoding slots: an injection kept node -> encoding row
    if (shuffle) {
        meta.encoding_slots = rng.sample_without_replacement(params.max_nodes, kept_count);
    } else {
        meta.encoding_slots.resize(kept_count);
        for (std::size_t i = 0; i < kept_count; ++i) meta.encoding_slots[i] = i;
    }

    // position of each surviving original node in the kept list
    std::vector<std::size_t> position(M, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < kept_count; ++i) position[meta.kept_nodes[i]] = i;

    std::vector<std::size_t> entity_ids(kept_count);
    for (std::size_t i = 0; i < kept_count; ++i) {
        entity_ids[i] = graph.nodes[meta.kept_nodes[i]].entity_id;
    }

    std::vector<std::size_t> edge_pred_ids, edge_subj_slots, edge_obj_slots;
    for (const GraphEdge& e : graph.edges) {
        const std::size_t ps = position[e.subject];
        const std::size_t po = position[e.object];
        if (ps == static_cast<std::size_t>(-1) || po == static_cast<std::size_t>(-1)) continue;
        edge_pred_ids.push_back(e.predicate_id);
        edge_subj_slots.push_back(meta.encoding_slots[ps]);
        edge_obj_slots.push_back(meta.encoding_slots[po]);
    }
    const std::size_t edge_count = edge_pred_ids.size();

    if (restriction == QueryRestriction::EdgeOnly && edge_count == 0) {
        throw DataError("edge-only query on a graph with no (surviving) edges");
    }

    Tensor node_tokens = ops::gather_rows(params.entity_embeddings, entity_ids);
    if (use_boxes) {
        std::vector<double> box_data;
        box_data.reserve(kept_count * 4);
        for (std::size_t i : meta.kept_nodes) {
            const BBox& b = *graph.nodes[i].bbox;
            box_data.insert(box_data.end(), {b.x, b.y, b.w, b.h});
        }
        Tensor boxes = Tensor::from_data({kept_count, 4}, std::move(box_data));
        node_tokens = ops::add(node_tokens, embed_boxes(boxes, params));
    }

    Tensor node_encodings = ops::gather_rows(params.node_structural_encodings, meta.encoding_slots);

    GraphSequence seq;
    seq.meta = std::move(meta);
    const Tensor zero_row = Tensor::zeros({1, d});

    switch (restriction) {
    case QueryRestriction::Full: {
        if (edge_count > 0) {
            Tensor edge_tokens = ops::gather_rows(params.predicate_embeddings, edge_pred_ids);
            Tensor edge_encodings =
                edge_encoding(ops::gather_rows(params.node_structural_encodings, edge_subj_slots),
                              ops::gather_rows(params.node_structural_encodings, edge_obj_slots));
            seq.tokens = ops::concat_rows({params.graph_token, node_tokens, edge_tokens});
            seq.encodings = ops::concat_rows({zero_row, node_encodings, edge_encodings});
        } else {
            seq.tokens = ops::concat_rows({params.graph_token, node_tokens});
            seq.encodings = ops::concat_rows({zero_row, node_encodings});
        }
        seq.num_nodes = kept_count;
        seq.num_edges = edge_count;
        break;
    }
    case QueryRestriction::NodeOnly: {
        seq.tokens = ops::concat_rows({params.graph_token, node_tokens});
        seq.encodings = Tensor::zeros({1 + kept_count, d});
        seq.num_nodes = kept_count;
        seq.num_edges = 0;
        break;
    }
    case QueryRestriction::EdgeOnly: {
        Tensor edge_tokens = ops::gather_rows(params.predicate_embeddings, edge_pred_ids);
        seq.tokens = ops::concat_rows({params.graph_token, edge_tokens});
        seq.encodings = Tensor::zeros({1 + edge_count, d});
        seq.num_nodes = 0;
        seq.num_edges = edge_count;
        break;
    }
    }
    return seq;
}

} // namespace sgalign
