#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgalign/errors.hpp"

namespace sgalign {

// Normalized [x, y, w, h] box, origin top-left, units relative to the image.
struct BBox {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
};

struct Vocab {
    std::vector<std::string> entities;
    std::vector<std::string> predicates;

    std::size_t entity_id(const std::string& name) const;
    std::size_t predicate_id(const std::string& name) const;
    void validate() const; // unique, non-empty names
};

struct GraphNode {
    std::size_t entity_id = 0;
    std::optional<BBox> bbox;
};

struct GraphEdge {
    std::size_t predicate_id = 0;
    std::size_t subject = 0;
    std::size_t object = 0;
};

// Entity nodes plus directed predicate edges. A graph is location-bound iff
// every node carries a bbox; mixed graphs are rejected at ingestion.
struct SceneGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    bool location_bound() const;
    SceneGraph location_free_view() const; // same graph with bboxes dropped
    void validate(const Vocab& vocab) const;
};

// One line of the dataset file: an annotated (graph, image) pair.
struct DatasetSample {
    std::string image; // file name, resolved against the images directory
    SceneGraph graph;
};

// Parses one JSON scene-graph document ({"nodes": [...], "edges": [...]})
// against the vocabulary. Throws DataError with the offending name/index.
SceneGraph parse_scene_graph(const std::string& json_text, const Vocab& vocab);

std::string scene_graph_to_json(const SceneGraph& graph, const Vocab& vocab,
                                const std::string& image = "");

Vocab load_vocab(const std::string& path);
void save_vocab(const Vocab& vocab, const std::string& path);

std::vector<DatasetSample> load_dataset_jsonl(const std::string& path, const Vocab& vocab);
void save_dataset_jsonl(const std::vector<DatasetSample>& samples, const Vocab& vocab,
                        const std::string& path);

} // namespace sgalign
