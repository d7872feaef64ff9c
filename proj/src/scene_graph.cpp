#include "sgalign/scene_graph.hpp"

#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace sgalign {

using nlohmann::json;

namespace {

std::size_t lookup(const std::vector<std::string>& names, const std::string& name,
                   const char* kind) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) return i;
    }
    throw DataError(std::string("unknown ") + kind + " category: '" + name + "'");
}

void check_unique(const std::vector<std::string>& names, const char* kind) {
    std::unordered_set<std::string> seen;
    for (const std::string& n : names) {
        if (n.empty()) throw DataError(std::string("empty ") + kind + " category name");
        if (!seen.insert(n).second) {
            throw DataError(std::string("duplicate ") + kind + " category: '" + n + "'");
        }
    }
}

void validate_bbox(const BBox& b) {
    if (!(b.x >= 0.0 && b.y >= 0.0 && b.w > 0.0 && b.h > 0.0 && b.x + b.w <= 1.0 &&
          b.y + b.h <= 1.0)) {
        throw DataError("bbox [" + std::to_string(b.x) + ", " + std::to_string(b.y) + ", " +
                        std::to_string(b.w) + ", " + std::to_string(b.h) +
                        "] outside the normalized unit square");
    }
}

SceneGraph graph_from_json(const json& doc, const Vocab& vocab) {
    if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("edges")) {
        throw DataError("scene graph document must be an object with 'nodes' and 'edges'");
    }
    SceneGraph g;
    std::size_t with_box = 0;
    for (const json& jn : doc.at("nodes")) {
        GraphNode node;
        node.entity_id = lookup(vocab.entities, jn.at("label").get<std::string>(), "entity");
        if (jn.contains("bbox") && !jn.at("bbox").is_null()) {
            const json& jb = jn.at("bbox");
            if (!jb.is_array() || jb.size() != 4) {
                throw DataError("bbox must be a [x, y, w, h] array");
            }
            BBox b{jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(),
                   jb[3].get<double>()};
            validate_bbox(b);
            node.bbox = b;
            ++with_box;
        }
        g.nodes.push_back(node);
    }
    if (g.nodes.empty()) throw DataError("empty scene graph (no nodes)");
    if (with_box != 0 && with_box != g.nodes.size()) {
        throw DataError("mixed bbox presence: " + std::to_string(with_box) + " of " +
                        std::to_string(g.nodes.size()) +
                        " nodes carry boxes; a graph must be all location-bound or all "
                        "location-free");
    }
    for (const json& je : doc.at("edges")) {
        GraphEdge e;
        e.predicate_id = lookup(vocab.predicates, je.at("predicate").get<std::string>(), "predicate");
        e.subject = je.at("subject").get<std::size_t>();
        e.object = je.at("object").get<std::size_t>();
        if (e.subject >= g.nodes.size() || e.object >= g.nodes.size()) {
            throw DataError("edge endpoint out of range: subject " + std::to_string(e.subject) +
                            ", object " + std::to_string(e.object) + " in a " +
                            std::to_string(g.nodes.size()) + "-node graph");
        }
        if (e.subject == e.object) {
            throw DataError("self-relation on node " + std::to_string(e.subject) +
                            " is not representable (its edge encoding would be zero)");
        }
        g.edges.push_back(e);
    }
    return g;
}

json graph_to_json_obj(const SceneGraph& g, const Vocab& vocab) {
    json jn = json::array();
    for (const GraphNode& n : g.nodes) {
        json obj{{"label", vocab.entities.at(n.entity_id)}};
        if (n.bbox) obj["bbox"] = {n.bbox->x, n.bbox->y, n.bbox->w, n.bbox->h};
        jn.push_back(obj);
    }
    json je = json::array();
    for (const GraphEdge& e : g.edges) {
        je.push_back({{"predicate", vocab.predicates.at(e.predicate_id)},
                      {"subject", e.subject},
                      {"object", e.object}});
    }
    return json{{"nodes", jn}, {"edges", je}};
}

} // namespace

std::size_t Vocab::entity_id(const std::string& name) const {
    return lookup(entities, name, "entity");
}

std::size_t Vocab::predicate_id(const std::string& name) const {
    return lookup(predicates, name, "predicate");
}

void Vocab::validate() const {
    check_unique(entities, "entity");
    check_unique(predicates, "predicate");
    if (entities.empty()) throw DataError("vocabulary has no entity categories");
    if (predicates.empty()) throw DataError("vocabulary has no predicate categories");
}

bool SceneGraph::location_bound() const {
    if (nodes.empty()) return false;
    for (const GraphNode& n : nodes) {
        if (!n.bbox) return false;
    }
    return true;
}

SceneGraph SceneGraph::location_free_view() const {
    SceneGraph g = *this;
    for (GraphNode& n : g.nodes) n.bbox.reset();
    return g;
}

void SceneGraph::validate(const Vocab& vocab) const {
    if (nodes.empty()) throw DataError("empty scene graph (no nodes)");
    std::size_t with_box = 0;
    for (const GraphNode& n : nodes) {
        if (n.entity_id >= vocab.entities.size()) {
            throw DataError("entity id " + std::to_string(n.entity_id) + " outside vocabulary");
        }
        if (n.bbox) {
            validate_bbox(*n.bbox);
            ++with_box;
        }
    }
    if (with_box != 0 && with_box != nodes.size()) {
        throw DataError("mixed bbox presence in scene graph");
    }
    for (const GraphEdge& e : edges) {
        if (e.predicate_id >= vocab.predicates.size()) {
            throw DataError("predicate id " + std::to_string(e.predicate_id) + " outside vocabulary");
        }
        if (e.subject >= nodes.size() || e.object >= nodes.size()) {
            throw DataError("edge endpoint out of range");
        }
        if (e.subject == e.object) throw DataError("self-relation is not representable");
    }
}

SceneGraph parse_scene_graph(const std::string& json_text, const Vocab& vocab) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("scene graph JSON parse failure: ") + e.what());
    }
    try {
        return graph_from_json(doc, vocab);
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed scene graph document: ") + e.what());
    }
}

std::string scene_graph_to_json(const SceneGraph& graph, const Vocab& vocab,
                                const std::string& image) {
    json obj = graph_to_json_obj(graph, vocab);
    if (!image.empty()) obj["image"] = image;
    return obj.dump();
}

Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    json doc;
    try {
        in >> doc;
        Vocab v;
        v.entities = doc.at("entities").get<std::vector<std::string>>();
        v.predicates = doc.at("predicates").get<std::vector<std::string>>();
        v.validate();
        return v;
    } catch (const json::exception& e) {
        throw DataError("malformed vocabulary file " + path + ": " + e.what());
    }
}

void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    out << json{{"entities", vocab.entities}, {"predicates", vocab.predicates}}.dump(2) << "\n";
}

std::vector<DatasetSample> load_dataset_jsonl(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<DatasetSample> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json doc;
        try {
            doc = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": JSON parse failure: " + e.what());
        }
        DatasetSample s;
        try {
            s.image = doc.value("image", "");
            s.graph = graph_from_json(doc, vocab);
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

void save_dataset_jsonl(const std::vector<DatasetSample>& samples, const Vocab& vocab,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const DatasetSample& s : samples) {
        out << scene_graph_to_json(s.graph, vocab, s.image) << "\n";
    }
}

} // namespace sgalign
