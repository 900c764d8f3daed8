#include "dcd/graph.hpp"

#include <json.hpp>

#include <fstream>

namespace dcd {

std::string NodeId::name() const {
    switch (kind) {
        case NodeKind::input: return "input";
        case NodeKind::logits: return "logits";
        case NodeKind::mlp: return "m" + std::to_string(layer);
        case NodeKind::attn_head:
            return "a" + std::to_string(layer) + ".h" + std::to_string(head);
    }
    return "?";
}

NodeId node_from_name(const std::string& name) {
    NodeId id;
    if (name == "input") {
        id.kind = NodeKind::input;
        return id;
    }
    if (name == "logits") {
        id.kind = NodeKind::logits;
        return id;
    }
    if (name.size() >= 2 && name[0] == 'm') {
        id.kind = NodeKind::mlp;
        id.layer = std::stoi(name.substr(1));
        return id;
    }
    auto dot = name.find(".h");
    if (name.size() >= 4 && name[0] == 'a' && dot != std::string::npos) {
        id.kind = NodeKind::attn_head;
        id.layer = std::stoi(name.substr(1, dot - 1));
        id.head = std::stoi(name.substr(dot + 2));
        return id;
    }
    throw ConfigError("unparsable node name: " + name);
}

int ComputationGraph::node_index(const NodeId& id) const {
    for (size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] == id) return static_cast<int>(i);
    throw ConfigError("node not in graph: " + id.name());
}

ComputationGraph enumerate_graph(const ModelConfig& config) {
    config.validate();
    ComputationGraph g;
    g.config = config;

    g.nodes.push_back({NodeKind::input, -1, -1});
    for (int l = 0; l < config.n_layers; ++l) {
        for (int h = 0; h < config.n_heads; ++h)
            g.nodes.push_back({NodeKind::attn_head, l, h});
        if (config.has_mlp()) g.nodes.push_back({NodeKind::mlp, l, -1});
    }
    g.nodes.push_back({NodeKind::logits, -1, -1});

    // Edges grouped by destination in node order; per destination, channels
    // q,k,v (heads) or in (MLP/logits); per channel, sources in node order.
    int index = 0;
    auto add_edges_into = [&](const NodeId& dst, int n_sources,
                              std::initializer_list<Channel> channels) {
        for (Channel ch : channels)
            for (int s = 0; s < n_sources; ++s)
                g.edges.push_back({g.nodes[s], dst, ch, index++});
    };
    int node_pos = 1;  // first non-input node
    for (int l = 0; l < config.n_layers; ++l) {
        // all heads in a layer read the stream before the layer's attention
        int head_sources = 1 + l * config.n_heads + (config.has_mlp() ? l : 0);
        for (int h = 0; h < config.n_heads; ++h) {
            add_edges_into(g.nodes[node_pos], head_sources,
                           {Channel::q, Channel::k, Channel::v});
            ++node_pos;
        }
        if (config.has_mlp()) {
            int mlp_sources = head_sources + config.n_heads;
            add_edges_into(g.nodes[node_pos], mlp_sources, {Channel::in});
            ++node_pos;
        }
    }
    add_edges_into(g.nodes[node_pos], node_pos, {Channel::in});
    return g;
}

std::string ComputationGraph::manifest_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["config"] = {{"n_layers", config.n_layers}, {"n_heads", config.n_heads},
                   {"d_mlp", config.d_mlp}};
    nlohmann::json nodes_j = nlohmann::json::array();
    for (const auto& n : nodes) nodes_j.push_back(n.name());
    j["nodes"] = nodes_j;
    nlohmann::json edges_j = nlohmann::json::array();
    for (const auto& e : edges)
        edges_j.push_back({{"index", e.index},
                           {"src", e.src.name()},
                           {"dst", e.dst.name()},
                           {"channel", channel_name(e.channel)}});
    j["edges"] = edges_j;
    return j.dump();
}

std::string ComputationGraph::manifest_hash() const {
    return hex64(fnv1a64(manifest_json()));
}

void save_manifest(const ComputationGraph& graph, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open manifest for writing: " + path);
    out << graph.manifest_json() << "\n";
}

PatchPlan make_plan(const ComputationGraph& graph, const ActivationCache& clean,
                    const ActivationCache& corrupted, AblationMode mode) {
    if (clean.seq_len != corrupted.seq_len)
        throw AlignmentError("clean/corrupted caches differ in sequence length");
    PatchPlan plan;
    plan.graph = &graph;
    plan.clean = &clean;
    plan.corrupted = &corrupted;
    plan.corrupt_edge.assign(graph.edges.size(), 0);
    plan.mode = mode;
    return plan;
}

const MatrixXd& node_output(const ActivationCache& c, const NodeId& n) {
    switch (n.kind) {
        case NodeKind::input: return c.input_out;
        case NodeKind::attn_head: return c.heads[n.layer][n.head].out;
        case NodeKind::mlp: return c.mlps[n.layer].out;
        case NodeKind::logits: break;
    }
    throw std::logic_error("logits node has no stream output");
}

MatrixXd patched_forward(const Parameters& params, const PatchPlan& plan,
                         const std::vector<int>& tokens) {
    const ComputationGraph& g = *plan.graph;
    const auto& cfg = params.config;
    if (plan.corrupt_edge.size() != g.edges.size())
        throw std::invalid_argument("plan flag count does not match edge count");
    if (plan.clean->seq_len != static_cast<int>(tokens.size()) ||
        plan.corrupted->seq_len != static_cast<int>(tokens.size()))
        throw AlignmentError("plan caches do not match token length");

    const int s = static_cast<int>(tokens.size());
    MatrixXd zero = MatrixXd::Zero(s, cfg.d_model);

    // Recomputed node outputs, indexed like g.nodes (logits slot unused).
    std::vector<MatrixXd> out(g.nodes.size());
    out[0] = embed_tokens(params, tokens);

    // Edges are enumerated grouped by (destination, channel, source), so a
    // single cursor walks them in lockstep with recomputation.
    size_t cursor = 0;
    auto assemble = [&](int n_sources) {
        MatrixXd acc = MatrixXd::Zero(s, cfg.d_model);
        bool first = true;
        for (int i = 0; i < n_sources; ++i, ++cursor) {
            const EdgeId& e = g.edges[cursor];
            const MatrixXd* src;
            if (!plan.corrupt_edge[e.index]) {
                src = &out[i];
            } else if (plan.mode == AblationMode::zero) {
                src = &zero;
            } else {
                src = &node_output(*plan.corrupted, e.src);
            }
            if (first) {
                acc = *src;
                first = false;
            } else {
                acc += *src;
            }
        }
        return acc;
    };

    int node_pos = 1;
    MatrixXd logits;
    for (int l = 0; l < cfg.n_layers; ++l) {
        int head_sources = 1 + l * cfg.n_heads + (cfg.has_mlp() ? l : 0);
        for (int h = 0; h < cfg.n_heads; ++h) {
            MatrixXd q_in = assemble(head_sources);
            MatrixXd k_in = assemble(head_sources);
            MatrixXd v_in = assemble(head_sources);
            out[node_pos++] = head_forward(params, l, h, q_in, k_in, v_in).out;
        }
        if (cfg.has_mlp()) {
            MatrixXd in = assemble(head_sources + cfg.n_heads);
            out[node_pos++] = mlp_forward(params, l, in).out;
        }
    }
    MatrixXd logits_in = assemble(node_pos);
    return logits_forward(params, logits_in);
}

}  // namespace dcd
