#pragma once

#include <string>
#include <vector>

#include "dcd/model.hpp"

namespace dcd {

enum class NodeKind { input, attn_head, mlp, logits };

struct NodeId {
    NodeKind kind = NodeKind::input;
    int layer = -1;  // attn_head and mlp only
    int head = -1;   // attn_head only

    bool operator==(const NodeId&) const = default;
    std::string name() const;  // "input", "a0.h1", "m0", "logits"
};

NodeId node_from_name(const std::string& name);

struct EdgeId {
    NodeId src;
    NodeId dst;
    Channel channel = Channel::in;
    int index = 0;  // dense position in the canonical ordering
};

/// Nodes in topological order (input, per layer heads then MLP, logits) and
/// edges grouped by destination, channel (q,k,v | in), then source; the
/// ordering is a pure function of the config.
struct ComputationGraph {
    ModelConfig config;
    std::vector<NodeId> nodes;
    std::vector<EdgeId> edges;

    int node_index(const NodeId& id) const;
    int n_edges() const { return static_cast<int>(edges.size()); }

    std::string manifest_json() const;
    std::string manifest_hash() const;
};

ComputationGraph enumerate_graph(const ModelConfig& config);

enum class AblationMode { counterfactual, zero };

/// Which source activation each edge delivers. Flagged edges feed the
/// destination the corrupted cache's source output (or zero), everything
/// else the recomputed value from this run; downstream nodes recompute.
struct PatchPlan {
    const ComputationGraph* graph = nullptr;
    const ActivationCache* clean = nullptr;
    const ActivationCache* corrupted = nullptr;
    std::vector<uint8_t> corrupt_edge;  // |E|, 1 = deliver corrupted source
    AblationMode mode = AblationMode::counterfactual;
};

PatchPlan make_plan(const ComputationGraph& graph, const ActivationCache& clean,
                    const ActivationCache& corrupted,
                    AblationMode mode = AblationMode::counterfactual);

/// Runs the model on the clean prompt with edge-level source substitution.
/// An all-clean plan reproduces forward() bit-for-bit; an all-corrupted plan
/// reproduces the corrupted run's node outputs.
MatrixXd patched_forward(const Parameters& params, const PatchPlan& plan,
                         const std::vector<int>& tokens);

/// Cached residual-stream contribution of a (non-logits) node.
const MatrixXd& node_output(const ActivationCache& cache, const NodeId& node);

void save_manifest(const ComputationGraph& graph, const std::string& path);

}  // namespace dcd
