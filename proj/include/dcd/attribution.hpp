#pragma once

#include <string>
#include <vector>

#include "dcd/graph.hpp"
#include "dcd/tasks.hpp"

namespace dcd {

enum class AttributionMethod { e_act, eap, eap_ig };

const char* method_name(AttributionMethod m);
AttributionMethod method_from_name(const std::string& name);

/// Per-example edge-score rows plus the dataset-mean row. Scores are oriented
/// so that positive s(e) means ablating e reduces the metric; ranking uses
/// |s(e)|.
struct AttributionMatrix {
    std::string manifest_hash;
    AttributionMethod method = AttributionMethod::eap_ig;
    int ig_steps = 0;  // eap_ig only
    MatrixXd rows;     // n_examples x |E|
    VectorXd mean_row; // |E|, fixed-order mean of rows

    int n_examples() const { return static_cast<int>(rows.rows()); }
    int n_edges() const { return static_cast<int>(rows.cols()); }
};

/// Exact per-edge patching: s(e) = m(clean) - m(forward with only e patched).
/// One clean forward, one corrupted forward, |E| patched forwards.
VectorXd attribute_e_act(const Parameters& params, const ComputationGraph& graph,
                         const PromptPair& pair);

/// First-order approximation: s(e) = sum over positions of
/// (clean_src - corrupted_src) . d m / d (destination input), gradients on
/// the clean run.
VectorXd attribute_eap(const Parameters& params, const ComputationGraph& graph,
                       const PromptPair& pair);

/// EAP with gradients averaged over `steps` forward passes whose input
/// embeddings interpolate from corrupted to clean; steps = 1 reproduces
/// attribute_eap exactly.
VectorXd attribute_eap_ig(const Parameters& params, const ComputationGraph& graph,
                          const PromptPair& pair, int steps);

VectorXd attribute(const Parameters& params, const ComputationGraph& graph,
                   const PromptPair& pair, AttributionMethod method, int ig_steps = 5);

AttributionMatrix attribute_dataset(const Parameters& params, const ComputationGraph& graph,
                                    const std::vector<PromptPair>& dataset,
                                    AttributionMethod method, int ig_steps = 5);

// File format "DCDA": magic, u16 version, u32 header length, header JSON
// (manifest hash, method, params, n_examples, n_edges), mean row as f64,
// then per-example rows as row-major f32. save(load(save(x))) is
// byte-identical.
void save_attribution(const AttributionMatrix& m, const std::string& path);
AttributionMatrix load_attribution(const std::string& path);

}  // namespace dcd
