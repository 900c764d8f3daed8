#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcd/attribution.hpp"
#include "dcd/graph.hpp"
#include "dcd/tasks.hpp"

namespace dcd {

struct CircuitEdge {
    int index = 0;  // canonical edge index
    double score = 0.0;
};

struct Circuit {
    std::string manifest_hash;
    double size_fraction = 1.0;
    std::vector<CircuitEdge> edges;  // sorted by canonical index
    std::string method;
    std::string dataset_id;

    int n_edges() const { return static_cast<int>(edges.size()); }
};

/// Top ceil(k * |E|) edges by |score|, ties broken by lower canonical index.
/// Nested for nested fractions over the same score row.
Circuit select_circuit(const VectorXd& scores, const ComputationGraph& graph, double k,
                       const std::string& method = "", const std::string& dataset_id = "");

/// Edge-set Jaccard similarity; scores ignored. Throws on manifest mismatch.
double jaccard(const Circuit& a, const Circuit& b);

double metric_logit_diff(const MatrixXd& logits, int correct,
                         const std::vector<int>& counterfactuals, int position);

/// Default circuit-size grid (10 points, 0.001 .. 1).
const std::vector<double>& default_size_grid();

/// Precomputed per-example caches and reference metrics for faithfulness
/// evaluation: m_full from the clean forward, m_empty from the all-edges
/// patched forward.
struct EvalContext {
    const Parameters* params = nullptr;
    const ComputationGraph* graph = nullptr;
    std::vector<PromptPair> dataset;
    std::vector<ActivationCache> clean, corrupted;
    std::vector<double> m_full, m_empty;

    static EvalContext build(const Parameters& params, const ComputationGraph& graph,
                             const std::vector<PromptPair>& dataset,
                             AblationMode mode = AblationMode::counterfactual);
    AblationMode mode = AblationMode::counterfactual;

    int size() const { return static_cast<int>(dataset.size()); }
    /// Metric of one example under a circuit (non-circuit edges ablated).
    double metric_with_circuit(const Circuit& c, int example) const;
};

constexpr double kDegenerateDenominator = 1e-6;

struct FaithfulnessResult {
    std::optional<double> f;  // empty when the dataset denominator is degenerate
    double m_circuit = 0.0, m_full = 0.0, m_empty = 0.0;  // means over included examples
    int n_examples = 0;
    int n_degenerate = 0;
    std::vector<int> degenerate_indices;  // reported, never silently dropped
};

FaithfulnessResult faithfulness(const EvalContext& ctx, const Circuit& circuit);

struct FaithfulnessCurve {
    std::vector<std::pair<double, double>> points;  // (size fraction, f)
    double m_full = 0.0, m_empty = 0.0;
    int n_degenerate = 0;
};

FaithfulnessCurve faithfulness_curve(const EvalContext& ctx, const VectorXd& scores,
                                     const std::vector<double>& grid = default_size_grid(),
                                     const std::string& method = "",
                                     const std::string& dataset_id = "");

/// Area under the faithfulness curve over k in [0,1]; trapezoid between grid
/// points, first/last point values extended to the boundaries.
double cpr(const std::vector<std::pair<double, double>>& points);
double cpr(const FaithfulnessCurve& curve);

/// Under-recovery area: integrand max(0, 1 - f), same quadrature as cpr.
double cmd_prime(const std::vector<std::pair<double, double>>& points);
double cmd_prime(const FaithfulnessCurve& curve);

struct BestOfKResult {
    double mean_f_star = 0.0;
    MatrixXd per_example_f;           // n x K, NaN rows for excluded examples
    std::vector<double> f_star;       // per included example; NaN if excluded
    std::vector<int> excluded;        // degenerate per-example denominators
};

/// Per-example faithfulness of each circuit; f*(x) = max over circuits;
/// mean over non-degenerate examples. Throws NumericError when every example
/// is degenerate.
BestOfKResult best_of_k_faithfulness(const EvalContext& ctx,
                                     const std::vector<Circuit>& circuits);

void save_circuit(const Circuit& c, const ComputationGraph& graph, const std::string& path);
Circuit load_circuit(const ComputationGraph& graph, const std::string& path);

}  // namespace dcd
