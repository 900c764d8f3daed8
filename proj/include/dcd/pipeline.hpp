#pragma once

#include <string>
#include <vector>

#include "dcd/circuits.hpp"
#include "dcd/clustering.hpp"

namespace dcd {

enum class ClusterAlgo { kmeans, agglomerative, divisive };

const char* cluster_algo_name(ClusterAlgo a);
ClusterAlgo cluster_algo_from_name(const std::string& name);

struct DcdConfig {
    AttributionMethod method = AttributionMethod::eap_ig;
    int ig_steps = 5;
    bool binarize = true;   // feed gamma-binarized rows to the reduction
    double gamma = 0.99;
    ReduceMethod reduction = ReduceMethod::pca;
    int r = 20;
    std::vector<int> k_range = {2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    int gap_b = 20;
    int n_init = 5;
    uint64_t reduction_seed = 42;
    uint64_t cluster_seed = 5;
    ClusterAlgo algo = ClusterAlgo::kmeans;
    int min_cluster_size = 3;  // smaller clusters warn, not fail
    std::vector<double> circuit_sizes = default_size_grid();
};

struct ClusterResult {
    std::vector<int> assignment;  // example -> cluster id in [0, k_star)
    int k_star = 0;
    ClusterAlgo algo = ClusterAlgo::kmeans;
    GapResult gap;
    std::vector<std::pair<int, double>> silhouette_by_k;
    std::vector<int> cluster_sizes;
    std::vector<VectorXd> cluster_mean_rows;      // dataset-mean attribution per cluster
    std::vector<std::vector<Circuit>> circuits;   // [cluster][size index]
    AttributionMatrix attributions;
    BinaryAttribution binary;
    ReducedEmbedding embedding;
    std::vector<std::string> warnings;

    /// One circuit per cluster at the requested size index.
    std::vector<Circuit> circuits_at(size_t size_index) const;
};

/// Per-example attribution -> binarize -> reduce -> gap-statistic K* ->
/// cluster -> per-cluster mean attribution and circuit selection. k-means
/// and divisive cluster the reduced embedding; agglomerative clusters
/// Jaccard distances over binary rows.
ClusterResult run_dcd(const Parameters& params, const ComputationGraph& graph,
                      const std::vector<PromptPair>& dataset, const DcdConfig& config);

/// Uniform random edge scores, no attribution call; deterministic per seed.
VectorXd baseline_random_edges(const ComputationGraph& graph, uint64_t seed);

/// Medoid example index per cluster: the member with minimal summed Jaccard
/// distance to its cluster (ties toward the lowest example index).
std::vector<int> k_representative_medoids(const BinaryAttribution& binary,
                                          const std::vector<int>& assignment, int k);

/// Circuits from each cluster medoid's own per-example score row.
std::vector<Circuit> baseline_k_representative(const ClusterResult& result,
                                               const ComputationGraph& graph,
                                               double size_fraction);

/// Uniform random partition of n examples into k non-empty parts.
std::vector<std::vector<int>> random_partition(int n, int k, uint64_t seed);

/// Mean attribution rows over the parts of a random partition.
std::vector<VectorXd> baseline_k_random_rows(const AttributionMatrix& m, int k,
                                             uint64_t seed);

void save_cluster_result(const ClusterResult& result, const ComputationGraph& graph,
                         const std::string& dir, const std::string& stem);

}  // namespace dcd
