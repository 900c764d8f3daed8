#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcd/attribution.hpp"

namespace dcd {

/// Per-example binary edge supports: the minimal prefix of edges sorted by
/// descending |score| whose cumulative |score| reaches gamma of the row
/// total. Ties break toward lower canonical index.
struct BinaryAttribution {
    double gamma = 0.99;
    int n_edges = 0;
    std::vector<std::vector<uint8_t>> rows;  // n x |E|, values 0/1
    std::vector<int> retained_counts;
    std::vector<int> empty_rows;  // all-zero score rows, flagged

    int n_examples() const { return static_cast<int>(rows.size()); }
    MatrixXd as_matrix() const;
};

BinaryAttribution binarize(const AttributionMatrix& m, double gamma = 0.99);
BinaryAttribution binarize_rows(const MatrixXd& rows, double gamma = 0.99);

// Binary rows reuse the attribution container with a packed-bit payload
// (magic "DCDB").
void save_binary(const BinaryAttribution& b, const std::string& path);
BinaryAttribution load_binary(const std::string& path);

enum class ReduceMethod { pca, truncated_svd };

/// Fitted projection onto an orthonormal basis; sign convention: each
/// component's largest-|entry| coordinate is positive.
struct ReducedEmbedding {
    MatrixXd rows;        // n x r
    ReduceMethod method = ReduceMethod::pca;
    int r = 0;
    MatrixXd components;  // r x d, rows orthonormal
    VectorXd mean;        // d (pca only; zero vector for svd)
    uint64_t seed = 0;

    MatrixXd project(const MatrixXd& x) const;
};

ReducedEmbedding reduce(const MatrixXd& rows, ReduceMethod method, int r,
                        uint64_t seed = 42);

/// 1 - |a & b| / |a | b|; two empty rows have distance 0.
double jaccard_distance(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);
MatrixXd pairwise_jaccard_distances(const BinaryAttribution& b);

struct KMeansResult {
    std::vector<int> assignment;
    MatrixXd centroids;  // K x d
    double inertia = 0.0;  // W_K, summed squared distances to centroids
};

/// Lloyd's algorithm with k-means++ seeding and n_init restarts (best
/// inertia kept); empty clusters restart at the point farthest from its
/// centroid. Deterministic given seed.
KMeansResult cluster_kmeans(const MatrixXd& points, int k, int n_init, uint64_t seed);

/// Average-linkage agglomerative clustering over a distance matrix, cut at
/// k clusters; optionally records merge heights. Ties break toward the pair
/// with the smallest representative indices.
std::vector<int> cluster_agglomerative(const MatrixXd& distances, int k,
                                       std::vector<double>* merge_heights = nullptr);

/// Recursive 2-means splits of the cluster with the highest total
/// within-cluster variance until k clusters remain.
std::vector<int> cluster_divisive(const MatrixXd& points, int k, uint64_t seed);

struct GapResult {
    int k_star = 0;
    std::vector<int> k_values;
    std::vector<double> gap;     // Gap(K)
    std::vector<double> s_k;     // sigma_K * sqrt(1 + 1/B)
    std::vector<double> log_wk;  // data dispersion
    bool one_se_satisfied = false;  // false -> argmax-gap fallback was used
};

/// Tibshirani gap statistic with B uniform bounding-box reference sets and
/// the one-standard-error rule; sigma uses the population divisor.
GapResult gap_statistic(const MatrixXd& points, const std::vector<int>& k_range, int b,
                        int n_init, uint64_t seed);

/// Mean silhouette under a supplied distance matrix; singleton clusters
/// score 0.
double silhouette(const std::vector<int>& assignment, const MatrixXd& distances);

}  // namespace dcd
