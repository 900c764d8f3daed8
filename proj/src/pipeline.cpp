#include "dcd/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace dcd {

const char* cluster_algo_name(ClusterAlgo a) {
    switch (a) {
        case ClusterAlgo::kmeans: return "kmeans";
        case ClusterAlgo::agglomerative: return "agglomerative";
        case ClusterAlgo::divisive: return "divisive";
    }
    return "?";
}

ClusterAlgo cluster_algo_from_name(const std::string& name) {
    if (name == "kmeans") return ClusterAlgo::kmeans;
    if (name == "agglomerative") return ClusterAlgo::agglomerative;
    if (name == "divisive") return ClusterAlgo::divisive;
    throw ConfigError("unknown clustering algorithm: " + name);
}

std::vector<Circuit> ClusterResult::circuits_at(size_t size_index) const {
    std::vector<Circuit> out;
    for (const auto& per_cluster : circuits) {
        if (size_index >= per_cluster.size())
            throw std::out_of_range("circuit size index out of range");
        out.push_back(per_cluster[size_index]);
    }
    return out;
}

namespace {

std::vector<int> cluster_at_k(const MatrixXd& embedding, const MatrixXd& jaccard_d,
                              const DcdConfig& cfg, int k) {
    switch (cfg.algo) {
        case ClusterAlgo::kmeans:
            return cluster_kmeans(embedding, k, cfg.n_init, cfg.cluster_seed).assignment;
        case ClusterAlgo::agglomerative:
            return cluster_agglomerative(jaccard_d, k);
        case ClusterAlgo::divisive:
            return cluster_divisive(embedding, k, cfg.cluster_seed);
    }
    throw std::logic_error("unreachable");
}

}  // namespace

ClusterResult run_dcd(const Parameters& params, const ComputationGraph& graph,
                      const std::vector<PromptPair>& dataset, const DcdConfig& config) {
    if (dataset.empty()) throw std::invalid_argument("run_dcd: empty dataset");
    ClusterResult result;
    result.algo = config.algo;

    result.attributions =
        attribute_dataset(params, graph, dataset, config.method, config.ig_steps);
    result.binary = binarize(result.attributions, config.gamma);
    for (int row : result.binary.empty_rows)
        result.warnings.push_back("example " + std::to_string(row) +
                                  " has an all-zero attribution row");

    const MatrixXd reduce_input =
        config.binarize ? result.binary.as_matrix() : result.attributions.rows;
    const int n = static_cast<int>(dataset.size());
    const int r = std::min(config.r, std::min(n, graph.n_edges()));
    if (r < config.r)
        result.warnings.push_back("reduced dimension clipped to " + std::to_string(r));
    result.embedding =
        reduce(reduce_input, config.reduction, r, config.reduction_seed);

    MatrixXd jaccard_d = pairwise_jaccard_distances(result.binary);

    std::vector<int> k_range;
    for (int k : config.k_range)
        if (k <= n) k_range.push_back(k);
    if (k_range.empty()) throw ConfigError("no K in the sweep range fits the dataset size");
    result.gap = gap_statistic(result.embedding.rows, k_range, config.gap_b,
                               config.n_init, config.cluster_seed);
    result.k_star = result.gap.k_star;

    for (int k : k_range) {
        if (k < 2) continue;  // silhouette undefined for one cluster
        std::vector<int> a = cluster_at_k(result.embedding.rows, jaccard_d, config, k);
        result.silhouette_by_k.emplace_back(k, silhouette(a, jaccard_d));
    }

    result.assignment = cluster_at_k(result.embedding.rows, jaccard_d, config, result.k_star);
    result.cluster_sizes.assign(result.k_star, 0);
    for (int a : result.assignment) result.cluster_sizes[a]++;
    for (int c = 0; c < result.k_star; ++c)
        if (result.cluster_sizes[c] < config.min_cluster_size)
            result.warnings.push_back("cluster " + std::to_string(c) + " has only " +
                                      std::to_string(result.cluster_sizes[c]) +
                                      " examples");

    // per-cluster dataset-mean attribution, then top-k circuits per size
    for (int c = 0; c < result.k_star; ++c) {
        VectorXd sum = VectorXd::Zero(graph.n_edges());
        for (int i = 0; i < n; ++i)
            if (result.assignment[i] == c) sum += result.attributions.rows.row(i).transpose();
        VectorXd mean = sum / std::max(1, result.cluster_sizes[c]);
        result.cluster_mean_rows.push_back(mean);
        std::vector<Circuit> per_size;
        for (double k : config.circuit_sizes)
            per_size.push_back(select_circuit(mean, graph, k,
                                              std::string("dcd_") + method_name(config.method),
                                              "cluster" + std::to_string(c)));
        result.circuits.push_back(std::move(per_size));
    }
    return result;
}

VectorXd baseline_random_edges(const ComputationGraph& graph, uint64_t seed) {
    Rng rng(mix_seed(seed, 0xedce5));
    VectorXd s(graph.n_edges());
    for (int i = 0; i < graph.n_edges(); ++i) s(i) = rng.uniform();
    return s;
}

std::vector<int> k_representative_medoids(const BinaryAttribution& binary,
                                          const std::vector<int>& assignment, int k) {
    std::vector<int> medoids(k, -1);
    std::vector<double> best(k, 0.0);
    for (int c = 0; c < k; ++c) {
        for (size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != c) continue;
            double total = 0.0;
            for (size_t j = 0; j < assignment.size(); ++j)
                if (assignment[j] == c && j != i)
                    total += jaccard_distance(binary.rows[i], binary.rows[j]);
            if (medoids[c] < 0 || total < best[c]) {
                medoids[c] = static_cast<int>(i);
                best[c] = total;
            }
        }
        if (medoids[c] < 0) throw std::invalid_argument("empty cluster has no medoid");
    }
    return medoids;
}

std::vector<Circuit> baseline_k_representative(const ClusterResult& result,
                                               const ComputationGraph& graph,
                                               double size_fraction) {
    std::vector<int> medoids =
        k_representative_medoids(result.binary, result.assignment, result.k_star);
    std::vector<Circuit> out;
    for (int c = 0; c < result.k_star; ++c) {
        VectorXd row = result.attributions.rows.row(medoids[c]).transpose();
        out.push_back(select_circuit(row, graph, size_fraction, "k_representative",
                                     "medoid" + std::to_string(medoids[c])));
    }
    return out;
}

std::vector<std::vector<int>> random_partition(int n, int k, uint64_t seed) {
    if (k < 1 || k > n) throw std::invalid_argument("partition needs 1 <= k <= n");
    Rng rng(mix_seed(seed, 0x9a27));
    std::vector<std::vector<int>> parts;
    for (;;) {
        parts.assign(k, {});
        for (int i = 0; i < n; ++i)
            parts[rng.uniform_int(static_cast<uint64_t>(k))].push_back(i);
        bool ok = true;
        for (const auto& p : parts) ok = ok && !p.empty();
        if (ok) return parts;
    }
}

std::vector<VectorXd> baseline_k_random_rows(const AttributionMatrix& m, int k,
                                             uint64_t seed) {
    auto parts = random_partition(m.n_examples(), k, seed);
    std::vector<VectorXd> rows;
    for (const auto& part : parts) {
        VectorXd sum = VectorXd::Zero(m.n_edges());
        for (int i : part) sum += m.rows.row(i).transpose();
        rows.push_back(sum / static_cast<double>(part.size()));
    }
    return rows;
}

void save_cluster_result(const ClusterResult& result, const ComputationGraph& graph,
                         const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json j;
    j["k_star"] = result.k_star;
    j["algorithm"] = cluster_algo_name(result.algo);
    j["assignments"] = result.assignment;
    j["cluster_sizes"] = result.cluster_sizes;
    j["warnings"] = result.warnings;
    nlohmann::json gap = nlohmann::json::array();
    for (size_t i = 0; i < result.gap.k_values.size(); ++i)
        gap.push_back({{"k", result.gap.k_values[i]},
                       {"gap", result.gap.gap[i]},
                       {"s_k", result.gap.s_k[i]},
                       {"log_wk", result.gap.log_wk[i]}});
    j["gap_curve"] = gap;
    nlohmann::json sil = nlohmann::json::array();
    for (const auto& [k, s] : result.silhouette_by_k)
        sil.push_back({{"k", k}, {"silhouette", s}});
    j["silhouettes"] = sil;

    nlohmann::json files = nlohmann::json::array();
    for (size_t c = 0; c < result.circuits.size(); ++c) {
        nlohmann::json per_cluster = nlohmann::json::array();
        for (size_t s = 0; s < result.circuits[c].size(); ++s) {
            char name[128];
            std::snprintf(name, sizeof(name), "%s_cluster%zu_size%g.circuit.json",
                          stem.c_str(), c, result.circuits[c][s].size_fraction);
            save_circuit(result.circuits[c][s], graph, (fs::path(dir) / name).string());
            per_cluster.push_back(name);
        }
        files.push_back(per_cluster);
    }
    j["per_cluster_circuit_files"] = files;

    std::ofstream out(fs::path(dir) / (stem + ".clusters.json"));
    if (!out) throw IoError("cannot write cluster result in " + dir);
    out << j.dump(2) << "\n";
}

}  // namespace dcd
