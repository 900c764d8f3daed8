#include "dcd/clustering.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace dcd {

MatrixXd BinaryAttribution::as_matrix() const {
    MatrixXd m(n_examples(), n_edges);
    for (int i = 0; i < n_examples(); ++i)
        for (int j = 0; j < n_edges; ++j) m(i, j) = rows[i][j];
    return m;
}

BinaryAttribution binarize_rows(const MatrixXd& score_rows, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0))
        throw std::invalid_argument("gamma must lie in (0, 1]");
    BinaryAttribution b;
    b.gamma = gamma;
    b.n_edges = static_cast<int>(score_rows.cols());
    for (int i = 0; i < score_rows.rows(); ++i) {
        std::vector<int> order(b.n_edges);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int c) {
            double ma = std::abs(score_rows(i, a)), mc = std::abs(score_rows(i, c));
            if (ma != mc) return ma > mc;
            return a < c;
        });
        double total = score_rows.row(i).array().abs().sum();
        std::vector<uint8_t> row(b.n_edges, 0);
        int kept = 0;
        if (total > 0.0) {
            double acc = 0.0;
            for (int j = 0; j < b.n_edges; ++j) {
                acc += std::abs(score_rows(i, order[j]));
                row[order[j]] = 1;
                ++kept;
                if (acc >= gamma * total) break;
            }
        } else {
            b.empty_rows.push_back(i);
        }
        b.rows.push_back(std::move(row));
        b.retained_counts.push_back(kept);
    }
    return b;
}

BinaryAttribution binarize(const AttributionMatrix& m, double gamma) {
    return binarize_rows(m.rows, gamma);
}

void save_binary(const BinaryAttribution& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open binary-attribution file for writing: " + path);
    nlohmann::json header = {{"gamma", b.gamma},
                             {"n_examples", b.n_examples()},
                             {"n_edges", b.n_edges},
                             {"empty_rows", b.empty_rows}};
    std::string hs = header.dump();
    out.write("DCDB", 4);
    uint16_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), hs.size());
    const int stride = (b.n_edges + 7) / 8;
    std::vector<uint8_t> packed(stride);
    for (const auto& row : b.rows) {
        std::fill(packed.begin(), packed.end(), 0);
        for (int j = 0; j < b.n_edges; ++j)
            if (row[j]) packed[j / 8] |= static_cast<uint8_t>(1u << (j % 8));
        out.write(reinterpret_cast<const char*>(packed.data()), stride);
    }
    if (!out) throw IoError("failed writing binary-attribution file: " + path);
}

BinaryAttribution load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open binary-attribution file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DCDB")
        throw IoError("not a binary-attribution file: " + path);
    uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != 1) throw IoError("unsupported binary-attribution file version");
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    nlohmann::json header = nlohmann::json::parse(hs);
    BinaryAttribution b;
    b.gamma = header.at("gamma").get<double>();
    b.n_edges = header.at("n_edges").get<int>();
    b.empty_rows = header.at("empty_rows").get<std::vector<int>>();
    const int n = header.at("n_examples").get<int>();
    const int stride = (b.n_edges + 7) / 8;
    std::vector<uint8_t> packed(stride);
    for (int i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(packed.data()), stride);
        std::vector<uint8_t> row(b.n_edges, 0);
        int kept = 0;
        for (int j = 0; j < b.n_edges; ++j) {
            row[j] = (packed[j / 8] >> (j % 8)) & 1u;
            kept += row[j];
        }
        b.rows.push_back(std::move(row));
        b.retained_counts.push_back(kept);
    }
    if (!in) throw IoError("truncated binary-attribution file: " + path);
    return b;
}

namespace {

// Flip component signs so the largest-|entry| coordinate is positive
// (lowest index wins ties); removes the solver's sign ambiguity.
void canonicalize_signs(MatrixXd& components) {
    for (int i = 0; i < components.rows(); ++i) {
        int arg = 0;
        for (int j = 1; j < components.cols(); ++j)
            if (std::abs(components(i, j)) > std::abs(components(i, arg))) arg = j;
        if (components(i, arg) < 0.0) components.row(i) = -components.row(i);
    }
}

}  // namespace

MatrixXd ReducedEmbedding::project(const MatrixXd& x) const {
    if (method == ReduceMethod::pca)
        return (x.rowwise() - mean.transpose()) * components.transpose();
    return x * components.transpose();
}

ReducedEmbedding reduce(const MatrixXd& rows, ReduceMethod method, int r, uint64_t seed) {
    const int n = static_cast<int>(rows.rows());
    const int d = static_cast<int>(rows.cols());
    if (n < 2) throw std::invalid_argument("reduction needs at least two examples");
    if (r < 1 || r > std::min(n, d))
        throw std::invalid_argument("r must lie in [1, min(n_examples, n_edges)]");

    ReducedEmbedding out;
    out.method = method;
    out.r = r;
    out.seed = seed;
    MatrixXd work;
    if (method == ReduceMethod::pca) {
        out.mean = rows.colwise().mean().transpose();
        work = rows.rowwise() - out.mean.transpose();
    } else {
        out.mean = VectorXd::Zero(d);
        work = rows;
    }
    Eigen::BDCSVD<MatrixXd> svd(work, Eigen::ComputeThinV);
    out.components = svd.matrixV().leftCols(r).transpose();
    canonicalize_signs(out.components);
    out.rows = work * out.components.transpose();
    return out;
}

double jaccard_distance(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("binary rows differ in length");
    int inter = 0, uni = 0;
    for (size_t j = 0; j < a.size(); ++j) {
        inter += (a[j] & b[j]) != 0;
        uni += (a[j] | b[j]) != 0;
    }
    if (uni == 0) return 0.0;  // both empty, by convention
    return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

MatrixXd pairwise_jaccard_distances(const BinaryAttribution& b) {
    const int n = b.n_examples();
    MatrixXd d = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            d(i, j) = d(j, i) = jaccard_distance(b.rows[i], b.rows[j]);
    return d;
}

namespace {

double sq_dist(const MatrixXd& points, int i, const Eigen::RowVectorXd& c) {
    return (points.row(i) - c).squaredNorm();
}

KMeansResult lloyd_once(const MatrixXd& points, int k, Rng& rng) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());

    // k-means++ seeding
    MatrixXd centroids(k, d);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    centroids.row(0) = points.row(first);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            dist2[i] = std::min(dist2[i], sq_dist(points, i, centroids.row(c - 1)));
            total += dist2[i];
        }
        int chosen = n - 1;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
        }
        centroids.row(c) = points.row(chosen);
    }

    std::vector<int> assignment(n, 0);
    const int max_iters = 300;
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(points, i, centroids.row(0));
            for (int c = 1; c < k; ++c) {
                double dd = sq_dist(points, i, centroids.row(c));
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (assignment[i] != best) {
                assignment[i] = best;
                changed = true;
            }
        }
        MatrixXd sums = MatrixXd::Zero(k, d);
        std::vector<int> counts(k, 0);
        for (int i = 0; i < n; ++i) {
            sums.row(assignment[i]) += points.row(i);
            counts[assignment[i]]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centroids.row(c) = sums.row(c) / counts[c];
            } else {
                // restart an empty cluster at the point farthest from its
                // current centroid
                int far = 0;
                double fd = -1.0;
                for (int i = 0; i < n; ++i) {
                    double dd = sq_dist(points, i, centroids.row(assignment[i]));
                    if (dd > fd) {
                        fd = dd;
                        far = i;
                    }
                }
                centroids.row(c) = points.row(far);
                assignment[far] = c;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;
    }

    KMeansResult r;
    r.assignment = std::move(assignment);
    r.centroids = std::move(centroids);
    r.inertia = 0.0;
    for (int i = 0; i < n; ++i)
        r.inertia += sq_dist(points, i, r.centroids.row(r.assignment[i]));
    return r;
}

}  // namespace

KMeansResult cluster_kmeans(const MatrixXd& points, int k, int n_init, uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");
    if (n_init < 1) throw std::invalid_argument("n_init must be >= 1");
    KMeansResult best;
    for (int init = 0; init < n_init; ++init) {
        Rng rng(mix_seed(seed, 0x6b6d + static_cast<uint64_t>(init)));
        KMeansResult r = lloyd_once(points, k, rng);
        if (init == 0 || r.inertia < best.inertia) best = std::move(r);
    }
    return best;
}

std::vector<int> cluster_agglomerative(const MatrixXd& distances, int k,
                                       std::vector<double>* merge_heights) {
    const int n = static_cast<int>(distances.rows());
    if (distances.cols() != n) throw std::invalid_argument("distance matrix must be square");
    if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");

    // Lance-Williams average linkage over an active-cluster distance matrix.
    MatrixXd d = distances;
    std::vector<int> size(n, 1);
    std::vector<bool> active(n, true);
    std::vector<int> member_of(n);  // example -> active cluster slot
    std::iota(member_of.begin(), member_of.end(), 0);
    if (merge_heights) merge_heights->clear();

    for (int remaining = n; remaining > k; --remaining) {
        int bi = -1, bj = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (int j = i + 1; j < n; ++j) {
                if (!active[j]) continue;
                if (d(i, j) < bd) {
                    bd = d(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        if (merge_heights) merge_heights->push_back(bd);
        // merge bj into bi (bi < bj keeps representative = smallest index)
        for (int m = 0; m < n; ++m) {
            if (!active[m] || m == bi || m == bj) continue;
            double nd = (size[bi] * d(bi, m) + size[bj] * d(bj, m)) /
                        static_cast<double>(size[bi] + size[bj]);
            d(bi, m) = d(m, bi) = nd;
        }
        size[bi] += size[bj];
        active[bj] = false;
        for (int m = 0; m < n; ++m)
            if (member_of[m] == bj) member_of[m] = bi;
    }

    // densify cluster ids in order of first appearance
    std::vector<int> relabel(n, -1);
    int next = 0;
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) {
        int c = member_of[i];
        if (relabel[c] < 0) relabel[c] = next++;
        out[i] = relabel[c];
    }
    return out;
}

std::vector<int> cluster_divisive(const MatrixXd& points, int k, uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (k < 1 || k > n) throw std::invalid_argument("k must lie in [1, n]");

    std::vector<std::vector<int>> clusters = {std::vector<int>(n)};
    std::iota(clusters[0].begin(), clusters[0].end(), 0);

    auto total_variance = [&](const std::vector<int>& members) {
        if (members.size() < 2) return 0.0;
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(points.cols());
        for (int i : members) mean += points.row(i);
        mean /= static_cast<double>(members.size());
        double v = 0.0;
        for (int i : members) v += (points.row(i) - mean).squaredNorm();
        return v;
    };

    int split_round = 0;
    while (static_cast<int>(clusters.size()) < k) {
        int target = -1;
        double bv = -1.0;
        for (size_t c = 0; c < clusters.size(); ++c) {
            double v = total_variance(clusters[c]);
            if (v > bv && clusters[c].size() >= 2) {
                bv = v;
                target = static_cast<int>(c);
            }
        }
        if (target < 0) {
            // all remaining clusters are singletons or duplicates; split the
            // largest deterministically
            for (size_t c = 0; c < clusters.size(); ++c)
                if (target < 0 || clusters[c].size() > clusters[target].size())
                    target = static_cast<int>(c);
            if (clusters[target].size() < 2)
                throw std::invalid_argument("cannot split singleton clusters further");
        }

        MatrixXd sub(clusters[target].size(), points.cols());
        for (size_t i = 0; i < clusters[target].size(); ++i)
            sub.row(static_cast<int>(i)) = points.row(clusters[target][i]);
        KMeansResult split =
            cluster_kmeans(sub, 2, 5, mix_seed(seed, 0xd1f + static_cast<uint64_t>(split_round)));
        std::vector<int> a, b;
        for (size_t i = 0; i < clusters[target].size(); ++i)
            (split.assignment[i] == 0 ? a : b).push_back(clusters[target][i]);
        if (a.empty() || b.empty()) {
            // identical points: peel off the lowest-index member
            a.assign(clusters[target].begin(), clusters[target].begin() + 1);
            b.assign(clusters[target].begin() + 1, clusters[target].end());
        }
        clusters[target] = std::move(a);
        clusters.push_back(std::move(b));
        ++split_round;
    }

    std::vector<int> out(n, -1);
    for (size_t c = 0; c < clusters.size(); ++c)
        for (int i : clusters[c]) out[i] = static_cast<int>(c);
    return out;
}

GapResult gap_statistic(const MatrixXd& points, const std::vector<int>& k_range, int b,
                        int n_init, uint64_t seed) {
    if (k_range.empty()) throw std::invalid_argument("empty K range");
    for (size_t i = 1; i < k_range.size(); ++i)
        if (k_range[i] <= k_range[i - 1])
            throw std::invalid_argument("K range must be sorted ascending");
    if (b < 2) throw std::invalid_argument("gap statistic needs B >= 2 reference sets");

    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    VectorXd lo = points.colwise().minCoeff();
    VectorXd hi = points.colwise().maxCoeff();
    if ((hi - lo).maxCoeff() <= 0.0)
        throw NumericError("degenerate bounding box: all points identical");

    // reference sets are shared across K values, as in the usual formulation
    std::vector<MatrixXd> refs;
    for (int rb = 0; rb < b; ++rb) {
        Rng rng(mix_seed(seed, 0x9a9 + static_cast<uint64_t>(rb)));
        MatrixXd ref(n, d);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) ref(i, j) = rng.uniform(lo(j), hi(j));
        refs.push_back(std::move(ref));
    }

    GapResult r;
    r.k_values = k_range;
    const double floor_w = 1e-300;  // log guard for zero dispersion
    for (size_t ki = 0; ki < k_range.size(); ++ki) {
        const int k = k_range[ki];
        if (k > n) throw std::invalid_argument("K exceeds the number of points");
        double lw =
            std::log(std::max(cluster_kmeans(points, k, n_init,
                                             mix_seed(seed, 0xda7a + ki))
                                  .inertia,
                              floor_w));
        double mean_ref = 0.0, m2 = 0.0;
        std::vector<double> ref_lw(b);
        for (int rb = 0; rb < b; ++rb) {
            ref_lw[rb] = std::log(
                std::max(cluster_kmeans(refs[rb], k, n_init,
                                        mix_seed(seed, 0x5ef + ki * 131 + rb))
                             .inertia,
                         floor_w));
            mean_ref += ref_lw[rb];
        }
        mean_ref /= b;
        for (int rb = 0; rb < b; ++rb) m2 += (ref_lw[rb] - mean_ref) * (ref_lw[rb] - mean_ref);
        double sigma = std::sqrt(m2 / b);  // population standard deviation
        r.log_wk.push_back(lw);
        r.gap.push_back(mean_ref - lw);
        r.s_k.push_back(sigma * std::sqrt(1.0 + 1.0 / b));
    }

    // one-standard-error rule; argmax-gap fallback when no K satisfies it
    r.k_star = 0;
    for (size_t ki = 0; ki + 1 < k_range.size(); ++ki) {
        if (r.gap[ki] >= r.gap[ki + 1] - r.s_k[ki + 1]) {
            r.k_star = k_range[ki];
            r.one_se_satisfied = true;
            break;
        }
    }
    if (!r.one_se_satisfied) {
        size_t arg = 0;
        for (size_t ki = 1; ki < k_range.size(); ++ki)
            if (r.gap[ki] > r.gap[arg]) arg = ki;
        r.k_star = k_range[arg];
    }
    return r;
}

double silhouette(const std::vector<int>& assignment, const MatrixXd& distances) {
    const int n = static_cast<int>(assignment.size());
    if (distances.rows() != n || distances.cols() != n)
        throw std::invalid_argument("distance matrix does not match assignment");
    int k = 0;
    for (int a : assignment) k = std::max(k, a + 1);
    if (k < 2) throw std::invalid_argument("silhouette needs at least two clusters");
    std::vector<int> counts(k, 0);
    for (int a : assignment) counts[a]++;
    for (int c = 0; c < k; ++c)
        if (counts[c] == 0) throw std::invalid_argument("empty cluster in assignment");

    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (counts[assignment[i]] == 1) continue;  // singleton scores 0
        std::vector<double> mean_to(k, 0.0);
        for (int j = 0; j < n; ++j)
            if (j != i) mean_to[assignment[j]] += distances(i, j);
        double a = mean_to[assignment[i]] / (counts[assignment[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == assignment[i]) continue;
            b = std::min(b, mean_to[c] / counts[c]);
        }
        double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / n;
}

}  // namespace dcd
