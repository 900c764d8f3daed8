#include "dcd/circuits.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace dcd {

Circuit select_circuit(const VectorXd& scores, const ComputationGraph& graph, double k,
                       const std::string& method, const std::string& dataset_id) {
    if (!(k > 0.0 && k <= 1.0)) throw std::invalid_argument("size fraction must lie in (0, 1]");
    if (scores.size() != graph.n_edges())
        throw std::invalid_argument("score row length does not match edge count");
    const int e = graph.n_edges();
    // guard against k*|E| landing epsilon above an integer
    int count = static_cast<int>(std::ceil(k * e - 1e-9));
    count = std::max(1, std::min(count, e));

    std::vector<int> order(e);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double ma = std::abs(scores(a)), mb = std::abs(scores(b));
        if (ma != mb) return ma > mb;
        return a < b;
    });
    order.resize(count);
    std::sort(order.begin(), order.end());

    Circuit c;
    c.manifest_hash = graph.manifest_hash();
    c.size_fraction = k;
    c.method = method;
    c.dataset_id = dataset_id;
    for (int idx : order) c.edges.push_back({idx, scores(idx)});
    return c;
}

double jaccard(const Circuit& a, const Circuit& b) {
    if (a.manifest_hash != b.manifest_hash)
        throw ConfigError("circuits come from different graph manifests");
    size_t i = 0, j = 0, inter = 0;
    while (i < a.edges.size() && j < b.edges.size()) {
        if (a.edges[i].index == b.edges[j].index) {
            ++inter;
            ++i;
            ++j;
        } else if (a.edges[i].index < b.edges[j].index) {
            ++i;
        } else {
            ++j;
        }
    }
    size_t uni = a.edges.size() + b.edges.size() - inter;
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double metric_logit_diff(const MatrixXd& logits, int correct,
                         const std::vector<int>& counterfactuals, int position) {
    return metric_value(logits, MetricSpec{position, correct, counterfactuals});
}

const std::vector<double>& default_size_grid() {
    static const std::vector<double> grid = {0.001, 0.002, 0.005, 0.01, 0.02,
                                             0.05,  0.1,   0.2,   0.5,  1.0};
    return grid;
}

EvalContext EvalContext::build(const Parameters& params, const ComputationGraph& graph,
                               const std::vector<PromptPair>& dataset, AblationMode mode) {
    EvalContext ctx;
    ctx.params = &params;
    ctx.graph = &graph;
    ctx.dataset = dataset;
    ctx.mode = mode;
    for (const auto& pair : dataset) {
        pair.validate();
        ctx.clean.push_back(forward(params, pair.clean));
        ctx.corrupted.push_back(forward(params, pair.corrupt));
        ctx.m_full.push_back(metric_value(ctx.clean.back().logits, metric_spec_of(pair)));
        PatchPlan plan = make_plan(graph, ctx.clean.back(), ctx.corrupted.back(), mode);
        std::fill(plan.corrupt_edge.begin(), plan.corrupt_edge.end(), 1);
        MatrixXd empty_logits = patched_forward(params, plan, pair.clean);
        ctx.m_empty.push_back(metric_value(empty_logits, metric_spec_of(pair)));
    }
    return ctx;
}

double EvalContext::metric_with_circuit(const Circuit& c, int example) const {
    PatchPlan plan = make_plan(*graph, clean[example], corrupted[example], mode);
    std::fill(plan.corrupt_edge.begin(), plan.corrupt_edge.end(), 1);
    for (const auto& e : c.edges) plan.corrupt_edge[e.index] = 0;
    MatrixXd logits = patched_forward(*params, plan, dataset[example].clean);
    return metric_value(logits, metric_spec_of(dataset[example]));
}

FaithfulnessResult faithfulness(const EvalContext& ctx, const Circuit& circuit) {
    if (circuit.manifest_hash != ctx.graph->manifest_hash())
        throw ConfigError("circuit does not match the evaluation graph");
    FaithfulnessResult r;
    r.n_examples = ctx.size();
    double sum_c = 0.0, sum_g = 0.0, sum_e = 0.0;
    int included = 0;
    for (int i = 0; i < ctx.size(); ++i) {
        if (std::abs(ctx.m_full[i] - ctx.m_empty[i]) < kDegenerateDenominator) {
            r.degenerate_indices.push_back(i);
            continue;
        }
        sum_c += ctx.metric_with_circuit(circuit, i);
        sum_g += ctx.m_full[i];
        sum_e += ctx.m_empty[i];
        ++included;
    }
    r.n_degenerate = static_cast<int>(r.degenerate_indices.size());
    if (included == 0) return r;  // flagged: f stays empty
    r.m_circuit = sum_c / included;
    r.m_full = sum_g / included;
    r.m_empty = sum_e / included;
    if (std::abs(r.m_full - r.m_empty) < kDegenerateDenominator) return r;
    r.f = (r.m_circuit - r.m_empty) / (r.m_full - r.m_empty);
    return r;
}

FaithfulnessCurve faithfulness_curve(const EvalContext& ctx, const VectorXd& scores,
                                     const std::vector<double>& grid,
                                     const std::string& method,
                                     const std::string& dataset_id) {
    for (size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] <= 1.0))
            throw std::invalid_argument("grid fractions must lie in (0, 1]");
        if (i > 0 && grid[i] <= grid[i - 1])
            throw std::invalid_argument("grid fractions must be strictly increasing");
    }
    FaithfulnessCurve curve;
    for (double k : grid) {
        Circuit c = select_circuit(scores, *ctx.graph, k, method, dataset_id);
        FaithfulnessResult r = faithfulness(ctx, c);
        if (!r.f)
            throw NumericError("degenerate metric denominator on the evaluation dataset");
        curve.points.emplace_back(k, *r.f);
        curve.m_full = r.m_full;
        curve.m_empty = r.m_empty;
        curve.n_degenerate = r.n_degenerate;
    }
    return curve;
}

namespace {

double trapezoid_unit_interval(std::vector<std::pair<double, double>> pts) {
    if (pts.empty()) throw std::invalid_argument("curve has no points");
    std::sort(pts.begin(), pts.end());
    if (pts.front().first > 0.0) pts.insert(pts.begin(), {0.0, pts.front().second});
    if (pts.back().first < 1.0) pts.push_back({1.0, pts.back().second});
    double area = 0.0;
    for (size_t i = 0; i + 1 < pts.size(); ++i)
        area += (pts[i + 1].first - pts[i].first) * 0.5 *
                (pts[i].second + pts[i + 1].second);
    return area;
}

}  // namespace

double cpr(const std::vector<std::pair<double, double>>& points) {
    return trapezoid_unit_interval(points);
}
double cpr(const FaithfulnessCurve& curve) { return cpr(curve.points); }

double cmd_prime(const std::vector<std::pair<double, double>>& points) {
    std::vector<std::pair<double, double>> t;
    t.reserve(points.size());
    for (const auto& [k, f] : points) t.emplace_back(k, std::max(0.0, 1.0 - f));
    return trapezoid_unit_interval(t);
}
double cmd_prime(const FaithfulnessCurve& curve) { return cmd_prime(curve.points); }

BestOfKResult best_of_k_faithfulness(const EvalContext& ctx,
                                     const std::vector<Circuit>& circuits) {
    if (circuits.empty()) throw std::invalid_argument("best-of-K needs at least one circuit");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    BestOfKResult r;
    r.per_example_f.setConstant(ctx.size(), static_cast<int>(circuits.size()), nan);
    r.f_star.assign(ctx.size(), nan);
    double sum = 0.0;
    int included = 0;
    for (int i = 0; i < ctx.size(); ++i) {
        double den = ctx.m_full[i] - ctx.m_empty[i];
        if (std::abs(den) < kDegenerateDenominator) {
            r.excluded.push_back(i);
            continue;
        }
        double best = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < circuits.size(); ++c) {
            double f = (ctx.metric_with_circuit(circuits[c], i) - ctx.m_empty[i]) / den;
            r.per_example_f(i, static_cast<int>(c)) = f;
            best = std::max(best, f);
        }
        r.f_star[i] = best;
        sum += best;
        ++included;
    }
    if (included == 0) throw NumericError("all examples have degenerate denominators");
    r.mean_f_star = sum / included;
    return r;
}

void save_circuit(const Circuit& c, const ComputationGraph& graph, const std::string& path) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : c.edges) {
        const EdgeId& id = graph.edges[e.index];
        edges.push_back({{"src", id.src.name()},
                         {"dst", id.dst.name()},
                         {"channel", channel_name(id.channel)},
                         {"score", e.score}});
    }
    nlohmann::json j = {{"manifest_hash", c.manifest_hash},
                        {"method", c.method},
                        {"size_fraction", c.size_fraction},
                        {"dataset_id", c.dataset_id},
                        {"edges", edges}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open circuit file for writing: " + path);
    out << j.dump(2) << "\n";
}

Circuit load_circuit(const ComputationGraph& graph, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open circuit file: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    Circuit c;
    c.manifest_hash = j.at("manifest_hash").get<std::string>();
    if (c.manifest_hash != graph.manifest_hash())
        throw ConfigError("circuit file does not match the graph manifest");
    c.method = j.at("method").get<std::string>();
    c.size_fraction = j.at("size_fraction").get<double>();
    c.dataset_id = j.at("dataset_id").get<std::string>();
    // recover canonical indices from (src, dst, channel)
    std::map<std::string, int> index_of;
    for (const auto& e : graph.edges)
        index_of[e.src.name() + ">" + e.dst.name() + ":" + channel_name(e.channel)] =
            e.index;
    for (const auto& ej : j.at("edges")) {
        std::string key = ej.at("src").get<std::string>() + ">" +
                          ej.at("dst").get<std::string>() + ":" +
                          ej.at("channel").get<std::string>();
        auto it = index_of.find(key);
        if (it == index_of.end()) throw IoError("circuit edge not present in graph: " + key);
        c.edges.push_back({it->second, ej.at("score").get<double>()});
    }
    std::sort(c.edges.begin(), c.edges.end(),
              [](const CircuitEdge& a, const CircuitEdge& b) { return a.index < b.index; });
    return c;
}

}  // namespace dcd
