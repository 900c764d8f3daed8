#include "dcd/attribution.hpp"

#include <json.hpp>

#include <fstream>

namespace dcd {

const char* method_name(AttributionMethod m) {
    switch (m) {
        case AttributionMethod::e_act: return "e_act";
        case AttributionMethod::eap: return "eap";
        case AttributionMethod::eap_ig: return "eap_ig";
    }
    return "?";
}

AttributionMethod method_from_name(const std::string& name) {
    if (name == "e_act") return AttributionMethod::e_act;
    if (name == "eap") return AttributionMethod::eap;
    if (name == "eap_ig") return AttributionMethod::eap_ig;
    throw ConfigError("unknown attribution method: " + name);
}

namespace {

const MatrixXd& site_gradient(const GradientCache& g, const EdgeId& e) {
    switch (e.dst.kind) {
        case NodeKind::attn_head: {
            int c = e.channel == Channel::q ? 0 : (e.channel == Channel::k ? 1 : 2);
            return g.head_sites[e.dst.layer][e.dst.head][c];
        }
        case NodeKind::mlp: return g.mlp_sites[e.dst.layer];
        case NodeKind::logits: return g.logits_site;
        case NodeKind::input: break;
    }
    throw std::logic_error("input node is never an edge destination");
}

VectorXd scores_from_gradients(const ComputationGraph& graph,
                               const ActivationCache& clean,
                               const ActivationCache& corrupted,
                               const GradientCache& grads) {
    VectorXd s(graph.n_edges());
    for (const EdgeId& e : graph.edges) {
        const MatrixXd& zc = node_output(clean, e.src);
        const MatrixXd& zx = node_output(corrupted, e.src);
        const MatrixXd& g = site_gradient(grads, e);
        s(e.index) = ((zc - zx).array() * g.array()).sum();
    }
    return s;
}

}  // namespace

VectorXd attribute_e_act(const Parameters& params, const ComputationGraph& graph,
                         const PromptPair& pair) {
    pair.validate();
    ActivationCache clean = forward(params, pair.clean);
    ActivationCache corrupted = forward(params, pair.corrupt);
    const double m_clean = metric_value(clean.logits, metric_spec_of(pair));
    PatchPlan plan = make_plan(graph, clean, corrupted);
    VectorXd s(graph.n_edges());
    for (int e = 0; e < graph.n_edges(); ++e) {
        plan.corrupt_edge[e] = 1;
        MatrixXd logits = patched_forward(params, plan, pair.clean);
        s(e) = m_clean - metric_value(logits, metric_spec_of(pair));
        plan.corrupt_edge[e] = 0;
    }
    return s;
}

VectorXd attribute_eap(const Parameters& params, const ComputationGraph& graph,
                       const PromptPair& pair) {
    pair.validate();
    ActivationCache clean = forward(params, pair.clean);
    ActivationCache corrupted = forward(params, pair.corrupt);
    GradientCache grads = backward_metric(params, clean, metric_spec_of(pair));
    return scores_from_gradients(graph, clean, corrupted, grads);
}

VectorXd attribute_eap_ig(const Parameters& params, const ComputationGraph& graph,
                          const PromptPair& pair, int steps) {
    if (steps < 1) throw std::invalid_argument("eap_ig requires steps >= 1");
    pair.validate();
    ActivationCache clean = forward(params, pair.clean);
    ActivationCache corrupted = forward(params, pair.corrupt);
    const MatrixXd x_clean = embed_tokens(params, pair.clean);
    const MatrixXd x_corrupt = embed_tokens(params, pair.corrupt);
    const MetricSpec spec = metric_spec_of(pair);

    GradientCache acc;
    const double inv = 1.0 / static_cast<double>(steps);
    for (int j = 1; j <= steps; ++j) {
        const double alpha = static_cast<double>(j) / static_cast<double>(steps);
        // exact endpoint so steps=1 collapses to plain EAP bit-for-bit
        MatrixXd x = (j == steps) ? x_clean : MatrixXd(x_corrupt + alpha * (x_clean - x_corrupt));
        ActivationCache cache = forward_from_embeddings(params, x);
        GradientCache g = backward_metric(params, cache, spec);
        if (j == 1) {
            acc = std::move(g);
        } else {
            for (size_t l = 0; l < acc.head_sites.size(); ++l)
                for (size_t h = 0; h < acc.head_sites[l].size(); ++h)
                    for (int c = 0; c < 3; ++c)
                        acc.head_sites[l][h][c] += g.head_sites[l][h][c];
            for (size_t l = 0; l < acc.mlp_sites.size(); ++l)
                acc.mlp_sites[l] += g.mlp_sites[l];
            acc.logits_site += g.logits_site;
        }
    }
    for (auto& layer : acc.head_sites)
        for (auto& head : layer)
            for (auto& m : head) m *= inv;
    for (auto& m : acc.mlp_sites) m *= inv;
    acc.logits_site *= inv;
    return scores_from_gradients(graph, clean, corrupted, acc);
}

VectorXd attribute(const Parameters& params, const ComputationGraph& graph,
                   const PromptPair& pair, AttributionMethod method, int ig_steps) {
    switch (method) {
        case AttributionMethod::e_act: return attribute_e_act(params, graph, pair);
        case AttributionMethod::eap: return attribute_eap(params, graph, pair);
        case AttributionMethod::eap_ig: return attribute_eap_ig(params, graph, pair, ig_steps);
    }
    throw std::logic_error("unreachable");
}

AttributionMatrix attribute_dataset(const Parameters& params, const ComputationGraph& graph,
                                    const std::vector<PromptPair>& dataset,
                                    AttributionMethod method, int ig_steps) {
    if (dataset.empty()) throw std::invalid_argument("attribute_dataset: empty dataset");
    AttributionMatrix m;
    m.manifest_hash = graph.manifest_hash();
    m.method = method;
    m.ig_steps = method == AttributionMethod::eap_ig ? ig_steps : 0;
    m.rows.resize(static_cast<int>(dataset.size()), graph.n_edges());
    for (size_t i = 0; i < dataset.size(); ++i)
        m.rows.row(static_cast<int>(i)) =
            attribute(params, graph, dataset[i], method, ig_steps).transpose();
    // fixed summation order: example 0, 1, ...
    VectorXd sum = VectorXd::Zero(graph.n_edges());
    for (int i = 0; i < m.rows.rows(); ++i) sum += m.rows.row(i).transpose();
    m.mean_row = sum / static_cast<double>(m.rows.rows());
    return m;
}

void save_attribution(const AttributionMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open attribution file for writing: " + path);
    nlohmann::json header = {{"manifest_hash", m.manifest_hash},
                             {"method", method_name(m.method)},
                             {"ig_steps", m.ig_steps},
                             {"n_examples", m.n_examples()},
                             {"n_edges", m.n_edges()}};
    std::string hs = header.dump();
    out.write("DCDA", 4);
    uint16_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), hs.size());
    for (int j = 0; j < m.n_edges(); ++j) {
        double d = m.mean_row(j);
        out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    for (int i = 0; i < m.n_examples(); ++i)
        for (int j = 0; j < m.n_edges(); ++j) {
            float f = static_cast<float>(m.rows(i, j));
            out.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
    if (!out) throw IoError("failed writing attribution file: " + path);
}

AttributionMatrix load_attribution(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open attribution file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "DCDA")
        throw IoError("not an attribution file: " + path);
    uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != 1) throw IoError("unsupported attribution file version");
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    nlohmann::json header = nlohmann::json::parse(hs);

    AttributionMatrix m;
    m.manifest_hash = header.at("manifest_hash").get<std::string>();
    m.method = method_from_name(header.at("method").get<std::string>());
    m.ig_steps = header.at("ig_steps").get<int>();
    const int n = header.at("n_examples").get<int>();
    const int e = header.at("n_edges").get<int>();
    m.mean_row.resize(e);
    in.read(reinterpret_cast<char*>(m.mean_row.data()),
            static_cast<std::streamsize>(e * sizeof(double)));
    m.rows.resize(n, e);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < e; ++j) {
            float f = 0.f;
            in.read(reinterpret_cast<char*>(&f), sizeof(f));
            m.rows(i, j) = static_cast<double>(f);
        }
    if (!in) throw IoError("truncated attribution file: " + path);
    return m;
}

}  // namespace dcd
