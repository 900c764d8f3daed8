#include "dcd/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace dcd {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown config key '" + key + "' in " + where);
}

ExperimentConfig::Component parse_component(const nlohmann::json& j,
                                            const std::string& where) {
    require_keys(j, {"task", "variant"}, where);
    ExperimentConfig::Component c;
    c.task = j.at("task").get<std::string>();
    c.variant = j.at("variant").get<std::string>();
    return c;
}

DcdConfig parse_dcd(const nlohmann::json& j) {
    require_keys(j,
                 {"method", "ig_steps", "binarize", "gamma", "reduction", "r", "k_range",
                  "gap_b", "n_init", "algorithm", "min_cluster_size"},
                 "dcd");
    DcdConfig d;
    if (j.contains("method")) d.method = method_from_name(j["method"].get<std::string>());
    if (j.contains("ig_steps")) d.ig_steps = j["ig_steps"].get<int>();
    if (j.contains("binarize")) d.binarize = j["binarize"].get<bool>();
    if (j.contains("gamma")) d.gamma = j["gamma"].get<double>();
    if (j.contains("reduction"))
        d.reduction = j["reduction"].get<std::string>() == "truncated_svd"
                          ? ReduceMethod::truncated_svd
                          : ReduceMethod::pca;
    if (j.contains("r")) d.r = j["r"].get<int>();
    if (j.contains("k_range")) d.k_range = j["k_range"].get<std::vector<int>>();
    if (j.contains("gap_b")) d.gap_b = j["gap_b"].get<int>();
    if (j.contains("n_init")) d.n_init = j["n_init"].get<int>();
    if (j.contains("algorithm"))
        d.algo = cluster_algo_from_name(j["algorithm"].get<std::string>());
    if (j.contains("min_cluster_size")) d.min_cluster_size = j["min_cluster_size"].get<int>();
    return d;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["experiment"] = kind;
    j["checkpoint"] = checkpoint;
    j["n_examples"] = n_examples;
    j["method"] = method_name(method);
    j["ig_steps"] = ig_steps;
    j["size_grid"] = size_grid;
    j["matrix_size"] = matrix_size;
    j["accuracy_floor"] = accuracy_floor;
    if (!variants.empty()) {
        nlohmann::json vs = nlohmann::json::array();
        for (const auto& v : variants) vs.push_back({{"task", v.task}, {"variant", v.variant}});
        j["variants"] = vs;
    }
    if (kind == "mixture_sweep") {
        j["mixture"] = {{"task_a", {{"task", task_a.task}, {"variant", task_a.variant}}},
                        {"task_b", {{"task", task_b.task}, {"variant", task_b.variant}}},
                        {"ratio_grid", ratio_grid},
                        {"eval_on", eval_on}};
    }
    if (kind == "dcd_compare") {
        j["dcd"] = {{"method", method_name(dcd.method)},
                    {"ig_steps", dcd.ig_steps},
                    {"binarize", dcd.binarize},
                    {"gamma", dcd.gamma},
                    {"reduction",
                     dcd.reduction == ReduceMethod::pca ? "pca" : "truncated_svd"},
                    {"r", dcd.r},
                    {"k_range", dcd.k_range},
                    {"gap_b", dcd.gap_b},
                    {"n_init", dcd.n_init},
                    {"algorithm", cluster_algo_name(dcd.algo)},
                    {"min_cluster_size", dcd.min_cluster_size}};
    }
    j["seeds"] = {{"data", seeds.data},
                  {"clustering", seeds.clustering},
                  {"reduction", seeds.reduction},
                  {"baseline", seeds.baseline}};
    return j;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j, bool check_files) {
    require_keys(j,
                 {"experiment", "checkpoint", "out_dir", "variants", "mixture",
                  "n_examples", "method", "ig_steps", "size_grid", "matrix_size",
                  "accuracy_floor", "dcd", "seeds"},
                 "config");
    ExperimentConfig c;
    c.kind = j.at("experiment").get<std::string>();
    if (c.kind != "cross_variant" && c.kind != "mixture_sweep" && c.kind != "dcd_compare")
        throw ConfigError("unknown experiment kind: " + c.kind);
    c.checkpoint = j.at("checkpoint").get<std::string>();
    if (check_files && !std::filesystem::exists(c.checkpoint))
        throw ConfigError("checkpoint does not exist: " + c.checkpoint);
    if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("n_examples")) c.n_examples = j["n_examples"].get<int>();
    if (j.contains("method")) c.method = method_from_name(j["method"].get<std::string>());
    if (j.contains("ig_steps")) c.ig_steps = j["ig_steps"].get<int>();
    if (j.contains("size_grid")) c.size_grid = j["size_grid"].get<std::vector<double>>();
    if (j.contains("matrix_size")) c.matrix_size = j["matrix_size"].get<double>();
    if (j.contains("accuracy_floor")) c.accuracy_floor = j["accuracy_floor"].get<double>();
    if (j.contains("variants"))
        for (const auto& v : j["variants"]) c.variants.push_back(parse_component(v, "variants"));
    if (j.contains("mixture")) {
        const auto& m = j["mixture"];
        require_keys(m, {"task_a", "task_b", "ratio_grid", "eval_on"}, "mixture");
        c.task_a = parse_component(m.at("task_a"), "mixture.task_a");
        c.task_b = parse_component(m.at("task_b"), "mixture.task_b");
        if (m.contains("ratio_grid")) c.ratio_grid = m["ratio_grid"].get<std::vector<double>>();
        if (m.contains("eval_on")) {
            c.eval_on = m["eval_on"].get<std::string>();
            if (c.eval_on != "pure" && c.eval_on != "mixed")
                throw ConfigError("mixture.eval_on must be 'pure' or 'mixed'");
        }
    }
    if (j.contains("dcd")) c.dcd = parse_dcd(j["dcd"]);
    if (j.contains("seeds")) {
        require_keys(j["seeds"], {"data", "clustering", "reduction", "baseline"}, "seeds");
        const auto& s = j["seeds"];
        if (s.contains("data")) c.seeds.data = s["data"].get<uint64_t>();
        if (s.contains("clustering")) c.seeds.clustering = s["clustering"].get<uint64_t>();
        if (s.contains("reduction")) c.seeds.reduction = s["reduction"].get<uint64_t>();
        if (s.contains("baseline")) c.seeds.baseline = s["baseline"].get<uint64_t>();
    }
    if (c.ratio_grid.empty())
        c.ratio_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    c.dcd.cluster_seed = c.seeds.clustering;
    c.dcd.reduction_seed = c.seeds.reduction;
    c.dcd.circuit_sizes = c.size_grid;

    if (c.kind == "cross_variant" && c.variants.size() < 2)
        throw ConfigError("cross_variant needs at least two variants");
    if (c.kind == "dcd_compare" && c.variants.size() < 2)
        throw ConfigError("dcd_compare needs at least two mixture components");
    if (c.kind == "mixture_sweep" && (c.task_a.task.empty() || c.task_b.task.empty()))
        throw ConfigError("mixture_sweep needs mixture.task_a and mixture.task_b");
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_experiment_config(j);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::map<std::string, double> check_accuracy_floor(
    const Parameters& params, const std::vector<PromptPair>& examples, double floor) {
    std::map<std::string, std::pair<int, int>> tallies;  // label -> (hits, total)
    for (const auto& pair : examples) {
        ActivationCache c = forward(params, pair.clean);
        int best = 0;
        for (int t = 1; t < params.config.vocab_size; ++t)
            if (c.logits(pair.answer_pos, t) > c.logits(pair.answer_pos, best)) best = t;
        auto& tally = tallies[pair.task + "/" + pair.variant];
        tally.second++;
        if (best == pair.correct) tally.first++;
    }
    std::map<std::string, double> acc;
    for (const auto& [label, tally] : tallies)
        acc[label] = static_cast<double>(tally.first) / tally.second;
    for (const auto& [label, a] : acc)
        if (a < floor)
            throw AccuracyFloorError("accuracy " + format_double(a) + " on " + label +
                                     " is below the floor " + format_double(floor));
    return acc;
}

namespace {

nlohmann::json make_manifest(const ExperimentConfig& config) {
    nlohmann::json m;
    m["config"] = config.to_json();
    m["config_hash"] = hex64(fnv1a64(m["config"].dump()));
    m["seeds"] = m["config"]["seeds"];
    m["versions"] = {{"dcdkit", kVersion},
                     {"checkpoint_format", 1},
                     {"attribution_format", 1},
                     {"binary_format", 1}};
    return m;
}

void finalize(ReportBundle& bundle, const ExperimentConfig& config) {
    bundle.manifest = make_manifest(config);
    bundle.manifest_hash = bundle.manifest["config_hash"].get<std::string>();
}

Csv accuracy_table(const std::map<std::string, double>& acc) {
    Csv csv;
    csv.header = {"dataset", "accuracy"};
    for (const auto& [label, a] : acc) csv.rows.push_back({label, format_double(a)});
    return csv;
}

std::string component_id(const ExperimentConfig::Component& c) {
    return c.task + "/" + c.variant;
}

}  // namespace

ReportBundle run_cross_variant(const ExperimentConfig& config, const Parameters& params) {
    const Vocabulary vocab = Vocabulary::standard();
    const ComputationGraph graph = enumerate_graph(params.config);
    const size_t m = config.variants.size();

    std::vector<SplitDataset> splits;
    std::vector<PromptPair> all_examples;
    for (size_t i = 0; i < m; ++i) {
        DatasetSpec spec;
        spec.components = {{config.variants[i].task, config.variants[i].variant, 1.0}};
        spec.n_examples = config.n_examples;
        spec.seed = mix_seed(config.seeds.data, i);
        splits.push_back(build_mixture(spec, vocab));
        for (const auto& p : splits.back().train) all_examples.push_back(p);
        for (const auto& p : splits.back().test) all_examples.push_back(p);
    }
    auto acc = check_accuracy_floor(params, all_examples, config.accuracy_floor);

    std::vector<VectorXd> mean_rows;
    std::vector<EvalContext> eval;
    for (size_t i = 0; i < m; ++i) {
        mean_rows.push_back(attribute_dataset(params, graph, splits[i].train,
                                              config.method, config.ig_steps)
                                .mean_row);
        eval.push_back(EvalContext::build(params, graph, splits[i].test));
    }

    ReportBundle bundle;
    Csv matrix;
    matrix.header = {"discovery_variant"};
    for (size_t j = 0; j < m; ++j) matrix.header.push_back(component_id(config.variants[j]));
    MatrixXd f(m, m);
    std::vector<Circuit> circuits;
    for (size_t i = 0; i < m; ++i)
        circuits.push_back(select_circuit(mean_rows[i], graph, config.matrix_size,
                                          method_name(config.method),
                                          component_id(config.variants[i])));
    for (size_t i = 0; i < m; ++i) {
        std::vector<std::string> row = {component_id(config.variants[i])};
        for (size_t j = 0; j < m; ++j) {
            FaithfulnessResult r = faithfulness(eval[j], circuits[i]);
            if (!r.f) throw NumericError("degenerate evaluation set for " +
                                         component_id(config.variants[j]));
            f(i, j) = *r.f;
            row.push_back(format_double(f(i, j)));
        }
        matrix.rows.push_back(row);
    }
    bundle.tables["cross_faithfulness"] = matrix;

    Csv jac;
    jac.header = matrix.header;
    jac.header[0] = "circuit";
    for (size_t i = 0; i < m; ++i) {
        std::vector<std::string> row = {component_id(config.variants[i])};
        for (size_t j = 0; j < m; ++j)
            row.push_back(format_double(jaccard(circuits[i], circuits[j])));
        jac.rows.push_back(row);
    }
    bundle.tables["jaccard"] = jac;

    Csv drops;
    drops.header = {"discovery_variant", "in_distribution", "worst_cross", "drop"};
    for (size_t i = 0; i < m; ++i) {
        double worst = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < m; ++j)
            if (j != i) worst = std::min(worst, f(i, j));
        drops.rows.push_back({component_id(config.variants[i]), format_double(f(i, i)),
                              format_double(worst), format_double(f(i, i) - worst)});
    }
    bundle.tables["largest_drop"] = drops;

    Csv curves;
    curves.header = {"discovery_variant", "eval_variant", "size", "faithfulness"};
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
            FaithfulnessCurve c = faithfulness_curve(eval[j], mean_rows[i], config.size_grid,
                                                     method_name(config.method),
                                                     component_id(config.variants[i]));
            for (const auto& [k, fv] : c.points)
                curves.rows.push_back({component_id(config.variants[i]),
                                       component_id(config.variants[j]), format_double(k),
                                       format_double(fv)});
        }
    bundle.tables["faithfulness_curves"] = curves;
    bundle.tables["accuracy"] = accuracy_table(acc);
    finalize(bundle, config);
    return bundle;
}

ReportBundle run_mixture_sweep(const ExperimentConfig& config, const Parameters& params) {
    const Vocabulary vocab = Vocabulary::standard();
    const ComputationGraph graph = enumerate_graph(params.config);
    const size_t n_ratios = config.ratio_grid.size();

    auto build_ratio = [&](double r, size_t index) {
        DatasetSpec spec;
        if (r <= 0.0) {
            spec.components = {{config.task_a.task, config.task_a.variant, 1.0}};
        } else if (r >= 1.0) {
            spec.components = {{config.task_b.task, config.task_b.variant, 1.0}};
        } else {
            spec.components = {{config.task_a.task, config.task_a.variant, 1.0 - r},
                               {config.task_b.task, config.task_b.variant, r}};
        }
        spec.n_examples = config.n_examples;
        spec.seed = mix_seed(config.seeds.data, 0x31 + index);
        return build_mixture(spec, vocab);
    };

    std::vector<SplitDataset> mixtures;
    for (size_t i = 0; i < n_ratios; ++i) mixtures.push_back(build_ratio(config.ratio_grid[i], i));

    std::vector<PromptPair> floor_examples;
    for (const auto& p : mixtures.front().train) floor_examples.push_back(p);
    for (const auto& p : mixtures.back().train) floor_examples.push_back(p);
    auto acc = check_accuracy_floor(params, floor_examples, config.accuracy_floor);

    std::vector<VectorXd> mean_rows;
    for (size_t i = 0; i < n_ratios; ++i)
        mean_rows.push_back(attribute_dataset(params, graph, mixtures[i].train,
                                              config.method, config.ig_steps)
                                .mean_row);

    ReportBundle bundle;
    Csv curves;
    curves.header = {"ratio", "eval_dataset", "size", "faithfulness"};
    if (config.eval_on == "pure") {
        EvalContext eval_a = EvalContext::build(params, graph, mixtures.front().test);
        EvalContext eval_b = EvalContext::build(params, graph, mixtures.back().test);
        for (size_t i = 0; i < n_ratios; ++i) {
            for (const auto& [label, ctx] :
                 {std::pair<std::string, const EvalContext*>{component_id(config.task_a), &eval_a},
                  {component_id(config.task_b), &eval_b}}) {
                FaithfulnessCurve c =
                    faithfulness_curve(*ctx, mean_rows[i], config.size_grid);
                for (const auto& [k, fv] : c.points)
                    curves.rows.push_back({format_double(config.ratio_grid[i]), label,
                                           format_double(k), format_double(fv)});
            }
        }
    } else {
        for (size_t i = 0; i < n_ratios; ++i) {
            EvalContext ctx = EvalContext::build(params, graph, mixtures[i].test);
            FaithfulnessCurve c = faithfulness_curve(ctx, mean_rows[i], config.size_grid);
            for (const auto& [k, fv] : c.points)
                curves.rows.push_back({format_double(config.ratio_grid[i]), "mixed",
                                       format_double(k), format_double(fv)});
        }
    }
    bundle.tables["mixture_curves"] = curves;

    std::vector<Circuit> top;
    for (size_t i = 0; i < n_ratios; ++i)
        top.push_back(select_circuit(mean_rows[i], graph, config.matrix_size,
                                     method_name(config.method),
                                     "ratio" + format_double(config.ratio_grid[i])));
    Csv jac;
    jac.header = {"ratio"};
    for (double r : config.ratio_grid) jac.header.push_back(format_double(r));
    for (size_t i = 0; i < n_ratios; ++i) {
        std::vector<std::string> row = {format_double(config.ratio_grid[i])};
        for (size_t j = 0; j < n_ratios; ++j)
            row.push_back(format_double(jaccard(top[i], top[j])));
        jac.rows.push_back(row);
    }
    bundle.tables["jaccard"] = jac;
    bundle.tables["accuracy"] = accuracy_table(acc);
    finalize(bundle, config);
    bundle.manifest["eval_on"] = config.eval_on;
    return bundle;
}

ReportBundle run_dcd_compare(const ExperimentConfig& config, const Parameters& params) {
    const Vocabulary vocab = Vocabulary::standard();
    const ComputationGraph graph = enumerate_graph(params.config);

    DatasetSpec spec;
    for (const auto& v : config.variants) spec.components.push_back({v.task, v.variant, 1.0});
    spec.n_examples = config.n_examples;
    spec.seed = config.seeds.data;
    SplitDataset mixed = build_mixture(spec, vocab);

    std::vector<PromptPair> floor_examples = mixed.train;
    floor_examples.insert(floor_examples.end(), mixed.test.begin(), mixed.test.end());
    auto acc = check_accuracy_floor(params, floor_examples, config.accuracy_floor);

    // four DCD variants; kmeans-PCA is the headline configuration
    struct DcdVariant {
        std::string name;
        ClusterAlgo algo;
        ReduceMethod reduction;
    };
    const std::vector<DcdVariant> dcd_variants = {
        {"dcd_kmeans_pca", ClusterAlgo::kmeans, ReduceMethod::pca},
        {"dcd_kmeans_svd", ClusterAlgo::kmeans, ReduceMethod::truncated_svd},
        {"dcd_agglom_svd", ClusterAlgo::agglomerative, ReduceMethod::truncated_svd},
        {"dcd_divisive_svd", ClusterAlgo::divisive, ReduceMethod::truncated_svd},
    };
    std::map<std::string, ClusterResult> dcd_results;
    for (const auto& v : dcd_variants) {
        DcdConfig dc = config.dcd;
        dc.algo = v.algo;
        dc.reduction = v.reduction;
        dc.circuit_sizes = config.size_grid;
        dcd_results.emplace(v.name, run_dcd(params, graph, mixed.train, dc));
    }
    const ClusterResult& headline = dcd_results.at("dcd_kmeans_pca");

    // score rows per method; each row becomes one circuit per size
    std::map<std::string, std::vector<VectorXd>> method_rows;
    for (const auto& v : dcd_variants)
        method_rows[v.name] = dcd_results.at(v.name).cluster_mean_rows;
    for (AttributionMethod m :
         {AttributionMethod::eap_ig, AttributionMethod::eap, AttributionMethod::e_act})
        method_rows[method_name(m)] = {
            attribute_dataset(params, graph, mixed.train, m, config.ig_steps).mean_row};
    method_rows["random_edges"] = {baseline_random_edges(graph, config.seeds.baseline)};
    {
        std::vector<int> medoids = k_representative_medoids(
            headline.binary, headline.assignment, headline.k_star);
        std::vector<VectorXd> rows;
        for (int idx : medoids)
            rows.push_back(headline.attributions.rows.row(idx).transpose());
        method_rows["k_representative"] = rows;
    }
    method_rows["k_random"] = baseline_k_random_rows(
        headline.attributions, headline.k_star, config.seeds.baseline);

    EvalContext eval = EvalContext::build(params, graph, mixed.test);

    ReportBundle bundle;
    Csv curves;
    curves.header = {"method", "size", "best_of_k_faithfulness", "n_excluded"};
    Csv summary;
    summary.header = {"method", "cpr", "cmd_prime"};
    for (const auto& [name, rows] : method_rows) {
        std::vector<std::pair<double, double>> pts;
        for (double k : config.size_grid) {
            std::vector<Circuit> cs;
            for (const auto& row : rows)
                cs.push_back(select_circuit(row, graph, k, name, "mixed"));
            BestOfKResult r = best_of_k_faithfulness(eval, cs);
            pts.emplace_back(k, r.mean_f_star);
            curves.rows.push_back({name, format_double(k), format_double(r.mean_f_star),
                                   std::to_string(r.excluded.size())});
        }
        summary.rows.push_back(
            {name, format_double(cpr(pts)), format_double(cmd_prime(pts))});
    }
    bundle.tables["best_of_k_curves"] = curves;
    bundle.tables["cpr_cmd"] = summary;

    // cluster purity over the headline DCD's training clusters
    Csv purity;
    purity.header = {"cluster", "size", "dominant", "purity"};
    std::vector<std::map<std::string, int>> comp(headline.k_star);
    for (size_t i = 0; i < mixed.train.size(); ++i)
        comp[headline.assignment[i]][mixed.train[i].task + "/" + mixed.train[i].variant]++;
    for (int c = 0; c < headline.k_star; ++c) {
        int total = headline.cluster_sizes[c];
        std::string dominant;
        int hits = -1;
        for (const auto& [label, count] : comp[c])
            if (count > hits) {
                hits = count;
                dominant = label;
            }
        purity.rows.push_back({std::to_string(c), std::to_string(total), dominant,
                               format_double(static_cast<double>(hits) / total)});
    }
    bundle.tables["cluster_purity"] = purity;

    // per-example x circuit faithfulness at the analysis size (headline DCD)
    size_t size_index = 0;
    for (size_t i = 0; i < config.size_grid.size(); ++i)
        if (std::abs(config.size_grid[i] - config.matrix_size) < 1e-12) size_index = i;
    std::vector<Circuit> headline_circuits = headline.circuits_at(size_index);
    BestOfKResult per_example = best_of_k_faithfulness(eval, headline_circuits);
    Csv heat;
    heat.header = {"example", "task", "variant"};
    for (int c = 0; c < headline.k_star; ++c)
        heat.header.push_back("circuit" + std::to_string(c));
    heat.header.push_back("f_star");
    for (int i = 0; i < eval.size(); ++i) {
        std::vector<std::string> row = {std::to_string(i), mixed.test[i].task,
                                        mixed.test[i].variant};
        for (int c = 0; c < headline.k_star; ++c)
            row.push_back(format_double(per_example.per_example_f(i, c)));
        row.push_back(format_double(per_example.f_star[i]));
        heat.rows.push_back(row);
    }
    bundle.tables["per_example_faithfulness"] = heat;

    Csv clusters;
    clusters.header = {"dcd_variant", "k_star", "one_se_rule"};
    for (const auto& [name, result] : dcd_results)
        clusters.rows.push_back({name, std::to_string(result.k_star),
                                 result.gap.one_se_satisfied ? "yes" : "fallback"});
    bundle.tables["cluster_summary"] = clusters;
    bundle.tables["accuracy"] = accuracy_table(acc);
    finalize(bundle, config);
    return bundle;
}

ReportBundle run_experiment(const ExperimentConfig& config) {
    Parameters params = load_checkpoint(config.checkpoint);
    if (config.kind == "cross_variant") return run_cross_variant(config, params);
    if (config.kind == "mixture_sweep") return run_mixture_sweep(config, params);
    if (config.kind == "dcd_compare") return run_dcd_compare(config, params);
    throw ConfigError("unknown experiment kind: " + config.kind);
}

void report_emit(const ReportBundle& bundle, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
    for (const auto& [name, csv] : bundle.tables) {
        fs::path path = fs::path(out_dir) / (name + ".csv");
        std::ofstream out(path);
        if (!out) throw IoError("cannot open report file for writing: " + path.string());
        out << "# manifest " << bundle.manifest_hash << "\n";
        for (size_t i = 0; i < csv.header.size(); ++i)
            out << (i ? "," : "") << csv.header[i];
        out << "\n";
        for (const auto& row : csv.rows) {
            for (size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
            out << "\n";
        }
        if (!out) throw IoError("failed writing report file: " + path.string());
    }
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + out_dir);
    out << bundle.manifest.dump(2) << "\n";
}

}  // namespace dcd
