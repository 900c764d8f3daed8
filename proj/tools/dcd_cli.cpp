#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dcd/harness.hpp"

using namespace dcd;

namespace {

void add_model_flags(CLI::App* cmd, ModelConfig& cfg) {
    cmd->add_option("--layers", cfg.n_layers, "transformer layers");
    cmd->add_option("--heads", cfg.n_heads, "attention heads per layer");
    cmd->add_option("--d-model", cfg.d_model, "residual stream width");
    cmd->add_option("--d-head", cfg.d_head, "per-head width");
    cmd->add_option("--d-mlp", cfg.d_mlp, "MLP width (0 = attention-only)");
    cmd->add_option("--vocab", cfg.vocab_size, "vocabulary size");
    cmd->add_option("--max-seq", cfg.max_seq_len, "maximum sequence length");
    cmd->add_option("--model-seed", cfg.seed, "init seed");
    cmd->add_option_function<std::string>(
        "--norm",
        [&cfg](const std::string& v) {
            cfg.norm_mode = v == "pre_norm" ? NormMode::pre_norm : NormMode::none;
        },
        "none | pre_norm");
}

std::vector<PromptPair> load_datasets(const std::vector<std::string>& paths) {
    std::vector<PromptPair> all;
    for (const auto& p : paths) {
        auto part = load_jsonl(p);
        all.insert(all.end(), part.begin(), part.end());
    }
    if (all.empty()) throw ConfigError("no examples loaded");
    return all;
}

int run_experiment_command(const std::string& config_path, const std::string& out_override,
                           uint64_t seed_override, bool has_seed_override,
                           const std::string& expected_kind) {
    ExperimentConfig config = load_experiment_config(config_path);
    if (config.kind != expected_kind)
        throw ConfigError("config declares experiment '" + config.kind +
                          "' but the subcommand expects '" + expected_kind + "'");
    if (!out_override.empty()) config.out_dir = out_override;
    if (has_seed_override) config.seeds.data = seed_override;
    ReportBundle bundle = run_experiment(config);
    report_emit(bundle, config.out_dir);
    std::cout << "wrote " << bundle.tables.size() << " tables to " << config.out_dir
              << " (manifest " << bundle.manifest_hash << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"circuit discovery toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    uint64_t seed_override = 0;
    bool has_seed_override = false;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--out", out_path, "output path or directory");
    auto* seed_opt = app.add_option("--seed-override", seed_override,
                                    "replace the config's data seed");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a task dataset (JSONL)");
    std::string task = "sequence_completion", variant = "2gram";
    int n = 100;
    uint64_t seed = 32;
    gen->add_option("--task", task, "task name");
    gen->add_option("--variant", variant, "variant name");
    gen->add_option("--n", n, "number of prompt pairs");
    gen->add_option("--seed", seed, "generation seed");

    // train
    auto* tr = app.add_subcommand("train", "train a model on JSONL datasets");
    int steps = 3000, batch = 16;
    double lr = 1e-3;
    uint64_t train_seed = 0;
    ModelConfig train_cfg;
    add_model_flags(tr, train_cfg);
    tr->add_option("--steps", steps, "optimizer steps");
    tr->add_option("--lr", lr, "learning rate");
    tr->add_option("--batch", batch, "batch size");
    tr->add_option("--train-seed", train_seed, "shuffle seed");
    std::vector<std::string> data_paths;
    tr->add_option("--data", data_paths, "dataset JSONL files")->required();

    // wire-induction
    auto* wire = app.add_subcommand("wire-induction", "write a hand-wired induction model");
    ModelConfig wire_cfg;
    wire_cfg.n_layers = 2;
    wire_cfg.n_heads = 2;
    wire_cfg.d_model = 64;
    wire_cfg.d_head = 32;
    wire_cfg.d_mlp = 0;
    wire_cfg.vocab_size = 16;
    wire_cfg.max_seq_len = 24;
    add_model_flags(wire, wire_cfg);

    // attribute
    auto* attr = app.add_subcommand("attribute", "per-example edge attribution (DCDA)");
    std::string checkpoint, method_str = "eap_ig";
    int ig_steps = 5;
    std::vector<std::string> attr_data;
    attr->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    attr->add_option("--data", attr_data, "dataset JSONL files")->required();
    attr->add_option("--method", method_str, "e_act | eap | eap_ig");
    attr->add_option("--ig-steps", ig_steps, "integration steps for eap_ig");

    // discover
    auto* disc = app.add_subcommand("discover", "single circuit from dataset-mean scores");
    double size_fraction = 0.05;
    std::string disc_checkpoint, disc_method = "eap_ig";
    std::vector<std::string> disc_data;
    int disc_ig_steps = 5;
    disc->add_option("--checkpoint", disc_checkpoint, "model checkpoint")->required();
    disc->add_option("--data", disc_data, "dataset JSONL files")->required();
    disc->add_option("--method", disc_method, "e_act | eap | eap_ig");
    disc->add_option("--ig-steps", disc_ig_steps, "integration steps for eap_ig");
    disc->add_option("--size", size_fraction, "circuit size fraction");

    // dcd
    auto* dcd_cmd = app.add_subcommand("dcd", "cluster examples and discover per-cluster circuits");
    std::string dcd_checkpoint, dcd_stem = "dcd", dcd_algo = "kmeans",
                dcd_reduction = "pca";
    std::vector<std::string> dcd_data;
    DcdConfig dcd_cfg;
    dcd_cmd->add_option("--checkpoint", dcd_checkpoint, "model checkpoint")->required();
    dcd_cmd->add_option("--data", dcd_data, "dataset JSONL files")->required();
    dcd_cmd->add_option("--stem", dcd_stem, "output file stem");
    dcd_cmd->add_option("--gamma", dcd_cfg.gamma, "binarization threshold");
    dcd_cmd->add_option("--r", dcd_cfg.r, "reduced dimension");
    dcd_cmd->add_option("--k-range", dcd_cfg.k_range, "K sweep values");
    dcd_cmd->add_option("--gap-b", dcd_cfg.gap_b, "gap-statistic reference sets");
    dcd_cmd->add_option("--n-init", dcd_cfg.n_init, "k-means restarts");
    dcd_cmd->add_option("--algorithm", dcd_algo, "kmeans | agglomerative | divisive");
    dcd_cmd->add_option("--reduction", dcd_reduction, "pca | truncated_svd");
    dcd_cmd->add_option("--ig-steps", dcd_cfg.ig_steps, "integration steps");

    // eval
    auto* ev = app.add_subcommand("eval", "faithfulness of a circuit or score file");
    std::string eval_checkpoint, circuit_path, scores_path;
    std::vector<std::string> eval_data;
    ev->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
    ev->add_option("--data", eval_data, "evaluation JSONL files")->required();
    ev->add_option("--circuit", circuit_path, "circuit JSON to evaluate");
    ev->add_option("--scores", scores_path, "DCDA file; evaluates the mean row on the grid");

    // experiment families
    auto* cross = app.add_subcommand("cross-variant", "discover per variant, evaluate across");
    auto* mix = app.add_subcommand("mixture", "two-task mixture-ratio sweep");
    auto* compare = app.add_subcommand("compare", "DCD vs baselines on a mixed dataset");

    // report
    auto* rep = app.add_subcommand("report", "summarize an emitted report directory");
    std::string report_dir;
    rep->add_option("--dir", report_dir, "report directory")->required();

    try {
        app.parse(argc, argv);
        has_seed_override = seed_opt->count() > 0;

        if (gen->parsed()) {
            if (out_path.empty()) throw ConfigError("gen-data requires --out");
            auto pairs = generate(task, variant, n, seed);
            save_jsonl(pairs, out_path);
            std::cout << "wrote " << pairs.size() << " pairs to " << out_path << "\n";
        } else if (tr->parsed()) {
            if (out_path.empty()) throw ConfigError("train requires --out");
            auto pairs = load_datasets(data_paths);
            Parameters params = build_model(train_cfg);
            OptimizerSpec opt;
            opt.steps = steps;
            opt.lr = lr;
            opt.batch_size = batch;
            opt.seed = train_seed;
            TrainResult result = train(params, to_train_examples(pairs), opt);
            save_checkpoint(result.params, out_path);
            std::cout << "final loss " << result.final_loss << ", accuracy "
                      << result.final_accuracy << "; checkpoint " << out_path << "\n";
        } else if (wire->parsed()) {
            if (out_path.empty()) throw ConfigError("wire-induction requires --out");
            save_checkpoint(build_induction_model(wire_cfg), out_path);
            std::cout << "wired induction checkpoint " << out_path << "\n";
        } else if (attr->parsed()) {
            if (out_path.empty()) throw ConfigError("attribute requires --out");
            Parameters params = load_checkpoint(checkpoint);
            ComputationGraph graph = enumerate_graph(params.config);
            auto pairs = load_datasets(attr_data);
            AttributionMatrix m = attribute_dataset(params, graph, pairs,
                                                    method_from_name(method_str), ig_steps);
            save_attribution(m, out_path);
            save_manifest(graph, out_path + ".manifest.json");
            std::cout << "wrote " << m.n_examples() << "x" << m.n_edges()
                      << " attribution matrix to " << out_path << "\n";
        } else if (disc->parsed()) {
            if (out_path.empty()) throw ConfigError("discover requires --out");
            Parameters params = load_checkpoint(disc_checkpoint);
            ComputationGraph graph = enumerate_graph(params.config);
            auto pairs = load_datasets(disc_data);
            AttributionMatrix m = attribute_dataset(
                params, graph, pairs, method_from_name(disc_method), disc_ig_steps);
            Circuit c = select_circuit(m.mean_row, graph, size_fraction, disc_method,
                                       disc_data.front());
            save_circuit(c, graph, out_path);
            std::cout << "wrote circuit with " << c.n_edges() << " edges to " << out_path
                      << "\n";
        } else if (dcd_cmd->parsed()) {
            if (out_path.empty()) throw ConfigError("dcd requires --out");
            dcd_cfg.algo = cluster_algo_from_name(dcd_algo);
            dcd_cfg.reduction = dcd_reduction == "truncated_svd" ? ReduceMethod::truncated_svd
                                                                 : ReduceMethod::pca;
            Parameters params = load_checkpoint(dcd_checkpoint);
            ComputationGraph graph = enumerate_graph(params.config);
            auto pairs = load_datasets(dcd_data);
            ClusterResult result = run_dcd(params, graph, pairs, dcd_cfg);
            save_cluster_result(result, graph, out_path, dcd_stem);
            std::cout << "K* = " << result.k_star << "; results under " << out_path << "\n";
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        } else if (ev->parsed()) {
            Parameters params = load_checkpoint(eval_checkpoint);
            ComputationGraph graph = enumerate_graph(params.config);
            auto pairs = load_datasets(eval_data);
            EvalContext ctx = EvalContext::build(params, graph, pairs);
            if (!circuit_path.empty()) {
                Circuit c = load_circuit(graph, circuit_path);
                FaithfulnessResult r = faithfulness(ctx, c);
                if (!r.f) throw NumericError("degenerate metric denominator");
                std::cout << "f = " << format_double(*r.f) << " (m_C " << r.m_circuit
                          << ", m_G " << r.m_full << ", m_empty " << r.m_empty << ", "
                          << r.n_degenerate << " degenerate examples)\n";
            } else if (!scores_path.empty()) {
                if (out_path.empty()) throw ConfigError("eval --scores requires --out");
                AttributionMatrix m = load_attribution(scores_path);
                FaithfulnessCurve curve = faithfulness_curve(ctx, m.mean_row);
                std::ofstream csv(out_path + ".curve.csv");
                csv << "size,f\n";
                for (const auto& [k, f] : curve.points)
                    csv << format_double(k) << "," << format_double(f) << "\n";
                nlohmann::json summary = {{"cpr", cpr(curve)},
                                          {"cmd_prime", cmd_prime(curve)},
                                          {"m_G", curve.m_full},
                                          {"m_empty", curve.m_empty}};
                std::ofstream js(out_path + ".summary.json");
                js << summary.dump(2) << "\n";
                std::cout << "cpr " << cpr(curve) << ", cmd' " << cmd_prime(curve) << "\n";
            } else {
                throw ConfigError("eval requires --circuit or --scores");
            }
        } else if (cross->parsed()) {
            return run_experiment_command(config_path, out_path, seed_override,
                                          has_seed_override, "cross_variant");
        } else if (mix->parsed()) {
            return run_experiment_command(config_path, out_path, seed_override,
                                          has_seed_override, "mixture_sweep");
        } else if (compare->parsed()) {
            return run_experiment_command(config_path, out_path, seed_override,
                                          has_seed_override, "dcd_compare");
        } else if (rep->parsed()) {
            namespace fs = std::filesystem;
            fs::path manifest = fs::path(report_dir) / "manifest.json";
            if (!fs::exists(manifest)) throw ConfigError("no manifest.json in " + report_dir);
            std::ifstream in(manifest);
            nlohmann::json j = nlohmann::json::parse(in);
            std::cout << "manifest " << j.at("config_hash").get<std::string>() << "\n";
            for (const auto& entry : fs::directory_iterator(report_dir))
                if (entry.path().extension() == ".csv")
                    std::cout << "  " << entry.path().filename().string() << "\n";
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const AccuracyFloorError& e) {
        std::cerr << "accuracy floor: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric degeneracy: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
