#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcd/common.hpp"

namespace dcd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class NormMode { none, pre_norm };

/// Input channel of a node in the edge-decomposed graph: attention heads read
/// the stream three times (q/k/v); MLPs and the logits node read it once.
enum class Channel { q, k, v, in };

const char* channel_name(Channel c);
Channel channel_from_name(const std::string& name);

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_head = 16;
    int d_mlp = 128;  // 0 = attention-only
    int vocab_size = 88;
    int max_seq_len = 40;
    NormMode norm_mode = NormMode::none;
    uint64_t seed = 7;

    bool has_mlp() const { return d_mlp > 0; }
    void validate() const;  // throws ConfigError
};

struct HeadParams {
    MatrixXd wq, wk, wv;  // d_model x d_head
    MatrixXd wo;          // d_head x d_model
};

struct LayerParams {
    std::vector<HeadParams> heads;
    MatrixXd mlp_in;    // d_model x d_mlp
    VectorXd mlp_bin;   // d_mlp
    MatrixXd mlp_out;   // d_mlp x d_model
    VectorXd mlp_bout;  // d_model
    VectorXd ln1_scale, ln1_shift;  // pre_norm only, shared by all heads/channels
    VectorXd ln2_scale, ln2_shift;  // pre_norm only, MLP site
};

struct Parameters {
    ModelConfig config;
    MatrixXd token_embed;  // vocab x d_model
    MatrixXd pos_embed;    // max_seq x d_model
    std::vector<LayerParams> layers;
    MatrixXd unembed;  // d_model x vocab
    VectorXd lnf_scale, lnf_shift;  // pre_norm only, logits site
};

/// Seeded Gaussian init (std 0.02 for projections, zero biases, unit norms).
Parameters build_model(const ModelConfig& config);

/// Hand-wired two-layer induction mechanism: previous-token attention in
/// layer 0, match-and-copy in layer 1. Requires an attention-only config with
/// n_layers >= 2 and d_model >= vocab_size + max_seq_len + vocab_size.
Parameters build_induction_model(const ModelConfig& config);

// Per-sequence activations. Matrices are (seq_len x dim), row = position.
struct HeadCache {
    MatrixXd q_in, k_in, v_in;  // S x d_model, stream entering each channel
    MatrixXd q, k, v;           // S x d_head
    MatrixXd pattern;           // S x S, rows sum to 1 over allowed positions
    MatrixXd z;                 // S x d_head, pattern * v
    MatrixXd out;               // S x d_model, contribution to the stream
};

struct MlpCache {
    MatrixXd in;   // S x d_model
    MatrixXd pre;  // S x d_mlp, pre-activation
    MatrixXd out;  // S x d_model
};

struct ActivationCache {
    int seq_len = 0;
    std::vector<int> tokens;
    MatrixXd input_out;  // S x d_model, token + positional embedding
    std::vector<std::vector<HeadCache>> heads;  // [layer][head]
    std::vector<MlpCache> mlps;                 // [layer], empty if no MLP
    MatrixXd logits_in;  // S x d_model
    MatrixXd logits;     // S x vocab
};

/// Gradient of a scalar metric at every node-input site; shapes mirror the
/// cache's site inputs. Site gradients are partials through the reading node
/// only (the residual pass-through is not included), which is what edge
/// attribution consumes.
struct GradientCache {
    std::vector<std::vector<std::array<MatrixXd, 3>>> head_sites;  // [l][h][q,k,v]
    std::vector<MatrixXd> mlp_sites;
    MatrixXd logits_site;
};

struct MetricSpec {
    int position = 0;
    int correct = 0;
    std::vector<int> counterfactuals;
};

struct SiteRef {
    enum class Kind { head_q, head_k, head_v, mlp_in, logits_in };
    Kind kind = Kind::logits_in;
    int layer = 0;
    int head = 0;
};

MatrixXd embed_tokens(const Parameters& params, const std::vector<int>& tokens);

ActivationCache forward(const Parameters& params, const std::vector<int>& tokens);
ActivationCache forward_from_embeddings(const Parameters& params,
                                        const MatrixXd& input_out);

/// Forward with an additive perturbation at selected node-input sites; the
/// finite-difference oracle drives this.
ActivationCache forward_with_site_offsets(
    const Parameters& params, const std::vector<int>& tokens,
    const std::vector<std::pair<SiteRef, MatrixXd>>& offsets);

/// m = logit(correct) - mean logit(counterfactuals), at spec.position.
double metric_value(const MatrixXd& logits, const MetricSpec& spec);

GradientCache backward_metric(const Parameters& params, const ActivationCache& cache,
                              const MetricSpec& spec);

// Node-level compute helpers shared by forward and the patched runner, so
// that identity plans reproduce clean logits bit-for-bit.
HeadCache head_forward(const Parameters& params, int layer, int head,
                       const MatrixXd& q_in, const MatrixXd& k_in, const MatrixXd& v_in);
MlpCache mlp_forward(const Parameters& params, int layer, const MatrixXd& in);
MatrixXd logits_forward(const Parameters& params, const MatrixXd& in);

// --- training ---

struct TrainExample {
    std::vector<int> tokens;
    int target_pos = 0;
    int target = 0;
};

struct OptimizerSpec {
    double lr = 1e-3;
    int steps = 1000;
    int batch_size = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    uint64_t seed = 0;  // shuffle order
};

struct TrainResult {
    Parameters params;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
};

/// Adam on cross-entropy at the labeled position; deterministic given seed.
TrainResult train(const Parameters& params, const std::vector<TrainExample>& dataset,
                  const OptimizerSpec& opt);

double accuracy(const Parameters& params, const std::vector<TrainExample>& dataset);

// Checkpoint file: u32 header length, header JSON (config, seed, format
// version), then little-endian f64 matrices in declaration order. Bit-exact
// round trip.
void save_checkpoint(const Parameters& params, const std::string& path);
Parameters load_checkpoint(const std::string& path);

}  // namespace dcd
