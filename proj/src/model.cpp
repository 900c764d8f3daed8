#include "dcd/model.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <utility>

namespace dcd {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kSqrt2 = 1.4142135623730950488;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); }

double gelu_grad(double x) {
    double phi = 0.5 * (1.0 + std::erf(x / kSqrt2));
    return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

bool use_norm(const Parameters& p) { return p.config.norm_mode == NormMode::pre_norm; }

// Row-wise layer norm; scale/shift may be null in no-norm mode (identity).
MatrixXd site_norm(const MatrixXd& x, const VectorXd* scale, const VectorXd* shift) {
    if (!scale) return x;
    MatrixXd out(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().sum() / d;
        double inv = 1.0 / std::sqrt(var + kLnEps);
        out.row(i) = (((x.row(i).array() - mu) * inv) * scale->transpose().array() +
                      shift->transpose().array())
                         .matrix();
    }
    return out;
}

// Backward through row-wise layer norm. Optionally accumulates scale/shift
// gradients.
MatrixXd site_norm_backward(const MatrixXd& x, const VectorXd* scale,
                            const MatrixXd& gy, VectorXd* gscale, VectorXd* gshift) {
    if (!scale) return gy;
    MatrixXd gx(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double mu = x.row(i).mean();
        double var = (x.row(i).array() - mu).square().sum() / d;
        double inv = 1.0 / std::sqrt(var + kLnEps);
        Eigen::ArrayXd xhat = (x.row(i).array() - mu) * inv;
        Eigen::ArrayXd gxhat = gy.row(i).array() * scale->transpose().array();
        double m1 = gxhat.mean();
        double m2 = (gxhat * xhat).mean();
        gx.row(i) = (inv * (gxhat - m1 - xhat * m2)).matrix();
        if (gscale) gscale->array() += (gy.row(i).transpose().array() * xhat);
        if (gshift) gshift->array() += gy.row(i).transpose().array();
    }
    return gx;
}

void check_tokens(const ModelConfig& cfg, const std::vector<int>& tokens) {
    if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
        throw std::invalid_argument("sequence longer than max_seq_len");
    if (tokens.empty()) throw std::invalid_argument("empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size)
            throw std::invalid_argument("token id out of vocabulary");
}

MatrixXd gaussian_matrix(Rng& rng, int rows, int cols, double std) {
    MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
    return m;
}

}  // namespace

const char* channel_name(Channel c) {
    switch (c) {
        case Channel::q: return "q";
        case Channel::k: return "k";
        case Channel::v: return "v";
        case Channel::in: return "in";
    }
    return "?";
}

Channel channel_from_name(const std::string& name) {
    if (name == "q") return Channel::q;
    if (name == "k") return Channel::k;
    if (name == "v") return Channel::v;
    if (name == "in") return Channel::in;
    throw ConfigError("unknown channel: " + name);
}

void ModelConfig::validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (d_head < 1) throw ConfigError("d_head must be >= 1");
    if (d_mlp < 0) throw ConfigError("d_mlp must be >= 0");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
}

Parameters build_model(const ModelConfig& config) {
    config.validate();
    Rng rng(mix_seed(config.seed, 0xd0d));
    Parameters p;
    p.config = config;
    const double std = 0.02;
    p.token_embed = gaussian_matrix(rng, config.vocab_size, config.d_model, std);
    p.pos_embed = gaussian_matrix(rng, config.max_seq_len, config.d_model, std);
    p.layers.resize(config.n_layers);
    for (auto& layer : p.layers) {
        layer.heads.resize(config.n_heads);
        for (auto& h : layer.heads) {
            h.wq = gaussian_matrix(rng, config.d_model, config.d_head, std);
            h.wk = gaussian_matrix(rng, config.d_model, config.d_head, std);
            h.wv = gaussian_matrix(rng, config.d_model, config.d_head, std);
            h.wo = gaussian_matrix(rng, config.d_head, config.d_model, std);
        }
        if (config.has_mlp()) {
            layer.mlp_in = gaussian_matrix(rng, config.d_model, config.d_mlp, std);
            layer.mlp_bin = VectorXd::Zero(config.d_mlp);
            layer.mlp_out = gaussian_matrix(rng, config.d_mlp, config.d_model, std);
            layer.mlp_bout = VectorXd::Zero(config.d_model);
        }
        if (config.norm_mode == NormMode::pre_norm) {
            layer.ln1_scale = VectorXd::Ones(config.d_model);
            layer.ln1_shift = VectorXd::Zero(config.d_model);
            if (config.has_mlp()) {
                layer.ln2_scale = VectorXd::Ones(config.d_model);
                layer.ln2_shift = VectorXd::Zero(config.d_model);
            }
        }
    }
    p.unembed = gaussian_matrix(rng, config.d_model, config.vocab_size, std);
    if (config.norm_mode == NormMode::pre_norm) {
        p.lnf_scale = VectorXd::Ones(config.d_model);
        p.lnf_shift = VectorXd::Zero(config.d_model);
    }
    return p;
}

Parameters build_induction_model(const ModelConfig& config) {
    config.validate();
    const int v = config.vocab_size;
    const int pmax = config.max_seq_len;
    if (config.has_mlp())
        throw ConfigError("induction wiring requires an attention-only config");
    if (config.n_layers < 2)
        throw ConfigError("induction wiring requires n_layers >= 2");
    if (config.norm_mode != NormMode::none)
        throw ConfigError("induction wiring requires norm_mode = none");
    if (config.d_model < 2 * v + pmax)
        throw ConfigError("induction wiring requires d_model >= 2*vocab + max_seq_len");
    if (config.d_head < v || config.d_head < pmax)
        throw ConfigError("induction wiring requires d_head >= max(vocab, max_seq_len)");

    Parameters p;
    p.config = config;
    const int d = config.d_model;
    const int dh = config.d_head;
    // Subspace layout: [0, v) token code, [v, v+pmax) position code,
    // [v+pmax, v+pmax+v) previous-token code written by layer 0.
    const int pos0 = v;
    const int prev0 = v + pmax;
    const double beta = 30.0 * std::sqrt(static_cast<double>(dh));
    const double sb = std::sqrt(beta);
    const double gain = 5.0;

    p.token_embed = MatrixXd::Zero(v, d);
    for (int t = 0; t < v; ++t) p.token_embed(t, t) = 1.0;
    p.pos_embed = MatrixXd::Zero(pmax, d);
    for (int q = 0; q < pmax; ++q) p.pos_embed(q, pos0 + q) = 1.0;

    p.layers.resize(config.n_layers);
    for (auto& layer : p.layers) {
        layer.heads.resize(config.n_heads);
        for (auto& h : layer.heads) {
            h.wq = MatrixXd::Zero(d, dh);
            h.wk = MatrixXd::Zero(d, dh);
            h.wv = MatrixXd::Zero(d, dh);
            h.wo = MatrixXd::Zero(dh, d);
        }
    }
    // Layer 0 head 0: attend to the previous position, copy its token code
    // into the prev-token subspace.
    {
        HeadParams& h = p.layers[0].heads[0];
        for (int q = 0; q < pmax; ++q) h.wq(pos0 + q, q) = sb;
        for (int q = 0; q + 1 < pmax; ++q) h.wk(pos0 + q, q + 1) = sb;
        for (int t = 0; t < v; ++t) h.wv(t, t) = 1.0;
        for (int t = 0; t < v; ++t) h.wo(t, prev0 + t) = 1.0;
    }
    // Layer 1 head 0: match current token against prev-token codes, copy the
    // matched position's token (the successor) back into the token subspace.
    {
        HeadParams& h = p.layers[1].heads[0];
        for (int t = 0; t < v; ++t) h.wq(t, t) = sb;
        for (int t = 0; t < v; ++t) h.wk(prev0 + t, t) = sb;
        for (int t = 0; t < v; ++t) h.wv(t, t) = 1.0;
        for (int t = 0; t < v; ++t) h.wo(t, t) = gain;
    }
    p.unembed = MatrixXd::Zero(d, v);
    for (int t = 0; t < v; ++t) p.unembed(t, t) = 1.0;
    return p;
}

MatrixXd embed_tokens(const Parameters& params, const std::vector<int>& tokens) {
    check_tokens(params.config, tokens);
    const int s = static_cast<int>(tokens.size());
    MatrixXd x(s, params.config.d_model);
    for (int i = 0; i < s; ++i)
        x.row(i) = params.token_embed.row(tokens[i]) + params.pos_embed.row(i);
    return x;
}

HeadCache head_forward(const Parameters& params, int layer, int head,
                       const MatrixXd& q_in, const MatrixXd& k_in, const MatrixXd& v_in) {
    const auto& hp = params.layers[layer].heads[head];
    const VectorXd* sc = nullptr;
    const VectorXd* sh = nullptr;
    if (use_norm(params)) {
        sc = &params.layers[layer].ln1_scale;
        sh = &params.layers[layer].ln1_shift;
    }
    HeadCache c;
    c.q_in = q_in;
    c.k_in = k_in;
    c.v_in = v_in;
    c.q = site_norm(q_in, sc, sh) * hp.wq;
    c.k = site_norm(k_in, sc, sh) * hp.wk;
    c.v = site_norm(v_in, sc, sh) * hp.wv;
    const int s = static_cast<int>(q_in.rows());
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.config.d_head));
    MatrixXd scores = (c.q * c.k.transpose()) * scale;
    c.pattern = MatrixXd::Zero(s, s);
    for (int i = 0; i < s; ++i) {
        double mx = scores(i, 0);
        for (int j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) denom += std::exp(scores(i, j) - mx);
        for (int j = 0; j <= i; ++j) c.pattern(i, j) = std::exp(scores(i, j) - mx) / denom;
    }
    c.z = c.pattern * c.v;
    c.out = c.z * hp.wo;
    return c;
}

MlpCache mlp_forward(const Parameters& params, int layer, const MatrixXd& in) {
    const auto& lp = params.layers[layer];
    const VectorXd* sc = nullptr;
    const VectorXd* sh = nullptr;
    if (use_norm(params)) {
        sc = &lp.ln2_scale;
        sh = &lp.ln2_shift;
    }
    MlpCache c;
    c.in = in;
    c.pre = (site_norm(in, sc, sh) * lp.mlp_in).rowwise() + lp.mlp_bin.transpose();
    MatrixXd act = c.pre.unaryExpr([](double x) { return gelu(x); });
    c.out = (act * lp.mlp_out).rowwise() + lp.mlp_bout.transpose();
    return c;
}

MatrixXd logits_forward(const Parameters& params, const MatrixXd& in) {
    const VectorXd* sc = use_norm(params) ? &params.lnf_scale : nullptr;
    const VectorXd* sh = use_norm(params) ? &params.lnf_shift : nullptr;
    return site_norm(in, sc, sh) * params.unembed;
}

namespace {

ActivationCache forward_impl(const Parameters& params, const MatrixXd& input_out,
                             const std::vector<int>* tokens,
                             const std::vector<std::pair<SiteRef, MatrixXd>>* offsets) {
    const auto& cfg = params.config;
    ActivationCache cache;
    cache.seq_len = static_cast<int>(input_out.rows());
    if (tokens) cache.tokens = *tokens;
    cache.input_out = input_out;
    cache.heads.resize(cfg.n_layers);
    if (cfg.has_mlp()) cache.mlps.resize(cfg.n_layers);

    auto offset_for = [&](SiteRef::Kind kind, int layer, int head) -> const MatrixXd* {
        if (!offsets) return nullptr;
        const bool has_layer = kind != SiteRef::Kind::logits_in;
        const bool has_head = kind == SiteRef::Kind::head_q ||
                              kind == SiteRef::Kind::head_k ||
                              kind == SiteRef::Kind::head_v;
        for (const auto& [ref, m] : *offsets)
            if (ref.kind == kind && (!has_layer || ref.layer == layer) &&
                (!has_head || ref.head == head))
                return &m;
        return nullptr;
    };
    auto with_offset = [&](const MatrixXd& base, SiteRef::Kind kind, int layer,
                           int head) -> MatrixXd {
        const MatrixXd* off = offset_for(kind, layer, head);
        return off ? MatrixXd(base + *off) : base;
    };

    MatrixXd stream = input_out;
    for (int l = 0; l < cfg.n_layers; ++l) {
        cache.heads[l].resize(cfg.n_heads);
        for (int h = 0; h < cfg.n_heads; ++h)
            cache.heads[l][h] = head_forward(
                params, l, h, with_offset(stream, SiteRef::Kind::head_q, l, h),
                with_offset(stream, SiteRef::Kind::head_k, l, h),
                with_offset(stream, SiteRef::Kind::head_v, l, h));
        for (int h = 0; h < cfg.n_heads; ++h) stream += cache.heads[l][h].out;
        if (cfg.has_mlp()) {
            cache.mlps[l] =
                mlp_forward(params, l, with_offset(stream, SiteRef::Kind::mlp_in, l, 0));
            stream += cache.mlps[l].out;
        }
    }
    cache.logits_in = with_offset(stream, SiteRef::Kind::logits_in, 0, 0);
    cache.logits = logits_forward(params, cache.logits_in);
    return cache;
}

}  // namespace

ActivationCache forward(const Parameters& params, const std::vector<int>& tokens) {
    return forward_impl(params, embed_tokens(params, tokens), &tokens, nullptr);
}

ActivationCache forward_from_embeddings(const Parameters& params, const MatrixXd& input_out) {
    if (input_out.cols() != params.config.d_model ||
        input_out.rows() > params.config.max_seq_len)
        throw std::invalid_argument("embedding matrix shape incompatible with config");
    return forward_impl(params, input_out, nullptr, nullptr);
}

ActivationCache forward_with_site_offsets(
    const Parameters& params, const std::vector<int>& tokens,
    const std::vector<std::pair<SiteRef, MatrixXd>>& offsets) {
    return forward_impl(params, embed_tokens(params, tokens), &tokens, &offsets);
}

double metric_value(const MatrixXd& logits, const MetricSpec& spec) {
    if (spec.counterfactuals.empty())
        throw std::invalid_argument("metric requires a non-empty counterfactual set");
    if (spec.position < 0 || spec.position >= logits.rows())
        throw std::invalid_argument("metric position out of range");
    double cf = 0.0;
    for (int t : spec.counterfactuals) cf += logits(spec.position, t);
    cf /= static_cast<double>(spec.counterfactuals.size());
    return logits(spec.position, spec.correct) - cf;
}

namespace {

struct HeadSiteGrads {
    MatrixXd q, k, v;
};

// Backprop one head given d(metric)/d(out). Fills site-input gradients and,
// when pg is non-null, parameter gradients.
HeadSiteGrads head_backward(const Parameters& params, int layer, int head,
                            const HeadCache& c, const MatrixXd& g_out, Parameters* pg) {
    const auto& hp = params.layers[layer].heads[head];
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.config.d_head));
    const int s = static_cast<int>(c.q_in.rows());

    MatrixXd g_z = g_out * hp.wo.transpose();
    MatrixXd g_pattern = g_z * c.v.transpose();
    MatrixXd g_v = c.pattern.transpose() * g_z;
    MatrixXd g_scores = MatrixXd::Zero(s, s);
    for (int i = 0; i < s; ++i) {
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += g_pattern(i, j) * c.pattern(i, j);
        for (int j = 0; j <= i; ++j)
            g_scores(i, j) = c.pattern(i, j) * (g_pattern(i, j) - dot);
    }
    MatrixXd g_q = (g_scores * c.k) * scale;
    MatrixXd g_k = (g_scores.transpose() * c.q) * scale;

    const VectorXd* sc = nullptr;
    VectorXd* gsc = nullptr;
    VectorXd* gsh = nullptr;
    if (use_norm(params)) {
        sc = &params.layers[layer].ln1_scale;
        if (pg) {
            gsc = &pg->layers[layer].ln1_scale;
            gsh = &pg->layers[layer].ln1_shift;
        }
    }
    if (pg) {
        const VectorXd* shp = use_norm(params) ? &params.layers[layer].ln1_shift : nullptr;
        MatrixXd nq = site_norm(c.q_in, sc, shp);
        MatrixXd nk = site_norm(c.k_in, sc, shp);
        MatrixXd nv = site_norm(c.v_in, sc, shp);
        pg->layers[layer].heads[head].wq += nq.transpose() * g_q;
        pg->layers[layer].heads[head].wk += nk.transpose() * g_k;
        pg->layers[layer].heads[head].wv += nv.transpose() * g_v;
        pg->layers[layer].heads[head].wo += c.z.transpose() * g_out;
    }
    HeadSiteGrads g;
    g.q = site_norm_backward(c.q_in, sc, g_q * hp.wq.transpose(), gsc, gsh);
    g.k = site_norm_backward(c.k_in, sc, g_k * hp.wk.transpose(), gsc, gsh);
    g.v = site_norm_backward(c.v_in, sc, g_v * hp.wv.transpose(), gsc, gsh);
    return g;
}

MatrixXd mlp_backward(const Parameters& params, int layer, const MlpCache& c,
                      const MatrixXd& g_out, Parameters* pg) {
    const auto& lp = params.layers[layer];
    MatrixXd act = c.pre.unaryExpr([](double x) { return gelu(x); });
    MatrixXd g_act = g_out * lp.mlp_out.transpose();
    MatrixXd g_pre =
        g_act.array() * c.pre.unaryExpr([](double x) { return gelu_grad(x); }).array();

    const VectorXd* sc = nullptr;
    VectorXd* gsc = nullptr;
    VectorXd* gsh = nullptr;
    if (use_norm(params)) {
        sc = &lp.ln2_scale;
        if (pg) {
            gsc = &pg->layers[layer].ln2_scale;
            gsh = &pg->layers[layer].ln2_shift;
        }
    }
    if (pg) {
        const VectorXd* shp = use_norm(params) ? &lp.ln2_shift : nullptr;
        MatrixXd nin = site_norm(c.in, sc, shp);
        pg->layers[layer].mlp_in += nin.transpose() * g_pre;
        pg->layers[layer].mlp_bin += g_pre.colwise().sum().transpose();
        pg->layers[layer].mlp_out += act.transpose() * g_out;
        pg->layers[layer].mlp_bout += g_out.colwise().sum().transpose();
    }
    return site_norm_backward(c.in, sc, g_pre * lp.mlp_in.transpose(), gsc, gsh);
}

Parameters zeros_like(const Parameters& p) {
    Parameters z = p;
    z.token_embed.setZero();
    z.pos_embed.setZero();
    for (auto& l : z.layers) {
        for (auto& h : l.heads) {
            h.wq.setZero();
            h.wk.setZero();
            h.wv.setZero();
            h.wo.setZero();
        }
        if (l.mlp_in.size()) {
            l.mlp_in.setZero();
            l.mlp_bin.setZero();
            l.mlp_out.setZero();
            l.mlp_bout.setZero();
        }
        if (l.ln1_scale.size()) {
            l.ln1_scale.setZero();
            l.ln1_shift.setZero();
        }
        if (l.ln2_scale.size()) {
            l.ln2_scale.setZero();
            l.ln2_shift.setZero();
        }
    }
    z.unembed.setZero();
    if (z.lnf_scale.size()) {
        z.lnf_scale.setZero();
        z.lnf_shift.setZero();
    }
    return z;
}

// Reverse sweep shared by metric gradients and training. Site gradients are
// partials through the reading node; the running g accumulates the total
// derivative with respect to the stream.
void backward_impl(const Parameters& params, const ActivationCache& cache,
                   const MatrixXd& dlogits, GradientCache* sites, Parameters* pg,
                   MatrixXd* input_grad) {
    const auto& cfg = params.config;
    if (static_cast<int>(cache.heads.size()) != cfg.n_layers ||
        (cfg.n_layers > 0 &&
         static_cast<int>(cache.heads[0].size()) != cfg.n_heads) ||
        cache.input_out.cols() != cfg.d_model)
        throw std::invalid_argument("cache does not match model parameters");

    if (sites) {
        sites->head_sites.assign(cfg.n_layers, {});
        for (auto& l : sites->head_sites) l.resize(cfg.n_heads);
        sites->mlp_sites.assign(cfg.has_mlp() ? cfg.n_layers : 0, MatrixXd());
    }

    const VectorXd* sc = use_norm(params) ? &params.lnf_scale : nullptr;
    VectorXd* gsc = (use_norm(params) && pg) ? &pg->lnf_scale : nullptr;
    VectorXd* gsh = (use_norm(params) && pg) ? &pg->lnf_shift : nullptr;
    if (pg) {
        const VectorXd* shp = use_norm(params) ? &params.lnf_shift : nullptr;
        pg->unembed += site_norm(cache.logits_in, sc, shp).transpose() * dlogits;
    }
    MatrixXd g = site_norm_backward(cache.logits_in, sc,
                                    dlogits * params.unembed.transpose(), gsc, gsh);
    if (sites) sites->logits_site = g;

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        if (cfg.has_mlp()) {
            MatrixXd g_site = mlp_backward(params, l, cache.mlps[l], g, pg);
            if (sites) sites->mlp_sites[l] = g_site;
            g += g_site;
        }
        MatrixXd g_heads = MatrixXd::Zero(g.rows(), g.cols());
        for (int h = 0; h < cfg.n_heads; ++h) {
            HeadSiteGrads hg = head_backward(params, l, h, cache.heads[l][h], g, pg);
            if (sites) {
                sites->head_sites[l][h][0] = hg.q;
                sites->head_sites[l][h][1] = hg.k;
                sites->head_sites[l][h][2] = hg.v;
            }
            g_heads += hg.q + hg.k + hg.v;
        }
        g += g_heads;
    }
    if (input_grad) *input_grad = g;
    if (pg && !cache.tokens.empty()) {
        for (int i = 0; i < cache.seq_len; ++i) {
            pg->token_embed.row(cache.tokens[i]) += g.row(i);
            pg->pos_embed.row(i) += g.row(i);
        }
    }
}

}  // namespace

GradientCache backward_metric(const Parameters& params, const ActivationCache& cache,
                              const MetricSpec& spec) {
    if (spec.counterfactuals.empty())
        throw std::invalid_argument("metric requires a non-empty counterfactual set");
    MatrixXd dlogits = MatrixXd::Zero(cache.logits.rows(), cache.logits.cols());
    dlogits(spec.position, spec.correct) += 1.0;
    const double w = 1.0 / static_cast<double>(spec.counterfactuals.size());
    for (int t : spec.counterfactuals) dlogits(spec.position, t) -= w;
    GradientCache sites;
    backward_impl(params, cache, dlogits, &sites, nullptr, nullptr);
    return sites;
}

double accuracy(const Parameters& params, const std::vector<TrainExample>& dataset) {
    if (dataset.empty()) return 0.0;
    int hits = 0;
    for (const auto& ex : dataset) {
        ActivationCache c = forward(params, ex.tokens);
        int best = 0;
        for (int t = 1; t < params.config.vocab_size; ++t)
            if (c.logits(ex.target_pos, t) > c.logits(ex.target_pos, best)) best = t;
        if (best == ex.target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

namespace {

// Fixed-order walk over every parameter tensor; keeps Adam state, checkpoint
// layout and gradient application in the same canonical order.
template <typename Fn>
void for_each_tensor(Parameters& p, Fn&& fn) {
    fn(p.token_embed);
    fn(p.pos_embed);
    for (auto& l : p.layers) {
        for (auto& h : l.heads) {
            fn(h.wq);
            fn(h.wk);
            fn(h.wv);
            fn(h.wo);
        }
        if (l.mlp_in.size()) {
            fn(l.mlp_in);
            fn(l.mlp_bin);
            fn(l.mlp_out);
            fn(l.mlp_bout);
        }
        if (l.ln1_scale.size()) {
            fn(l.ln1_scale);
            fn(l.ln1_shift);
        }
        if (l.ln2_scale.size()) {
            fn(l.ln2_scale);
            fn(l.ln2_shift);
        }
    }
    fn(p.unembed);
    if (p.lnf_scale.size()) {
        fn(p.lnf_scale);
        fn(p.lnf_shift);
    }
}

template <typename Fn>
void for_each_tensor(const Parameters& p, Fn&& fn) {
    for_each_tensor(const_cast<Parameters&>(p), [&](auto& t) { fn(std::as_const(t)); });
}

}  // namespace

TrainResult train(const Parameters& start, const std::vector<TrainExample>& dataset,
                  const OptimizerSpec& opt) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    TrainResult result;
    result.params = start;
    Parameters& p = result.params;

    std::vector<Eigen::Map<Eigen::ArrayXd>> views;
    for_each_tensor(p, [&](auto& t) {
        views.emplace_back(t.data(), t.size());
    });
    std::vector<Eigen::ArrayXd> m, v;
    for (auto& view : views) {
        m.emplace_back(Eigen::ArrayXd::Zero(view.size()));
        v.emplace_back(Eigen::ArrayXd::Zero(view.size()));
    }

    Rng rng(mix_seed(opt.seed, 0x7121));
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    size_t cursor = order.size();

    double last_loss = 0.0;
    for (int step = 0; step < opt.steps; ++step) {
        Parameters grads = zeros_like(p);
        double loss = 0.0;
        for (int b = 0; b < opt.batch_size; ++b) {
            if (cursor >= order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const TrainExample& ex = dataset[order[cursor++]];
            ActivationCache cache = forward(p, ex.tokens);
            // softmax cross-entropy at the labeled position
            Eigen::ArrayXd row = cache.logits.row(ex.target_pos).transpose().array();
            double mx = row.maxCoeff();
            Eigen::ArrayXd ex_row = (row - mx).exp();
            double denom = ex_row.sum();
            loss += -std::log(ex_row(ex.target) / denom);
            MatrixXd dlogits = MatrixXd::Zero(cache.logits.rows(), cache.logits.cols());
            dlogits.row(ex.target_pos) = (ex_row / denom).matrix().transpose();
            dlogits(ex.target_pos, ex.target) -= 1.0;
            backward_impl(p, cache, dlogits, nullptr, &grads, nullptr);
        }
        const double inv_b = 1.0 / static_cast<double>(opt.batch_size);
        loss *= inv_b;
        if (!std::isfinite(loss)) throw TrainingDivergedError("non-finite training loss");
        last_loss = loss;

        std::vector<Eigen::Map<Eigen::ArrayXd>> gviews;
        for_each_tensor(grads, [&](auto& t) {
            gviews.emplace_back(t.data(), t.size());
        });
        const double t1 = 1.0 - std::pow(opt.beta1, step + 1);
        const double t2 = 1.0 - std::pow(opt.beta2, step + 1);
        for (size_t i = 0; i < views.size(); ++i) {
            Eigen::ArrayXd g = gviews[i] * inv_b;
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g.square();
            views[i] -= opt.lr * (m[i] / t1) / ((v[i] / t2).sqrt() + opt.eps);
        }
    }
    result.final_loss = last_loss;
    result.final_accuracy = accuracy(p, dataset);
    return result;
}

// --- checkpoint io ---

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},
            {"d_model", c.d_model},     {"d_head", c.d_head},
            {"d_mlp", c.d_mlp},         {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len},
            {"norm_mode", c.norm_mode == NormMode::pre_norm ? "pre_norm" : "none"},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.d_head = j.at("d_head").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.norm_mode = j.at("norm_mode").get<std::string>() == "pre_norm" ? NormMode::pre_norm
                                                                     : NormMode::none;
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const Parameters& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    nlohmann::json header = {{"format_version", 1},
                             {"kind", "model_checkpoint"},
                             {"config", config_to_json(params.config)}};
    std::string hs = header.dump();
    uint32_t len = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), hs.size());
    for_each_tensor(params, [&](const auto& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

Parameters load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    if (!in) throw IoError("truncated checkpoint header: " + path);
    nlohmann::json header = nlohmann::json::parse(hs);
    if (header.at("kind").get<std::string>() != "model_checkpoint")
        throw IoError("not a model checkpoint: " + path);
    ModelConfig cfg = config_from_json(header.at("config"));
    Parameters p = build_model(cfg);  // correct shapes, then overwrite
    for_each_tensor(p, [&](auto& t) {
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!in) throw IoError("truncated checkpoint payload: " + path);
    return p;
}

}  // namespace dcd
