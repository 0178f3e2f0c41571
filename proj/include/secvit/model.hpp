#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "secvit/attention.hpp"

namespace secvit {

struct BlockConfig {
    std::size_t model_dim = 0;
    std::size_t num_heads = 1;
    std::size_t num_clusters = 1;  // M
    double ffn_ratio = 3.0;
    double norm_eps = 1e-6;
};

// Four-stage layout with x2 downsampling between stages; the stem reduces the
// input by 4x before stage 0.
struct ModelConfig {
    std::string name = "custom";
    std::vector<std::size_t> stage_depths;
    std::vector<std::size_t> stage_channels;
    std::vector<std::size_t> stage_heads;
    std::vector<std::size_t> stage_clusters;
    std::size_t num_classes = 1000;
    std::size_t in_channels = 3;
    std::size_t stem_hidden = 0;  // 0: stage_channels[0] / 2
    double ffn_ratio = 3.0;
    double norm_eps = 1e-6;
    // The stem normalization is batch-independent (per-position layer norm
    // over channels) so single-sample training stays well-defined.
    std::string stem_norm = "layernorm";

    std::size_t num_stages() const { return stage_depths.size(); }
    std::size_t stem_width() const {
        return stem_hidden ? stem_hidden : std::max<std::size_t>(1, stage_channels.at(0) / 2);
    }
    // stem /4, then /2 per stage transition
    std::size_t total_downsample() const { return std::size_t(4) << (num_stages() - 1); }

    void validate() const {
        std::size_t s = stage_depths.size();
        if (s == 0 || s > 4) throw std::invalid_argument("config: need 1 to 4 stages");
        if (stage_channels.size() != s || stage_heads.size() != s || stage_clusters.size() != s)
            throw std::invalid_argument("config: stage lists must have equal length");
        for (std::size_t i = 0; i < s; ++i) {
            if (stage_depths[i] == 0) throw std::invalid_argument("config: zero-depth stage");
            if (stage_heads[i] == 0 || stage_channels[i] % stage_heads[i] != 0)
                throw std::invalid_argument("config: heads must divide channels in every stage");
            if (stage_clusters[i] == 0) throw std::invalid_argument("config: zero cluster count");
        }
        if (num_classes == 0) throw std::invalid_argument("config: num_classes must be >= 1");
        if (in_channels == 0) throw std::invalid_argument("config: in_channels must be >= 1");
        if (ffn_ratio <= 0) throw std::invalid_argument("config: ffn_ratio must be positive");
    }

    BlockConfig block(std::size_t stage) const {
        return BlockConfig{stage_channels.at(stage), stage_heads.at(stage),
                           stage_clusters.at(stage), ffn_ratio, norm_eps};
    }
};

// Named presets. Per-stage cluster counts default to 32, 8, 2 for the first
// three stages and 1 for the last (at 1/32 resolution the token count is
// small enough for one global cluster).
inline ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    c.name = name;
    c.stage_clusters = {32, 8, 2, 1};
    if (name == "secvit-t") {
        c.stage_depths = {2, 2, 9, 2};
        c.stage_channels = {64, 128, 256, 512};
        c.stage_heads = {2, 4, 8, 16};
    } else if (name == "secvit-s") {
        c.stage_depths = {4, 4, 18, 4};
        c.stage_channels = {64, 128, 256, 512};
        c.stage_heads = {2, 4, 8, 16};
    } else if (name == "secvit-b") {
        c.stage_depths = {4, 8, 26, 9};
        c.stage_channels = {80, 160, 320, 512};
        c.stage_heads = {2, 4, 8, 16};
    } else if (name == "secvit-l") {
        c.stage_depths = {4, 8, 26, 9};
        c.stage_channels = {112, 224, 448, 640};
        c.stage_heads = {4, 8, 14, 20};
    } else if (name == "secvit-xl") {
        c.stage_depths = {6, 12, 28, 12};
        c.stage_channels = {128, 256, 512, 1024};
        c.stage_heads = {4, 8, 16, 32};
    } else if (name == "toy") {
        // trainable in minutes on a CPU while still exercising clustering,
        // downsampling, and the single-cluster regime
        c.stage_depths = {2, 2};
        c.stage_channels = {32, 64};
        c.stage_heads = {2, 4};
        c.stage_clusters = {4, 1};
        c.num_classes = 10;
        c.in_channels = 1;
        c.stem_hidden = 8;
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    c.validate();
    return c;
}

// ---- parameter containers ----------------------------------------------------
// Generic over the handle type: Tensor<T> for storage, Var<T> on a tape.

template <typename H>
struct NormParamsT {
    H gamma, beta;
};

template <typename H>
struct FfnParamsT {
    LinearParamsT<H> expand, contract;
};

template <typename H>
struct ConvParamsT {
    H weight;  // [Co, Ci, 3, 3]
    H bias;    // [Co]
};

template <typename H>
struct BlockParamsT {
    H cpe_kernel;  // [C, 3, 3]
    NormParamsT<H> norm_attn, norm_ffn;
    AttentionParamsT<H> attn;
    FfnParamsT<H> ffn;
};

template <typename H>
struct StemParamsT {
    std::array<ConvParamsT<H>, 4> conv;
    std::array<NormParamsT<H>, 4> norm;
};

template <typename H>
struct ModelParamsT {
    StemParamsT<H> stem;
    std::vector<std::vector<BlockParamsT<H>>> stages;
    std::vector<ConvParamsT<H>> down_conv;  // between consecutive stages
    std::vector<NormParamsT<H>> down_norm;
    NormParamsT<H> final_norm;
    LinearParamsT<H> head;
};

template <typename T>
using ModelParams = ModelParamsT<Tensor<T>>;
template <typename T>
using ModelVars = ModelParamsT<Var<T>>;
template <typename T>
using BlockParams = BlockParamsT<Tensor<T>>;
template <typename T>
using BlockVars = BlockParamsT<Var<T>>;

// ---- traversal ---------------------------------------------------------------
// One deterministic walk over every parameter; naming doubles as the
// checkpoint schema (stage0.block1.attn.wq.weight, ...).

template <typename H, typename F>
void visit_params(LinearParamsT<H>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    if (p.has_bias) f(prefix + ".bias", p.bias);
}

template <typename H, typename F>
void visit_params(NormParamsT<H>& p, const std::string& prefix, F&& f) {
    f(prefix + ".gamma", p.gamma);
    f(prefix + ".beta", p.beta);
}

template <typename H, typename F>
void visit_params(ConvParamsT<H>& p, const std::string& prefix, F&& f) {
    f(prefix + ".weight", p.weight);
    f(prefix + ".bias", p.bias);
}

template <typename H, typename F>
void visit_params(AttentionParamsT<H>& p, const std::string& prefix, F&& f) {
    visit_params(p.wq, prefix + ".wq", f);
    visit_params(p.wk, prefix + ".wk", f);
    visit_params(p.wv, prefix + ".wv", f);
    visit_params(p.wo, prefix + ".wo", f);
}

template <typename H, typename F>
void visit_params(FfnParamsT<H>& p, const std::string& prefix, F&& f) {
    visit_params(p.expand, prefix + ".expand", f);
    visit_params(p.contract, prefix + ".contract", f);
}

template <typename H, typename F>
void visit_params(BlockParamsT<H>& p, const std::string& prefix, F&& f) {
    f(prefix + ".cpe", p.cpe_kernel);
    visit_params(p.norm_attn, prefix + ".norm_attn", f);
    visit_params(p.attn, prefix + ".attn", f);
    visit_params(p.norm_ffn, prefix + ".norm_ffn", f);
    visit_params(p.ffn, prefix + ".ffn", f);
}

template <typename H, typename F>
void visit_params(ModelParamsT<H>& p, F&& f) {
    for (std::size_t i = 0; i < 4; ++i) {
        std::string pre = "stem." + std::to_string(i);
        f(pre + ".weight", p.stem.conv[i].weight);
        f(pre + ".bias", p.stem.conv[i].bias);
        visit_params(p.stem.norm[i], pre + ".norm", f);
    }
    for (std::size_t s = 0; s < p.stages.size(); ++s)
        for (std::size_t b = 0; b < p.stages[s].size(); ++b)
            visit_params(p.stages[s][b],
                         "stage" + std::to_string(s) + ".block" + std::to_string(b), f);
    for (std::size_t s = 0; s < p.down_conv.size(); ++s) {
        std::string pre = "down" + std::to_string(s);
        f(pre + ".weight", p.down_conv[s].weight);
        f(pre + ".bias", p.down_conv[s].bias);
        visit_params(p.down_norm[s], pre + ".norm", f);
    }
    visit_params(p.final_norm, "final_norm", f);
    visit_params(p.head, "head", f);
}

template <typename T>
std::size_t param_count(const ModelParams<T>& params) {
    std::size_t n = 0;
    visit_params(const_cast<ModelParams<T>&>(params),
                 [&](const std::string&, Tensor<T>& t) { n += t.size(); });
    return n;
}

// ---- initialization ------------------------------------------------------------

namespace detail {

template <typename T>
struct NormInit {
    static NormParamsT<Tensor<T>> make(std::size_t d) {
        return {Tensor<T>::full({d}, T(1)), Tensor<T>(Shape{d})};
    }
};

template <typename T>
ConvParamsT<Tensor<T>> init_conv(Rng& rng, std::size_t out, std::size_t in) {
    double s = std::sqrt(1.0 / double(in * 9));
    return {rng.tensor_uniform<T>({out, in, 3, 3}, -s, s), Tensor<T>(Shape{out})};
}

}  // namespace detail

// Seeded deterministic init: weights ~ U(-s, s) with s = sqrt(1/fan_in),
// biases zero, norm gamma 1 / beta 0.
template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams<T> p;

    std::size_t hidden = cfg.stem_width();
    std::size_t c0 = cfg.stage_channels[0];
    std::array<std::pair<std::size_t, std::size_t>, 4> io = {
        std::pair{cfg.in_channels, hidden}, {hidden, hidden}, {hidden, c0}, {c0, c0}};
    for (std::size_t i = 0; i < 4; ++i) {
        p.stem.conv[i] = detail::init_conv<T>(rng, io[i].second, io[i].first);
        p.stem.norm[i] = detail::NormInit<T>::make(io[i].second);
    }

    p.stages.resize(cfg.num_stages());
    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
        std::size_t c = cfg.stage_channels[s];
        std::size_t hiddenf = std::size_t(double(c) * cfg.ffn_ratio);
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            BlockParams<T> blk;
            double sk = std::sqrt(1.0 / 9.0);
            blk.cpe_kernel = rng.tensor_uniform<T>({c, 3, 3}, -sk, sk);
            blk.norm_attn = detail::NormInit<T>::make(c);
            blk.attn = init_attention<T>(rng, c, cfg.stage_heads[s]);
            blk.norm_ffn = detail::NormInit<T>::make(c);
            blk.ffn.expand = init_linear<T>(rng, hiddenf, c);
            blk.ffn.contract = init_linear<T>(rng, c, hiddenf);
            p.stages[s].push_back(std::move(blk));
        }
        if (s + 1 < cfg.num_stages()) {
            p.down_conv.push_back(
                detail::init_conv<T>(rng, cfg.stage_channels[s + 1], c));
            p.down_norm.push_back(detail::NormInit<T>::make(cfg.stage_channels[s + 1]));
        }
    }

    p.final_norm = detail::NormInit<T>::make(cfg.stage_channels.back());
    p.head = init_linear<T>(rng, cfg.num_classes, cfg.stage_channels.back());
    return p;
}

// Lift every stored parameter onto a tape, keeping the traversal order.
template <typename T>
ModelVars<T> lift(Tape<T>& t, const ModelParams<T>& params) {
    ModelVars<T> out;
    out.stages.resize(params.stages.size());
    for (std::size_t s = 0; s < params.stages.size(); ++s)
        out.stages[s].resize(params.stages[s].size());
    out.down_conv.resize(params.down_conv.size());
    out.down_norm.resize(params.down_norm.size());
    for (std::size_t s = 0; s < params.stages.size(); ++s)
        for (std::size_t b = 0; b < params.stages[s].size(); ++b) {
            out.stages[s][b].attn.num_heads = params.stages[s][b].attn.num_heads;
            out.stages[s][b].attn.wq.has_bias = params.stages[s][b].attn.wq.has_bias;
            out.stages[s][b].attn.wk.has_bias = params.stages[s][b].attn.wk.has_bias;
            out.stages[s][b].attn.wv.has_bias = params.stages[s][b].attn.wv.has_bias;
            out.stages[s][b].attn.wo.has_bias = params.stages[s][b].attn.wo.has_bias;
            out.stages[s][b].ffn.expand.has_bias = params.stages[s][b].ffn.expand.has_bias;
            out.stages[s][b].ffn.contract.has_bias = params.stages[s][b].ffn.contract.has_bias;
        }
    out.head.has_bias = params.head.has_bias;

    // pair the two traversals; identical structure gives identical order
    std::vector<Tensor<T>*> tensors;
    visit_params(const_cast<ModelParams<T>&>(params),
                 [&](const std::string&, Tensor<T>& t2) { tensors.push_back(&t2); });
    std::size_t i = 0;
    visit_params(out, [&](const std::string&, Var<T>& v) { v = t.input(*tensors[i++], true); });
    return out;
}

// ---- forward pieces ------------------------------------------------------------

// [C, H, W] -> [H*W, C]
template <typename T>
Var<T> tokens_from_chw(Var<T> x) {
    const Tensor<T>& v = x.tape->value(x);
    std::size_t C = v.dim(0), H = v.dim(1), W = v.dim(2);
    return transpose_last2(reshape(x, {C, H * W}));
}

template <typename T>
Var<T> chw_from_tokens(Var<T> x, std::size_t C, std::size_t H, std::size_t W) {
    return reshape(transpose_last2(x), {C, H, W});
}

// Layer norm across channels at every spatial position of a [C, H, W] map.
template <typename T>
Var<T> channel_norm(Var<T> x, const NormParamsT<Var<T>>& n, T eps) {
    const Tensor<T>& v = x.tape->value(x);
    std::size_t C = v.dim(0), H = v.dim(1), W = v.dim(2);
    Var<T> tokens = tokens_from_chw(x);
    return chw_from_tokens(layer_norm(tokens, n.gamma, n.beta, eps), C, H, W);
}

// Residual depthwise 3x3 positional encoding.
template <typename T>
Var<T> cpe(Var<T> x, Var<T> kernels) {
    flops::Region region(flops::Cat::conv);
    return add(x, dwconv2d_3x3(x, kernels));
}

template <typename T>
Var<T> ffn(Var<T> x, const FfnParamsT<Var<T>>& p) {
    flops::Region region(flops::Cat::ffn);
    return apply_linear(gelu(apply_linear(x, p.expand)), p.contract);
}

// CPE -> pre-norm cluster attention -> pre-norm FFN, all residual.
template <typename T>
Var<T> secvit_block(Tape<T>& t, Var<T> x, const BlockConfig& cfg, const BlockVars<T>& p,
                    ClusterAttentionTrace<T>* trace = nullptr) {
    const Tensor<T>& v = t.value(x);
    if (v.rank() != 3 || v.dim(0) != cfg.model_dim)
        throw std::invalid_argument("secvit_block: expected [C, H, W] with C == model_dim");
    std::size_t C = v.dim(0), H = v.dim(1), W = v.dim(2);
    if (H * W < cfg.num_clusters)
        throw std::invalid_argument("secvit_block: fewer tokens than clusters");

    x = cpe(x, p.cpe_kernel);
    Var<T> tokens = tokens_from_chw(x);
    Var<T> normed = layer_norm(tokens, p.norm_attn.gamma, p.norm_attn.beta, T(cfg.norm_eps));
    tokens = add(tokens, cluster_attention(t, normed, p.attn, cfg.num_clusters, nullptr, trace));
    Var<T> normed2 = layer_norm(tokens, p.norm_ffn.gamma, p.norm_ffn.beta, T(cfg.norm_eps));
    tokens = add(tokens, ffn(normed2, p.ffn));
    return chw_from_tokens(tokens, C, H, W);
}

// Plan captured after each stage's final block, for cluster-map rendering.
struct StageObservation {
    std::size_t stage = 0;
    std::size_t height = 0, width = 0;
    ClusterPlan plan;
};
using StageHook = std::function<void(const StageObservation&)>;

// Conv stem (strides 2,1,2,1 for the 1/4 input reduction), stages of blocks
// with stride-2 conv downsampling between, global mean pool, linear head.
template <typename T>
Var<T> secvit_forward(Tape<T>& t, Var<T> image, const ModelConfig& cfg, const ModelVars<T>& p,
                      const StageHook& hook = nullptr) {
    cfg.validate();
    const Tensor<T>& img = t.value(image);
    if (img.rank() != 3 || img.dim(0) != cfg.in_channels)
        throw std::invalid_argument("secvit_forward: expected [in_channels, H, W]");
    std::size_t div = cfg.total_downsample();
    if (img.dim(1) % div != 0 || img.dim(2) % div != 0)
        throw std::invalid_argument("secvit_forward: resolution must be divisible by " +
                                    std::to_string(div));

    static constexpr int kStemStrides[4] = {2, 1, 2, 1};
    Var<T> x = image;
    for (std::size_t i = 0; i < 4; ++i) {
        {
            flops::Region region(flops::Cat::conv);
            x = conv2d_stride(x, p.stem.conv[i].weight, p.stem.conv[i].bias, kStemStrides[i]);
        }
        x = channel_norm(x, p.stem.norm[i], T(cfg.norm_eps));
        x = gelu(x);
    }

    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
        BlockConfig bc = cfg.block(s);
        for (std::size_t b = 0; b < p.stages[s].size(); ++b) {
            bool last = (b + 1 == p.stages[s].size());
            ClusterAttentionTrace<T> trace;
            x = secvit_block(t, x, bc, p.stages[s][b], (hook && last) ? &trace : nullptr);
            if (hook && last) {
                const Tensor<T>& v = t.value(x);
                hook(StageObservation{s, v.dim(1), v.dim(2), std::move(trace.plan)});
            }
        }
        if (s + 1 < cfg.num_stages()) {
            {
                flops::Region region(flops::Cat::conv);
                x = conv2d_stride(x, p.down_conv[s].weight, p.down_conv[s].bias, 2);
            }
            x = channel_norm(x, p.down_norm[s], T(cfg.norm_eps));
        }
    }

    Var<T> tokens = tokens_from_chw(x);
    tokens = layer_norm(tokens, p.final_norm.gamma, p.final_norm.beta, T(cfg.norm_eps));
    Var<T> pooled = mean_pool_tokens(tokens);  // [C]
    Var<T> rowed = reshape(pooled, {std::size_t(1), t.value(pooled).dim(0)});
    flops::Region region(flops::Cat::proj);
    Var<T> logits = apply_linear(rowed, p.head);
    return reshape(logits, {t.value(logits).dim(1)});
}

// forward-only convenience
template <typename T>
Tensor<T> secvit_forward_value(const Tensor<T>& image, const ModelConfig& cfg,
                               const ModelParams<T>& params, const StageHook& hook = nullptr) {
    Tape<T> t;
    t.set_recording(false);
    Var<T> out = secvit_forward(t, t.constant(image), cfg, lift(t, params), hook);
    return t.value(out);
}

}  // namespace secvit
