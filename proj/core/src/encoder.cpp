#include "cgt/encoder.hpp"

#include "cgt/errors.hpp"

namespace cgt {

void EncoderConfig::validate() const {
    if (width == 0 || heads == 0 || width % heads != 0) {
        throw ConfigError("encoder: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (token_width == 0 || ffn_multiplier == 0) {
        throw ConfigError("encoder: token_width and ffn_multiplier must be positive");
    }
    if (!(ln_eps > 0.0)) {
        throw ConfigError("encoder: ln_eps must be positive");
    }
}

CgtEncoder CgtEncoder::create(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    CgtEncoder enc;
    enc.config = cfg;
    const std::size_t c = cfg.width;
    const std::size_t hidden = cfg.ffn_multiplier * c;
    enc.input_w = init_uniform_fan_in(Shape{cfg.token_width, c}, cfg.token_width, rng);
    enc.input_b = init_uniform_fan_in(Shape{c}, cfg.token_width, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        EncoderLayer layer;
        layer.ln1_gain = init_constant(Shape{c}, 1.0);
        layer.ln1_bias = init_constant(Shape{c}, 0.0);
        layer.qkv_w = init_uniform_fan_in(Shape{c, 3 * c}, c, rng);
        layer.qkv_b = init_uniform_fan_in(Shape{3 * c}, c, rng);
        layer.out_w = init_uniform_fan_in(Shape{c, c}, c, rng);
        layer.out_b = init_uniform_fan_in(Shape{c}, c, rng);
        layer.ln2_gain = init_constant(Shape{c}, 1.0);
        layer.ln2_bias = init_constant(Shape{c}, 0.0);
        layer.ff1_w = init_uniform_fan_in(Shape{c, hidden}, c, rng);
        layer.ff1_b = init_uniform_fan_in(Shape{hidden}, c, rng);
        layer.ff2_w = init_uniform_fan_in(Shape{hidden, c}, hidden, rng);
        layer.ff2_b = init_uniform_fan_in(Shape{c}, hidden, rng);
        enc.layers.push_back(std::move(layer));
    }
    enc.final_gain = init_constant(Shape{c}, 1.0);
    enc.final_bias = init_constant(Shape{c}, 0.0);
    return enc;
}

ParamSet CgtEncoder::params(const std::string& prefix) const {
    ParamSet ps;
    ps.add(prefix + "input.weight", input_w);
    ps.add(prefix + "input.bias", input_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        ps.add(p + "ln1.gain", L.ln1_gain);
        ps.add(p + "ln1.bias", L.ln1_bias);
        ps.add(p + "qkv.weight", L.qkv_w);
        ps.add(p + "qkv.bias", L.qkv_b);
        ps.add(p + "out.weight", L.out_w);
        ps.add(p + "out.bias", L.out_b);
        ps.add(p + "ln2.gain", L.ln2_gain);
        ps.add(p + "ln2.bias", L.ln2_bias);
        ps.add(p + "ff1.weight", L.ff1_w);
        ps.add(p + "ff1.bias", L.ff1_b);
        ps.add(p + "ff2.weight", L.ff2_w);
        ps.add(p + "ff2.bias", L.ff2_b);
    }
    ps.add(prefix + "final_ln.gain", final_gain);
    ps.add(prefix + "final_ln.bias", final_bias);
    return ps;
}

Tensor encode(const Tensor& tokens, const CgtEncoder& enc, EncodeTrace* trace) {
    const auto& cfg = enc.config;
    if (tokens.rank() != 2 || tokens.dim(1) != cfg.token_width) {
        throw DimensionError("encode: tokens " + shape_str(tokens.shape()) + " for token width " +
                             std::to_string(cfg.token_width));
    }
    if (tokens.dim(0) == 0) {
        throw ContractError("encode: at least one token is required");
    }
    if (trace) trace->layers.assign(enc.layers.size(), AttentionProbe{});
    Tensor x = linear(tokens, enc.input_w, enc.input_b);
    for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        const auto& L = enc.layers[l];
        const Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias, cfg.ln_eps);
        const Tensor qkv = linear(h, L.qkv_w, L.qkv_b);
        const Tensor att = multi_head_attention(qkv, cfg.heads, trace ? &trace->layers[l] : nullptr);
        x = add(x, linear(att, L.out_w, L.out_b));
        const Tensor h2 = layer_norm(x, L.ln2_gain, L.ln2_bias, cfg.ln_eps);
        x = add(x, linear(relu(linear(h2, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b));
    }
    return layer_norm(x, enc.final_gain, enc.final_bias, cfg.ln_eps);
}

ClassifierHead ClassifierHead::create(std::size_t width, std::size_t classes, Rng& rng) {
    ClassifierHead h;
    h.weight = init_uniform_fan_in(Shape{width, classes}, width, rng);
    h.bias = init_uniform_fan_in(Shape{classes}, width, rng);
    return h;
}

ParamSet ClassifierHead::params(const std::string& prefix) const {
    ParamSet ps;
    ps.add(prefix + "weight", weight);
    ps.add(prefix + "bias", bias);
    return ps;
}

Tensor classify(const Tensor& encoded, std::size_t n, const ClassifierHead& head) {
    if (encoded.rank() != 2 || encoded.dim(0) < n) {
        throw ContractError("classify: " + std::to_string(n) + " nodes requested from encoder output " +
                            shape_str(encoded.shape()));
    }
    const Tensor nodes = encoded.dim(0) == n ? encoded : slice_rows(encoded, 0, n);
    return softmax_rows(linear(nodes, head.weight, head.bias));
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
    std::vector<double> v(labels.size() * classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw ContractError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " +
                                std::to_string(classes) + ")");
        }
        v[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor(Shape{labels.size(), classes}, std::move(v));
}

Tensor node_loss(const Tensor& probs, const Tensor& onehot, std::span<const double> tau, double gamma) {
    if (probs.rank() != 2 || probs.shape() != onehot.shape()) {
        throw DimensionError("node_loss: probabilities " + shape_str(probs.shape()) + " vs labels " +
                             shape_str(onehot.shape()));
    }
    const std::size_t n = probs.dim(0), b = probs.dim(1);
    if (tau.size() != b) {
        throw DimensionError("node_loss: " + std::to_string(tau.size()) + " class weights for " + std::to_string(b) +
                             " classes");
    }
    if (n == 0) {
        throw ContractError("node_loss: no nodes");
    }
    const auto y = onehot.values();
    std::vector<double> tau_node(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < b; ++c) {
            const double v = y[i * b + c];
            if (v == 1.0) {
                ++ones;
                tau_node[i] = tau[c];
            } else if (v != 0.0) {
                ones = 2;
            }
        }
        if (ones != 1) {
            throw ContractError("node_loss: label row " + std::to_string(i) + " is not one-hot");
        }
    }
    // Only the true-class term survives the y_b factor in both sums.
    const Tensor p_true = clamp(sum_rows(mul(probs, onehot)), kProbabilityFloor, 1.0);
    const Tensor nll = scale(log(p_true), -1.0);
    const Tensor modulation = pow(add_scalar(scale(p_true, -1.0), 1.0), gamma);
    const Tensor focal = mul(mul(Tensor::vector(std::move(tau_node)), modulation), nll);
    return mean(add(nll, focal));
}

} // namespace cgt
