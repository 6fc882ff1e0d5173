#include "cgt/gcn.hpp"

#include "cgt/data.hpp"
#include "cgt/errors.hpp"

namespace cgt {

void GcnConfig::validate() const {
    if (feature_channels == 0 || hidden == 0 || classes == 0) {
        throw ConfigError("gcn: feature_channels, hidden and classes must be positive");
    }
    if (layers == 0) {
        throw ConfigError("gcn: at least one message-passing layer is required");
    }
    if (!(message_eps >= 0.0)) {
        throw ConfigError("gcn: message_eps must be non-negative");
    }
}

GcnHead GcnHead::create(const GcnConfig& cfg, Rng& rng) {
    cfg.validate();
    GcnHead g;
    g.config = cfg;
    const std::size_t h = cfg.hidden;
    const std::size_t node_in = 2 * cfg.feature_channels;
    g.node_in_w = init_uniform_fan_in(Shape{node_in, h}, node_in, rng);
    g.node_in_b = init_uniform_fan_in(Shape{h}, node_in, rng);
    g.edge_in_w = init_uniform_fan_in(Shape{cfg.feature_channels, h}, cfg.feature_channels, rng);
    g.edge_in_b = init_uniform_fan_in(Shape{h}, cfg.feature_channels, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        GenConvLayer layer;
        layer.mlp1_w = init_uniform_fan_in(Shape{h, 2 * h}, h, rng);
        layer.mlp1_b = init_uniform_fan_in(Shape{2 * h}, h, rng);
        layer.mlp2_w = init_uniform_fan_in(Shape{2 * h, h}, 2 * h, rng);
        layer.mlp2_b = init_uniform_fan_in(Shape{h}, 2 * h, rng);
        g.layers.push_back(std::move(layer));
    }
    g.cls_w = init_uniform_fan_in(Shape{h, cfg.classes}, h, rng);
    g.cls_b = init_uniform_fan_in(Shape{cfg.classes}, h, rng);
    return g;
}

ParamSet GcnHead::params(const std::string& prefix) const {
    ParamSet ps;
    ps.add(prefix + "node_in.weight", node_in_w);
    ps.add(prefix + "node_in.bias", node_in_b);
    ps.add(prefix + "edge_in.weight", edge_in_w);
    ps.add(prefix + "edge_in.bias", edge_in_b);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = prefix + "layer" + std::to_string(l) + ".";
        ps.add(p + "mlp1.weight", layers[l].mlp1_w);
        ps.add(p + "mlp1.bias", layers[l].mlp1_b);
        ps.add(p + "mlp2.weight", layers[l].mlp2_w);
        ps.add(p + "mlp2.bias", layers[l].mlp2_b);
    }
    ps.add(prefix + "cls.weight", cls_w);
    ps.add(prefix + "cls.bias", cls_b);
    return ps;
}

GcnOutput gcn_forward(const Tensor& node_feats, const Tensor& edge_feats, std::span<const Edge> edges,
                      const GcnHead& head, GcnTrace* trace) {
    const auto& cfg = head.config;
    if (node_feats.rank() != 2 || node_feats.dim(1) != 2 * cfg.feature_channels) {
        throw DimensionError("gcn_forward: node features " + shape_str(node_feats.shape()) + ", expected [n x " +
                             std::to_string(2 * cfg.feature_channels) + "]");
    }
    const std::size_t n = node_feats.dim(0);
    const std::size_t d = edges.size();
    if (d > 0 && (edge_feats.rank() != 2 || edge_feats.dim(0) != d || edge_feats.dim(1) != cfg.feature_channels)) {
        throw DimensionError("gcn_forward: edge features " + shape_str(edge_feats.shape()) + " for " +
                             std::to_string(d) + " edges of width " + std::to_string(cfg.feature_channels));
    }
    std::vector<std::size_t> sources(2 * d), targets(2 * d), edge_rows(2 * d);
    for (std::size_t e = 0; e < d; ++e) {
        if (edges[e].from >= n || edges[e].to >= n) {
            throw ContractError("gcn_forward: edge " + std::to_string(e) + " references a missing node");
        }
        sources[e] = edges[e].to;
        targets[e] = edges[e].from;
        sources[d + e] = edges[e].from;
        targets[d + e] = edges[e].to;
        edge_rows[e] = e;
        edge_rows[d + e] = e;
    }
    if (trace) {
        trace->weights.clear();
        trace->targets = targets;
    }

    Tensor x = linear(node_feats, head.node_in_w, head.node_in_b);
    Tensor e_msg;
    if (d > 0) e_msg = gather_rows(linear(edge_feats, head.edge_in_w, head.edge_in_b), edge_rows);
    for (const GenConvLayer& layer : head.layers) {
        Tensor agg;
        if (d > 0) {
            const Tensor msgs = add_scalar(relu(add(gather_rows(x, sources), e_msg)), cfg.message_eps);
            std::vector<double> weights;
            agg = softmax_aggregate(msgs, targets, n, trace ? &weights : nullptr);
            if (trace) trace->weights.push_back(std::move(weights));
        } else {
            agg = Tensor::zeros(Shape{n, cfg.hidden});
            if (trace) trace->weights.emplace_back();
        }
        const Tensor hidden = relu(linear(add(x, agg), layer.mlp1_w, layer.mlp1_b));
        x = add(x, linear(hidden, layer.mlp2_w, layer.mlp2_b));
    }
    GcnOutput out;
    out.embeddings = x;
    out.logits = linear(x, head.cls_w, head.cls_b);
    return out;
}

Tensor channel_softmax(const Tensor& logits) {
    if (logits.rank() != 3) {
        throw DimensionError("channel_softmax: expected [K x H x W], got " + shape_str(logits.shape()));
    }
    const std::size_t k = logits.dim(0);
    const std::size_t p = logits.dim(1) * logits.dim(2);
    return transpose(softmax_rows(transpose(reshape(logits, Shape{k, p}))));
}

Tensor mask_one_hot(std::span<const int> mask, std::size_t classes) {
    const std::size_t p = mask.size();
    std::vector<double> v(classes * p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        if (mask[i] < 0 || static_cast<std::size_t>(mask[i]) >= classes) {
            throw ContractError("mask_one_hot: mask value " + std::to_string(mask[i]) + " outside [0, " +
                                std::to_string(classes) + ")");
        }
        v[static_cast<std::size_t>(mask[i]) * p + i] = 1.0;
    }
    return Tensor(Shape{classes, p}, std::move(v));
}

Tensor dice_loss(const Tensor& probs, const Tensor& target, double smoothing) {
    if (probs.rank() != 2 || probs.shape() != target.shape()) {
        throw DimensionError("dice_loss: probabilities " + shape_str(probs.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const Tensor inter = sum_rows(mul(probs, target));
    const Tensor num = add_scalar(scale(inter, 2.0), smoothing);
    const Tensor den = add_scalar(add(sum_rows(probs), sum_rows(target)), smoothing);
    return add_scalar(scale(mean(div(num, den)), -1.0), 1.0);
}

Tensor pixel_cross_entropy(const Tensor& probs, const Tensor& target) {
    if (probs.rank() != 2 || probs.shape() != target.shape()) {
        throw DimensionError("pixel_cross_entropy: probabilities " + shape_str(probs.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const Tensor p_true = clamp(sum_cols(mul(probs, target)), kProbabilityFloor, 1.0);
    return scale(mean(log(p_true)), -1.0);
}

PretrainLosses pretrain_step(const Sample& sample, const GraphBundle& bundle, const Backbone& backbone,
                             const GcnHead& head, std::span<const double> tau, const PretrainLossWeights& weights) {
    const CellGraph& g = bundle.graph;
    if (g.n != sample.nuclei()) {
        throw ContractError("pretrain_step: graph has " + std::to_string(g.n) + " nodes, sample '" + sample.id +
                            "' has " + std::to_string(sample.nuclei()) + " nuclei");
    }
    const BackboneOutput bo = backbone.extract(sample.image_tensor());
    const FeatureMap& f = bo.features;
    const std::size_t cf = f.channels();

    const Tensor z_nodes = bilinear_sample(f, g.centroids);
    const Tensor node_feats = concat_cols({z_nodes, positional_table(g.centroids, cf)});
    Tensor edge_feats;
    if (!g.edges.empty()) {
        std::vector<Point2> mids;
        mids.reserve(g.edges.size());
        for (const Edge& e : g.edges) mids.push_back(edge_midpoint(g.centroids[e.from], g.centroids[e.to]));
        edge_feats = bilinear_sample(f, mids);
    }
    const GcnOutput out = gcn_forward(node_feats, edge_feats, g.edges, head);

    PretrainLosses losses;
    losses.probs = softmax_rows(out.logits);
    const Tensor inst = node_loss(losses.probs, one_hot(sample.labels, head.config.classes), tau, weights.gamma);

    const Tensor seg_probs = channel_softmax(bo.seg_logits);
    const Tensor target = mask_one_hot(sample.mask, backbone.config.num_classes + 1);
    const Tensor dice = dice_loss(seg_probs, target);
    const Tensor ce = pixel_cross_entropy(seg_probs, target);

    losses.total = add(inst, add(scale(dice, weights.dice), scale(ce, weights.pixel_ce)));
    losses.instance_cls = inst.item();
    losses.dice = dice.item();
    losses.pixel_ce = ce.item();
    losses.total_value = losses.total.item();
    return losses;
}

} // namespace cgt
