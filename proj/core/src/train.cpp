#include "cgt/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "cgt/errors.hpp"

namespace cgt {

using nlohmann::json;
using nlohmann::ordered_json;

// ---- configuration ---------------------------------------------------------

void TrainConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("train config field '" + field + "': " + why);
    };
    if (num_classes == 0) fail("num_classes", "must be positive");
    if (k == 0) fail("k", "must be >= 1");
    if (marker_dim == 0) fail("cl", "must be >= 1");
    if (layers == 0) fail("layers", "must be >= 1");
    if (batch_accum == 0) fail("batch_accum", "must be >= 1");
    if (!(pretrain_lr > 0.0)) fail("pretrain_lr", "must be positive");
    if (!(finetune_lr > 0.0)) fail("finetune_lr", "must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps", "must be positive");
    if (!(gamma >= 0.0)) fail("gamma", "must be non-negative");
    if (!(lambda_dice >= 0.0)) fail("lambda_dice", "must be non-negative");
    if (!(lambda_ce >= 0.0)) fail("lambda_ce", "must be non-negative");
    if (seeds.empty()) fail("seeds", "needs at least one seed");
    backbone().validate();
    tokenizer().validate();
    encoder().validate();
    gcn().validate();
}

BackboneConfig TrainConfig::backbone() const {
    BackboneConfig b;
    b.encoder_widths = encoder_widths;
    b.feature_channels = feature_channels;
    b.num_classes = num_classes;
    return b;
}

TokenizerConfig TrainConfig::tokenizer() const {
    TokenizerConfig t;
    t.feature_channels = feature_channels;
    t.model_width = model_width;
    t.marker_dim = marker_dim;
    return t;
}

EncoderConfig TrainConfig::encoder() const {
    EncoderConfig e;
    e.token_width = 3 * model_width;
    e.width = model_width;
    e.layers = layers;
    e.heads = heads;
    return e;
}

GcnConfig TrainConfig::gcn() const {
    GcnConfig g;
    g.feature_channels = feature_channels;
    g.hidden = gcn_hidden;
    g.classes = num_classes;
    g.layers = gcn_layers;
    return g;
}

std::string config_to_json(const TrainConfig& c, int indent) {
    ordered_json j;
    j["num_classes"] = c.num_classes;
    j["encoder_widths"] = c.encoder_widths;
    j["feature_channels"] = c.feature_channels;
    j["model_width"] = c.model_width;
    j["heads"] = c.heads;
    j["layers"] = c.layers;
    j["marker_dim"] = c.marker_dim;
    j["k"] = c.k;
    j["gcn_hidden"] = c.gcn_hidden;
    j["gcn_layers"] = c.gcn_layers;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["pretrain_lr"] = c.pretrain_lr;
    j["finetune_epochs"] = c.finetune_epochs;
    j["finetune_lr"] = c.finetune_lr;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["batch_accum"] = c.batch_accum;
    j["gamma"] = c.gamma;
    j["lambda_dice"] = c.lambda_dice;
    j["lambda_ce"] = c.lambda_ce;
    j["seeds"] = c.seeds;
    return j.dump(indent);
}

TrainConfig config_from_json(const std::string& text, const TrainConfig& base) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("train config: expected a JSON object");
    TrainConfig c = base;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        try {
            if (key == "num_classes") c.num_classes = v.get<std::size_t>();
            else if (key == "encoder_widths") c.encoder_widths = v.get<std::array<std::size_t, 4>>();
            else if (key == "feature_channels") c.feature_channels = v.get<std::size_t>();
            else if (key == "model_width") c.model_width = v.get<std::size_t>();
            else if (key == "heads") c.heads = v.get<std::size_t>();
            else if (key == "layers") c.layers = v.get<std::size_t>();
            else if (key == "marker_dim") c.marker_dim = v.get<std::size_t>();
            else if (key == "k") c.k = v.get<std::size_t>();
            else if (key == "gcn_hidden") c.gcn_hidden = v.get<std::size_t>();
            else if (key == "gcn_layers") c.gcn_layers = v.get<std::size_t>();
            else if (key == "pretrain_epochs") c.pretrain_epochs = v.get<std::size_t>();
            else if (key == "pretrain_lr") c.pretrain_lr = v.get<double>();
            else if (key == "finetune_epochs") c.finetune_epochs = v.get<std::size_t>();
            else if (key == "finetune_lr") c.finetune_lr = v.get<double>();
            else if (key == "beta1") c.beta1 = v.get<double>();
            else if (key == "beta2") c.beta2 = v.get<double>();
            else if (key == "adam_eps") c.adam_eps = v.get<double>();
            else if (key == "batch_accum") c.batch_accum = v.get<std::size_t>();
            else if (key == "gamma") c.gamma = v.get<double>();
            else if (key == "lambda_dice") c.lambda_dice = v.get<double>();
            else if (key == "lambda_ce") c.lambda_ce = v.get<double>();
            else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
            else throw ConfigError("train config: unknown field '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("train config field '" + key + "': " + e.what());
        }
    }
    return c;
}

// ---- models ----------------------------------------------------------------

std::vector<PreparedSample> prepare_samples(std::span<const Sample> samples, const TrainConfig& cfg) {
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        PreparedSample p;
        p.sample = &s;
        p.bundle = build_graph_bundle(s.centroids, cfg.k, cfg.marker_dim);
        p.inputs = prepare_token_inputs(p.bundle.graph, p.bundle.markers, cfg.feature_channels);
        p.onehot = one_hot(s.labels, cfg.num_classes);
        out.push_back(std::move(p));
    }
    return out;
}

CgtModel CgtModel::create(const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    CgtModel m;
    m.backbone = Backbone::create(cfg.backbone(), rng);
    m.tokenizer = Tokenizer::create(cfg.tokenizer(), rng);
    m.encoder = CgtEncoder::create(cfg.encoder(), rng);
    m.head = ClassifierHead::create(cfg.model_width, cfg.num_classes, rng);
    return m;
}

ParamSet CgtModel::params() const {
    ParamSet ps = backbone.params();
    ps.append(tokenizer.params());
    ps.append(encoder.params());
    ps.append(head.params());
    return ps;
}

Tensor cgt_forward(const CgtModel& model, const PreparedSample& s, EncodeTrace* trace) {
    const BackboneOutput bo = model.backbone.extract(s.sample->image_tensor());
    const TokenSet tokens = tokenize(s.bundle.graph, bo.features, s.inputs, model.tokenizer);
    const Tensor encoded = encode(tokens.stacked(), model.encoder, trace);
    return classify(encoded, tokens.node_count(), model.head);
}

PretrainModel PretrainModel::create(const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    PretrainModel m;
    m.backbone = Backbone::create(cfg.backbone(), rng);
    m.gcn = GcnHead::create(cfg.gcn(), rng);
    return m;
}

ParamSet PretrainModel::params() const {
    ParamSet ps = backbone.params();
    ps.append(gcn.params());
    return ps;
}

// ---- shared helpers ----------------------------------------------------------

std::vector<double> train_class_weights(std::span<const Sample> train, std::size_t classes) {
    const auto freq = class_frequencies(train, classes);
    return class_weights(freq);
}

Checkpoint make_checkpoint(const TrainConfig& cfg, const ParamSet& params, std::uint64_t step, const Rng& rng) {
    Checkpoint c;
    c.config_json = config_to_json(cfg);
    c.step = step;
    c.rng_state = rng_to_string(rng);
    c.tensors = capture_tensors(params);
    return c;
}

std::string curve_to_jsonl(std::span<const CurvePoint> curve) {
    std::string out;
    for (const CurvePoint& p : curve) {
        ordered_json j;
        j["stage"] = p.stage;
        j["seed"] = p.seed;
        j["epoch"] = p.epoch;
        j["step"] = p.step;
        j["train_loss"] = p.train_loss;
        j["val_loss"] = p.val_loss;
        if (p.stage == "pretrain") {
            j["instance_cls"] = p.instance_cls;
            j["dice"] = p.dice;
            j["pixel_ce"] = p.pixel_ce;
        } else {
            j["val_f_avg"] = p.val_f_avg;
        }
        out += j.dump() + "\n";
    }
    return out;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5851f42d4c957f2dULL;

void check_finite(double loss, const char* stage, std::size_t step, std::uint64_t seed, const std::string& sample) {
    if (!std::isfinite(loss)) {
        throw NumericError(std::string(stage) + ": non-finite loss at step " + std::to_string(step) + " (seed " +
                           std::to_string(seed) + ", sample '" + sample + "')");
    }
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    return order;
}

// One pass over `count` samples with gradient accumulation; returns the mean loss.
template <typename LossFn>
double train_epoch(std::size_t count, std::size_t accum, const ParamSet& params, Adam& adam, Rng& order_rng,
                   LossFn&& loss_of) {
    const auto order = shuffled(count, order_rng);
    double total = 0.0;
    std::size_t pending = 0;
    params.zero_grad();
    for (std::size_t r = 0; r < count; ++r) {
        Tensor loss = loss_of(order[r]);
        total += loss.item();
        backward(loss);
        if (++pending == accum || r + 1 == count) {
            params.scale_grad(1.0 / static_cast<double>(pending));
            adam.step();
            params.zero_grad();
            pending = 0;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

AdamConfig adam_config(const TrainConfig& cfg, double lr) {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = cfg.beta1;
    a.beta2 = cfg.beta2;
    a.eps = cfg.adam_eps;
    return a;
}

struct PretrainEval {
    double total = 0.0;
    double instance_cls = 0.0;
    double dice = 0.0;
    double pixel_ce = 0.0;
};

PretrainEval pretrain_eval(const PretrainModel& m, std::span<const PreparedSample> split, std::span<const double> tau,
                           const PretrainLossWeights& w) {
    NoGradGuard guard;
    PretrainEval ev;
    for (const auto& s : split) {
        const PretrainLosses l = pretrain_step(*s.sample, s.bundle, m.backbone, m.gcn, tau, w);
        ev.total += l.total_value;
        ev.instance_cls += l.instance_cls;
        ev.dice += l.dice;
        ev.pixel_ce += l.pixel_ce;
    }
    if (!split.empty()) {
        const double inv = 1.0 / static_cast<double>(split.size());
        ev.total *= inv;
        ev.instance_cls *= inv;
        ev.dice *= inv;
        ev.pixel_ce *= inv;
    }
    return ev;
}

std::vector<int> argmax_rows(const Tensor& probs) {
    const std::size_t n = probs.dim(0), b = probs.dim(1);
    const auto v = probs.values();
    std::vector<int> out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < b; ++c) {
            if (v[i * b + c] > v[i * b + best]) best = c;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

struct SplitScore {
    double loss = 0.0;
    ConfusionMatrix confusion;
};

SplitScore score_split(const CgtModel& model, std::span<const PreparedSample> split, std::span<const double> tau,
                       double gamma, std::size_t classes) {
    NoGradGuard guard;
    SplitScore out{0.0, ConfusionMatrix(classes)};
    for (const auto& s : split) {
        const Tensor probs = cgt_forward(model, s);
        out.loss += node_loss(probs, s.onehot, tau, gamma).item();
        const auto pred = argmax_rows(probs);
        for (std::size_t i = 0; i < pred.size(); ++i) out.confusion.add(s.sample->labels[i], pred[i]);
    }
    if (!split.empty()) out.loss /= static_cast<double>(split.size());
    return out;
}

} // namespace

// ---- stages ------------------------------------------------------------------

PretrainResult run_pretrain(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> val,
                            std::uint64_t seed, const ProgressFn& progress) {
    cfg.validate();
    if (train.empty()) throw ContractError("run_pretrain: empty training split");
    Rng rng(seed);
    PretrainModel model = PretrainModel::create(cfg, rng);
    Rng order_rng(seed ^ kShuffleSalt);
    const ParamSet params = model.params();
    Adam adam(params, adam_config(cfg, cfg.pretrain_lr));

    const auto train_p = prepare_samples(train, cfg);
    const auto val_p = prepare_samples(val.empty() ? train : val, cfg);
    const auto tau = train_class_weights(train, cfg.num_classes);
    const PretrainLossWeights w{cfg.lambda_dice, cfg.lambda_ce, cfg.gamma};

    PretrainResult res;
    res.checkpoint = make_checkpoint(cfg, params, 0, rng);
    res.best_val_loss = pretrain_eval(model, val_p, tau, w).total;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
        PretrainEval acc;
        const double train_loss =
            train_epoch(train_p.size(), cfg.batch_accum, params, adam, order_rng, [&](std::size_t idx) {
                const auto& s = train_p[idx];
                PretrainLosses l = pretrain_step(*s.sample, s.bundle, model.backbone, model.gcn, tau, w);
                check_finite(l.total_value, "pretrain", step, seed, s.sample->id);
                ++step;
                acc.instance_cls += l.instance_cls;
                acc.dice += l.dice;
                acc.pixel_ce += l.pixel_ce;
                return l.total;
            });
        const PretrainEval ev = pretrain_eval(model, val_p, tau, w);
        check_finite(ev.total, "pretrain validation", step, seed, "<val>");
        CurvePoint pt;
        pt.stage = "pretrain";
        pt.seed = seed;
        pt.epoch = epoch;
        pt.step = adam.steps();
        pt.train_loss = train_loss;
        pt.val_loss = ev.total;
        const double inv = 1.0 / static_cast<double>(train_p.size());
        pt.instance_cls = acc.instance_cls * inv;
        pt.dice = acc.dice * inv;
        pt.pixel_ce = acc.pixel_ce * inv;
        res.curve.push_back(pt);
        if (progress) progress(pt);
        if (ev.total < res.best_val_loss) {
            res.best_val_loss = ev.total;
            res.best_epoch = epoch;
            res.checkpoint = make_checkpoint(cfg, params, adam.steps(), rng);
        }
    }
    return res;
}

double validation_loss(const CgtModel& model, std::span<const PreparedSample> split, std::span<const double> tau,
                       double gamma) {
    NoGradGuard guard;
    double total = 0.0;
    for (const auto& s : split) total += node_loss(cgt_forward(model, s), s.onehot, tau, gamma).item();
    return split.empty() ? 0.0 : total / static_cast<double>(split.size());
}

FinetuneResult run_finetune(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> val,
                            std::uint64_t seed, const Checkpoint* init, const ProgressFn& progress) {
    cfg.validate();
    if (train.empty()) throw ContractError("run_finetune: empty training split");
    Rng rng(seed);
    CgtModel model = CgtModel::create(cfg, rng);
    const ParamSet params = model.params();
    if (init) restore_tensors(*init, params, "backbone.");
    Rng order_rng(seed ^ kShuffleSalt);
    Adam adam(params, adam_config(cfg, cfg.finetune_lr));

    const auto train_p = prepare_samples(train, cfg);
    const auto val_p = prepare_samples(val.empty() ? train : val, cfg);
    const auto tau = train_class_weights(train, cfg.num_classes);

    FinetuneResult res;
    const SplitScore initial = score_split(model, val_p, tau, cfg.gamma, cfg.num_classes);
    res.initial_val_loss = initial.loss;
    res.best_val_f_avg = fscores(initial.confusion).f_avg;
    res.checkpoint = make_checkpoint(cfg, params, 0, rng);
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
        const double train_loss =
            train_epoch(train_p.size(), cfg.batch_accum, params, adam, order_rng, [&](std::size_t idx) {
                const auto& s = train_p[idx];
                Tensor loss = node_loss(cgt_forward(model, s), s.onehot, tau, cfg.gamma);
                check_finite(loss.item(), "finetune", step, seed, s.sample->id);
                ++step;
                return loss;
            });
        const SplitScore sc = score_split(model, val_p, tau, cfg.gamma, cfg.num_classes);
        check_finite(sc.loss, "finetune validation", step, seed, "<val>");
        CurvePoint pt;
        pt.stage = "finetune";
        pt.seed = seed;
        pt.epoch = epoch;
        pt.step = adam.steps();
        pt.train_loss = train_loss;
        pt.val_loss = sc.loss;
        pt.val_f_avg = fscores(sc.confusion).f_avg;
        res.curve.push_back(pt);
        if (progress) progress(pt);
        if (epoch == 1) res.epoch1_val_loss = sc.loss;
        if (pt.val_f_avg > res.best_val_f_avg || res.best_epoch == 0) {
            res.best_val_f_avg = pt.val_f_avg;
            res.best_epoch = epoch;
            res.checkpoint = make_checkpoint(cfg, params, adam.steps(), rng);
        }
    }
    return res;
}

// ---- evaluation --------------------------------------------------------------

CgtModel model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out) {
    const TrainConfig cfg = config_from_json(ckpt.config_json);
    Rng rng(0);
    CgtModel model = CgtModel::create(cfg, rng);
    restore_tensors(ckpt, model.params());
    if (cfg_out) *cfg_out = cfg;
    return model;
}

MetricsReport evaluate_model(const CgtModel& model, const TrainConfig& cfg, std::span<const Sample> split,
                             const std::string& split_name) {
    if (split.empty()) throw ContractError("empty evaluation split");
    const auto prepared = prepare_samples(split, cfg);
    const std::vector<double> tau(cfg.num_classes, 1.0);
    const SplitScore sc = score_split(model, prepared, tau, cfg.gamma, cfg.num_classes);
    MetricsReport r;
    r.split = split_name;
    r.samples = split.size();
    r.confusion = sc.confusion;
    r.scores = fscores(sc.confusion);
    r.loss = sc.loss;
    return r;
}

MetricsReport evaluate(const Checkpoint& ckpt, std::span<const Sample> split, const std::string& split_name) {
    if (split.empty()) throw ContractError("empty evaluation split");
    TrainConfig cfg;
    const CgtModel model = model_from_checkpoint(ckpt, &cfg);
    return evaluate_model(model, cfg, split, split_name);
}

MetricsReport evaluate_gcn(const Checkpoint& ckpt, std::span<const Sample> split, const std::string& split_name) {
    if (split.empty()) throw ContractError("empty evaluation split");
    const TrainConfig cfg = config_from_json(ckpt.config_json);
    Rng rng(0);
    PretrainModel model = PretrainModel::create(cfg, rng);
    restore_tensors(ckpt, model.params());
    const auto prepared = prepare_samples(split, cfg);
    const std::vector<double> tau(cfg.num_classes, 1.0);
    const PretrainLossWeights w{cfg.lambda_dice, cfg.lambda_ce, cfg.gamma};
    NoGradGuard guard;
    MetricsReport r;
    r.split = split_name;
    r.samples = split.size();
    r.confusion = ConfusionMatrix(cfg.num_classes);
    for (const auto& s : prepared) {
        const PretrainLosses l = pretrain_step(*s.sample, s.bundle, model.backbone, model.gcn, tau, w);
        r.loss += l.instance_cls;
        const auto pred = argmax_rows(l.probs);
        for (std::size_t i = 0; i < pred.size(); ++i) r.confusion.add(s.sample->labels[i], pred[i]);
    }
    r.loss /= static_cast<double>(prepared.size());
    r.scores = fscores(r.confusion);
    return r;
}

// ---- sweeps ------------------------------------------------------------------

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "L" || name == "layers") return SweepAxis::Layers;
    if (name == "E" || name == "edges") return SweepAxis::Edges;
    throw ConfigError("sweep axis '" + name + "' is not one of L, E");
}

std::string sweep_axis_name(SweepAxis axis) { return axis == SweepAxis::Layers ? "L" : "E"; }

SweepTable sweep(const TrainConfig& base, SweepAxis axis, std::span<const std::size_t> values, const CorpusSplit& data,
                 const ProgressFn& progress) {
    base.validate();
    if (values.empty()) throw ConfigError("sweep: field 'values' is empty");
    SweepTable table;
    table.axis = axis;
    for (std::size_t v : values) {
        TrainConfig cfg = base;
        if (axis == SweepAxis::Layers) cfg.layers = v;
        else cfg.k = v;
        cfg.validate();
        SweepRow row;
        row.value = v;
        row.per_class.assign(cfg.num_classes, 0.0);
        for (std::uint64_t seed : cfg.seeds) {
            const PretrainResult pre = run_pretrain(cfg, data.train, data.val, seed, progress);
            MetricsReport rep;
            if (axis == SweepAxis::Layers) {
                const FinetuneResult fin = run_finetune(cfg, data.train, data.val, seed, &pre.checkpoint, progress);
                rep = evaluate(fin.checkpoint, data.test);
            } else {
                rep = evaluate_gcn(pre.checkpoint, data.test);
            }
            for (std::size_t c = 0; c < cfg.num_classes; ++c) row.per_class[c] += rep.scores.per_class[c];
            row.seed_f_avg.push_back(rep.scores.f_avg);
            row.f_avg += rep.scores.f_avg;
        }
        const double inv = 1.0 / static_cast<double>(cfg.seeds.size());
        for (double& f : row.per_class) f *= inv;
        row.f_avg *= inv;
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string sweep_to_json(const SweepTable& t) {
    ordered_json j;
    j["format"] = "cgt-sweep";
    j["version"] = 1;
    j["axis"] = sweep_axis_name(t.axis);
    ordered_json rows = ordered_json::array();
    for (const SweepRow& r : t.rows) {
        ordered_json row;
        row["value"] = r.value;
        row["f_per_class"] = r.per_class;
        row["f_avg"] = r.f_avg;
        row["seed_f_avg"] = r.seed_f_avg;
        rows.push_back(std::move(row));
    }
    j["rows"] = std::move(rows);
    return j.dump(1) + "\n";
}

} // namespace cgt
