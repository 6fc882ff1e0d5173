#pragma once

// Two-stage training schedule: topology-aware pretraining of the feature
// extractor with the GCN head, then end-to-end finetuning of the cell graph
// transformer; evaluation and the layer / edge-count sweeps.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgt/checkpoint.hpp"
#include "cgt/data.hpp"
#include "cgt/encoder.hpp"
#include "cgt/features.hpp"
#include "cgt/gcn.hpp"
#include "cgt/metrics.hpp"
#include "cgt/tokenizer.hpp"

namespace cgt {

struct TrainConfig {
    // model
    std::size_t num_classes = 3;
    std::array<std::size_t, 4> encoder_widths{8, 16, 16, 16};
    std::size_t feature_channels = 32;
    std::size_t model_width = 64;
    std::size_t heads = 4;
    std::size_t layers = 4;
    std::size_t marker_dim = 16;
    std::size_t k = 4;
    std::size_t gcn_hidden = 32;
    std::size_t gcn_layers = 2;
    // optimisation
    std::size_t pretrain_epochs = 150;
    double pretrain_lr = 1e-4;
    std::size_t finetune_epochs = 50;
    double finetune_lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_accum = 4;
    double gamma = 2.0;
    double lambda_dice = 1.0;
    double lambda_ce = 1.0;
    std::vector<std::uint64_t> seeds{0, 1, 2};

    /// Throws ConfigError naming the offending field.
    void validate() const;

    BackboneConfig backbone() const;
    TokenizerConfig tokenizer() const;
    EncoderConfig encoder() const;
    GcnConfig gcn() const;
};

/// JSON with every field materialised, stable key order.
std::string config_to_json(const TrainConfig& cfg, int indent = -1);
/// Missing fields keep their defaults; unknown fields and type errors throw
/// ConfigError naming the field.
TrainConfig config_from_json(const std::string& text, const TrainConfig& base = {});

/// Per-sample constants: graph, link markers and token side inputs.
struct PreparedSample {
    const Sample* sample = nullptr;
    GraphBundle bundle;
    GraphTokenInputs inputs;
    Tensor onehot;
};

std::vector<PreparedSample> prepare_samples(std::span<const Sample> samples, const TrainConfig& cfg);

struct CgtModel {
    Backbone backbone;
    Tokenizer tokenizer;
    CgtEncoder encoder;
    ClassifierHead head;

    static CgtModel create(const TrainConfig& cfg, Rng& rng);
    ParamSet params() const;
};

/// Node posteriors [n x B] for one prepared sample.
Tensor cgt_forward(const CgtModel& model, const PreparedSample& s, EncodeTrace* trace = nullptr);

struct PretrainModel {
    Backbone backbone;
    GcnHead gcn;

    static PretrainModel create(const TrainConfig& cfg, Rng& rng);
    ParamSet params() const;
};

struct CurvePoint {
    std::string stage;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_f_avg = 0.0;
    // pretraining components (train averages)
    double instance_cls = 0.0;
    double dice = 0.0;
    double pixel_ce = 0.0;
};

std::string curve_to_jsonl(std::span<const CurvePoint> curve);

using ProgressFn = std::function<void(const CurvePoint&)>;

struct PretrainResult {
    Checkpoint checkpoint; // best-validation-loss backbone.* and gcn.* tensors
    std::vector<CurvePoint> curve;
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
};

struct FinetuneResult {
    Checkpoint checkpoint; // best-validation-F_avg full model
    std::vector<CurvePoint> curve;
    double initial_val_loss = 0.0; // before any update
    double epoch1_val_loss = 0.0;
    double best_val_f_avg = 0.0;
    std::size_t best_epoch = 0;
};

/// Class weights tau_b from the label frequencies of `train`.
std::vector<double> train_class_weights(std::span<const Sample> train, std::size_t classes);

/// NaN or infinite loss throws NumericError reporting stage, step and seed.
PretrainResult run_pretrain(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> val,
                            std::uint64_t seed, const ProgressFn& progress = {});

/// `init` (optional) supplies backbone.* tensors; everything else starts
/// from the seed's random initialisation.
FinetuneResult run_finetune(const TrainConfig& cfg, std::span<const Sample> train, std::span<const Sample> val,
                            std::uint64_t seed, const Checkpoint* init = nullptr, const ProgressFn& progress = {});

/// Mean node loss over `split` (with tau from `tau`).
double validation_loss(const CgtModel& model, std::span<const PreparedSample> split, std::span<const double> tau,
                       double gamma);

/// Rebuilds the transformer model from a finetune checkpoint.
CgtModel model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out = nullptr);

/// Deterministic forward pass over `split`; throws ContractError("empty
/// evaluation split") when it has no samples.
MetricsReport evaluate(const Checkpoint& ckpt, std::span<const Sample> split, const std::string& split_name = "test");
MetricsReport evaluate_model(const CgtModel& model, const TrainConfig& cfg, std::span<const Sample> split,
                             const std::string& split_name = "test");

/// F-scores of the pretraining GCN classifier itself on `split`.
MetricsReport evaluate_gcn(const Checkpoint& pretrain_ckpt, std::span<const Sample> split,
                           const std::string& split_name = "test");

Checkpoint make_checkpoint(const TrainConfig& cfg, const ParamSet& params, std::uint64_t step, const Rng& rng);

enum class SweepAxis { Layers, Edges };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepRow {
    std::size_t value = 0;
    std::vector<double> per_class; // seed means
    double f_avg = 0.0;            // seed mean
    std::vector<double> seed_f_avg;
};

struct SweepTable {
    SweepAxis axis = SweepAxis::Layers;
    std::vector<SweepRow> rows;
};

/// Layers: full pretrain + finetune per setting, test F-scores of the
/// transformer. Edges: pretraining with k = E, test F-scores of the GCN.
/// Each setting runs every seed in cfg.seeds.
SweepTable sweep(const TrainConfig& cfg, SweepAxis axis, std::span<const std::size_t> values, const CorpusSplit& data,
                 const ProgressFn& progress = {});

std::string sweep_to_json(const SweepTable& table);

} // namespace cgt
