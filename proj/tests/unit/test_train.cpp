#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cgt/errors.hpp"
#include "cgt/train.hpp"
#include "oracles.hpp"

using namespace cgt;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.encoder_widths = {4, 4, 4, 4};
    c.feature_channels = 8;
    c.model_width = 16;
    c.heads = 2;
    c.layers = 1;
    c.marker_dim = 4;
    c.gcn_hidden = 8;
    c.pretrain_epochs = 2;
    c.pretrain_lr = 1e-3;
    c.finetune_epochs = 2;
    c.finetune_lr = 1e-3;
    c.seeds = {0};
    return c;
}

std::vector<Sample> tiny_corpus(std::size_t n, std::uint64_t seed = 1) {
    CorpusConfig c;
    c.image_size = 32;
    c.nuclei_min = 5;
    c.nuclei_max = 10;
    c.seed = seed;
    return generate_corpus(c, n, 1);
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

} // namespace

TEST(Adam, MatchesScalarRecursion) {
    Tensor p = Tensor::scalar(0.7, true);
    ParamSet ps;
    ps.add("p", p);
    AdamConfig ac;
    ac.lr = 0.05;
    Adam adam(ps, ac);
    double x = 0.7, m = 0.0, v = 0.0;
    for (int t = 1; t <= 10; ++t) {
        ps.zero_grad();
        // loss = (p - 2)^2 * (p + 1)
        const Tensor loss = mul(pow(add_scalar(p, -2.0), 2.0), add_scalar(p, 1.0));
        backward(loss);
        adam.step();
        const double g = 2 * (x - 2) * (x + 1) + (x - 2) * (x - 2);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
        EXPECT_NEAR(p.item(), x, 1e-12) << "step " << t;
    }
}

TEST(Config, JsonRoundTripAndUnknownField) {
    const TrainConfig c = tiny_config();
    const TrainConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_THROW(config_from_json(R"({"modle_width": 8})"), ConfigError);
    try {
        config_from_json(R"({"heads": 3, "model_width": 16})").validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
    }
    const TrainConfig d;
    EXPECT_EQ(d.pretrain_epochs, 150u);
    EXPECT_EQ(d.finetune_epochs, 50u);
    EXPECT_EQ(d.pretrain_lr, 1e-4);
    EXPECT_EQ(d.finetune_lr, 1e-5);
    EXPECT_EQ(d.k, 4u);
    EXPECT_EQ(d.marker_dim, 16u);
    EXPECT_EQ(d.layers, 4u);
    EXPECT_EQ(d.seeds.size(), 3u);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    cgt::testing::TempDir dir("ckpt");
    Rng rng(4);
    const TrainConfig cfg = tiny_config();
    const CgtModel model = CgtModel::create(cfg, rng);
    const Checkpoint c = make_checkpoint(cfg, model.params(), 17, rng);
    save_checkpoint(c, dir / "a.ckpt");
    const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(loaded, c);
    save_checkpoint(loaded, dir / "b.ckpt");
    EXPECT_EQ(read_bytes(dir / "a.ckpt"), read_bytes(dir / "b.ckpt"));
    Rng restored = rng_from_string(loaded.rng_state);
    EXPECT_EQ(restored(), rng());

    const std::string bytes = checkpoint_to_bytes(c);
    EXPECT_THROW(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 3)), ParseError);
    EXPECT_THROW(checkpoint_from_bytes(bytes + "x"), ParseError);
}

TEST(Checkpoint, MismatchedConfigListsShapes) {
    Rng rng(5);
    TrainConfig a = tiny_config();
    const CgtModel m = CgtModel::create(a, rng);
    const Checkpoint c = make_checkpoint(a, m.params(), 0, rng);
    TrainConfig b = a;
    b.model_width = 8;
    const CgtModel other = CgtModel::create(b, rng);
    try {
        restore_tensors(c, other.params());
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("tokenizer"), std::string::npos) << msg;
        EXPECT_NE(msg.find("16"), std::string::npos) << msg;
        EXPECT_NE(msg.find("8"), std::string::npos) << msg;
    }
}

TEST(Pretrain, ZeroEpochsKeepsInitialisation) {
    TrainConfig cfg = tiny_config();
    cfg.pretrain_epochs = 0;
    const auto data = tiny_corpus(4);
    const PretrainResult r = run_pretrain(cfg, data, data, 9);
    Rng rng(9);
    const PretrainModel init = PretrainModel::create(cfg, rng);
    EXPECT_EQ(r.checkpoint.tensors, capture_tensors(init.params()));
    EXPECT_TRUE(r.curve.empty());
}

TEST(Pretrain, DeterministicAndDecreasing) {
    TrainConfig cfg = tiny_config();
    cfg.pretrain_epochs = 5;
    const auto data = tiny_corpus(50);
    const std::span<const Sample> train(data.data(), 40), val(data.data() + 40, 10);
    const PretrainResult a = run_pretrain(cfg, train, val, 3);
    ASSERT_EQ(a.curve.size(), 5u);
    EXPECT_LT(a.curve.back().train_loss, a.curve.front().train_loss);
    const PretrainResult b = run_pretrain(cfg, train, val, 3);
    EXPECT_EQ(checkpoint_to_bytes(a.checkpoint), checkpoint_to_bytes(b.checkpoint));
    EXPECT_THROW(run_pretrain(cfg, {}, val, 3), ContractError);
}

TEST(Finetune, DeterministicAndInitialisedFromPretraining) {
    const TrainConfig cfg = tiny_config();
    const auto data = tiny_corpus(12);
    const std::span<const Sample> train(data.data(), 8), val(data.data() + 8, 4);
    const PretrainResult pre = run_pretrain(cfg, train, val, 1);
    const FinetuneResult a = run_finetune(cfg, train, val, 1, &pre.checkpoint);
    const FinetuneResult b = run_finetune(cfg, train, val, 1, &pre.checkpoint);
    EXPECT_EQ(checkpoint_to_bytes(a.checkpoint), checkpoint_to_bytes(b.checkpoint));
    EXPECT_EQ(evaluate(a.checkpoint, val).scores.f_avg, evaluate(b.checkpoint, val).scores.f_avg);

    TrainConfig zero = cfg;
    zero.finetune_epochs = 0;
    const FinetuneResult z = run_finetune(zero, train, val, 1, &pre.checkpoint);
    const CgtModel restored = model_from_checkpoint(z.checkpoint);
    const ParamSet bb = restored.backbone.params();
    for (const auto& p : bb.items()) {
        const StoredTensor* want = pre.checkpoint.find(p.name);
        ASSERT_NE(want, nullptr) << p.name;
        EXPECT_TRUE(std::equal(want->values.begin(), want->values.end(), p.tensor.values().begin())) << p.name;
    }
}

TEST(Evaluate, EmptySplitAndRepeatability) {
    const TrainConfig cfg = tiny_config();
    Rng rng(2);
    const CgtModel m = CgtModel::create(cfg, rng);
    const Checkpoint c = make_checkpoint(cfg, m.params(), 0, rng);
    try {
        evaluate(c, {});
        FAIL();
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("empty evaluation split"), std::string::npos);
    }
    const auto data = tiny_corpus(5);
    EXPECT_EQ(report_to_json(evaluate(c, data)), report_to_json(evaluate(c, data)));
}

TEST(Finetune, OverfitsOneSample) {
    // A sample holding every class, so no F-score is pinned at zero.
    CorpusConfig cc;
    cc.image_size = 32;
    cc.nuclei_min = 8;
    cc.nuclei_max = 10;
    cc.cluster_strength = 0.0;
    Sample s;
    for (std::uint64_t seed = 0;; ++seed) {
        s = generate_sample(cc, seed, "one");
        const auto f = class_frequencies(std::span<const Sample>(&s, 1), 3);
        if (f[0] && f[1] && f[2]) break;
    }
    TrainConfig cfg = tiny_config();
    cfg.batch_accum = 1;
    cfg.finetune_epochs = 150;
    cfg.finetune_lr = 5e-3;
    const std::vector<Sample> one{s};
    const FinetuneResult r = run_finetune(cfg, one, {}, 0);
    EXPECT_EQ(evaluate(r.checkpoint, one, "train").scores.f_avg, 1.0);
}

TEST(Finetune, LossTrendsDownOn200Samples) {
    TrainConfig cfg = tiny_config();
    cfg.finetune_epochs = 10;
    const auto data = tiny_corpus(220, 5);
    const std::span<const Sample> train(data.data(), 200), val(data.data() + 200, 20);
    const FinetuneResult r = run_finetune(cfg, train, val, 0);
    ASSERT_EQ(r.curve.size(), 10u);
    int upticks = 0;
    for (std::size_t i = 1; i < r.curve.size(); ++i) upticks += r.curve[i].train_loss > r.curve[i - 1].train_loss;
    EXPECT_LE(upticks, 2);
    EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
}

TEST(Sweep, SingleSettingEqualsSingleRun) {
    TrainConfig cfg = tiny_config();
    const auto data = tiny_corpus(12, 8);
    const CorpusSplit split = split_corpus(data, {0.5, 0.25, 0.25}, 0);
    const std::vector<std::size_t> values{1};
    const SweepTable t = sweep(cfg, SweepAxis::Layers, values, split);
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.rows[0].per_class.size(), 3u);

    const PretrainResult pre = run_pretrain(cfg, split.train, split.val, 0);
    const FinetuneResult fin = run_finetune(cfg, split.train, split.val, 0, &pre.checkpoint);
    EXPECT_EQ(t.rows[0].f_avg, evaluate(fin.checkpoint, split.test).scores.f_avg);

    const std::vector<std::size_t> edges{2, 4};
    const SweepTable e = sweep(cfg, SweepAxis::Edges, edges, split);
    ASSERT_EQ(e.rows.size(), 2u);
    std::size_t cells = 0;
    for (const auto& row : e.rows) cells += row.per_class.size() + 1;
    EXPECT_EQ(cells, 2u * (3 + 1));
    EXPECT_EQ(parse_sweep_axis("E"), SweepAxis::Edges);
    EXPECT_EQ(parse_sweep_axis("layers"), SweepAxis::Layers);
    EXPECT_THROW(parse_sweep_axis("depth"), ConfigError);
}
