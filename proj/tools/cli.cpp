#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "cgt/errors.hpp"
#include "cgt/graph.hpp"
#include "cgt/train.hpp"

namespace cgt::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct MissingPath : Error {
    using Error::Error;
};

std::string read_file(const fs::path& path, const char* what) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPath(std::string(what) + " not found: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
}

void require_dir(const fs::path& dir, const char* what) {
    if (!fs::is_directory(dir)) throw MissingPath(std::string(what) + " not found: " + dir.string());
}

ordered_json corpus_to_json(const CorpusConfig& c) {
    ordered_json j;
    j["image_size"] = c.image_size;
    j["nuclei_min"] = c.nuclei_min;
    j["nuclei_max"] = c.nuclei_max;
    j["num_classes"] = c.num_classes;
    ordered_json looks = ordered_json::array();
    for (const auto& a : c.appearance) {
        ordered_json l;
        l["color"] = a.color;
        l["radius_min"] = a.radius_min;
        l["radius_max"] = a.radius_max;
        looks.push_back(std::move(l));
    }
    j["appearance"] = std::move(looks);
    j["class_prior"] = c.class_prior;
    j["color_jitter"] = c.color_jitter;
    j["pixel_noise"] = c.pixel_noise;
    j["background"] = c.background;
    j["cluster_strength"] = c.cluster_strength;
    j["label_noise"] = c.label_noise;
    j["min_distance"] = c.min_distance;
    j["margin"] = c.margin;
    j["placement_attempts"] = c.placement_attempts;
    j["seed"] = c.seed;
    return j;
}

void corpus_from_json(const json& j, CorpusConfig& c) {
    if (!j.is_object()) throw ConfigError("gen config field 'corpus': expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        try {
            if (key == "image_size") c.image_size = v.get<std::size_t>();
            else if (key == "nuclei_min") c.nuclei_min = v.get<std::size_t>();
            else if (key == "nuclei_max") c.nuclei_max = v.get<std::size_t>();
            else if (key == "num_classes") c.num_classes = v.get<std::size_t>();
            else if (key == "appearance") {
                c.appearance.clear();
                for (const auto& a : v) {
                    ClassAppearance look;
                    look.color = a.at("color").get<std::array<double, 3>>();
                    look.radius_min = a.at("radius_min").get<double>();
                    look.radius_max = a.at("radius_max").get<double>();
                    c.appearance.push_back(look);
                }
            } else if (key == "class_prior") c.class_prior = v.get<std::vector<double>>();
            else if (key == "color_jitter") c.color_jitter = v.get<double>();
            else if (key == "pixel_noise") c.pixel_noise = v.get<double>();
            else if (key == "background") c.background = v.get<std::array<double, 3>>();
            else if (key == "cluster_strength") c.cluster_strength = v.get<double>();
            else if (key == "label_noise") c.label_noise = v.get<double>();
            else if (key == "min_distance") c.min_distance = v.get<double>();
            else if (key == "margin") c.margin = v.get<double>();
            else if (key == "placement_attempts") c.placement_attempts = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw ConfigError("gen config: unknown field 'corpus." + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("gen config field 'corpus." + key + "': " + e.what());
        }
    }
}

std::vector<std::size_t> parse_values(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v <= 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw ConfigError("field 'values': '" + item + "' is not a positive integer");
        }
    }
    if (out.empty()) throw ConfigError("field 'values' is empty");
    return out;
}

// ---- manifest ----------------------------------------------------------------

class Manifest {
public:
    Manifest(fs::path dir, std::string command, const std::vector<std::string>& args, bool force)
        : dir_(std::move(dir)) {
        const fs::path path = dir_ / "run_manifest.json";
        if (fs::exists(path) && !force) {
            throw ConfigError("refusing to overwrite " + path.string() + " (pass --force)");
        }
        fs::create_directories(dir_);
        j_["format"] = "cgt-manifest";
        j_["version"] = 1;
        j_["tool"] = "cgt";
        j_["tool_version"] = kToolVersion;
        j_["command"] = std::move(command);
        j_["args"] = args;
        j_["output_dir"] = dir_.string();
        j_["status"] = "running";
    }

    void set(const std::string& key, ordered_json value) { j_[key] = std::move(value); }
    void write() const { write_file(dir_ / "run_manifest.json", j_.dump(1) + "\n"); }
    void complete() {
        j_["status"] = "complete";
        write();
    }

private:
    fs::path dir_;
    ordered_json j_;
};

std::string corpus_digest_of(const CorpusSplit& s) {
    std::vector<Sample> all;
    all.reserve(s.train.size() + s.val.size() + s.test.size());
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
    return corpus_digest(all);
}

// ---- shared training flags -----------------------------------------------------

struct TrainFlags {
    std::string config;
    std::string corpus;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::size_t> k;
    std::optional<std::size_t> cl;
    std::optional<std::size_t> layers;
    bool force = false;

    void add_to(CLI::App& app, bool with_out = true) {
        app.add_option("--config", config, "Training config (JSON)");
        app.add_option("--corpus", corpus, "Corpus directory written by 'gen'")->required();
        if (with_out) app.add_option("--out", out, "Output directory")->required();
        app.add_option("--seed", seed, "Single seed (replaces the config's seed list)");
        app.add_option("--epochs", epochs, "Epochs of this stage");
        app.add_option("--lr", lr, "Learning rate of this stage");
        app.add_option("--k", k, "Edges per node of the k-NN cell graph");
        app.add_option("--cl", cl, "Link-marker width c_l");
        app.add_option("--layers", layers, "Transformer layers L");
        app.add_flag("--force", force, "Overwrite an existing run manifest");
    }

    enum class Stage { Pretrain, Finetune, Both };

    TrainConfig resolve(Stage stage) const {
        TrainConfig cfg;
        if (!config.empty()) cfg = config_from_json(read_file(config, "config file"));
        if (seed) cfg.seeds = {*seed};
        if (epochs) {
            if (stage != Stage::Finetune) cfg.pretrain_epochs = *epochs;
            if (stage != Stage::Pretrain) cfg.finetune_epochs = *epochs;
        }
        if (lr) {
            if (stage != Stage::Finetune) cfg.pretrain_lr = *lr;
            if (stage != Stage::Pretrain) cfg.finetune_lr = *lr;
        }
        if (k) cfg.k = *k;
        if (cl) cfg.marker_dim = *cl;
        if (layers) cfg.layers = *layers;
        cfg.validate();
        return cfg;
    }
};

ProgressFn printer(std::ostream& out) {
    return [&out](const CurvePoint& p) {
        char buf[200];
        if (p.stage == "pretrain") {
            std::snprintf(buf, sizeof(buf), "[pretrain seed %llu] epoch %zu train %.5f val %.5f\n",
                          static_cast<unsigned long long>(p.seed), p.epoch, p.train_loss, p.val_loss);
        } else {
            std::snprintf(buf, sizeof(buf), "[finetune seed %llu] epoch %zu train %.5f val %.5f F_avg %.4f\n",
                          static_cast<unsigned long long>(p.seed), p.epoch, p.train_loss, p.val_loss, p.val_f_avg);
        }
        out << buf << std::flush;
    };
}

ordered_json json_of(const std::string& text) { return ordered_json::parse(text); }

// ---- commands ------------------------------------------------------------------

int cmd_gen(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed, bool force,
            const std::vector<std::string>& args, std::ostream& out) {
    GenConfig g;
    if (!config.empty()) g = gen_config_from_json(read_file(config, "config file"));
    if (seed) {
        g.corpus.seed = *seed;
        g.split_seed = *seed;
    }
    g.corpus.validate();
    double total = 0.0;
    for (double f : g.fractions) total += f;
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("field 'fractions' must sum to 1 (got " + std::to_string(total) + ")");
    }
    Manifest m(out_dir, "gen", args, force);
    m.set("config", json_of(gen_config_to_json(g)));
    m.set("seeds", ordered_json::array({g.corpus.seed}));
    m.write();

    CorpusSplit split = split_corpus(generate_corpus(g.corpus, g.count), g.fractions, g.split_seed);
    for (const auto& w : split.warnings) out << "warning: " << w << "\n";
    const fs::path dir(out_dir);
    write_corpus(split.train, dir / "train");
    write_corpus(split.val, dir / "val");
    write_corpus(split.test, dir / "test");
    write_file(dir / "gen_config.json", gen_config_to_json(g, 1) + "\n");

    const auto freq = class_frequencies(split.train, g.corpus.num_classes);
    const auto tau = class_weights(freq);
    out << "split sizes: train " << split.train.size() << ", val " << split.val.size() << ", test "
        << split.test.size() << "\n";
    out << "class  count  tau\n";
    for (std::size_t c = 0; c < freq.size(); ++c) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%5zu  %5zu  %.4f\n", c, freq[c], tau[c]);
        out << buf;
    }
    const std::string digest = corpus_digest_of(split);
    out << "corpus digest " << digest << "\n";
    m.set("corpus_digest", digest);
    m.set("class_frequencies", freq);
    m.complete();
    return kExitOk;
}

int cmd_pretrain(const TrainFlags& f, const std::vector<std::string>& args, std::ostream& out) {
    const TrainConfig cfg = f.resolve(TrainFlags::Stage::Pretrain);
    const CorpusSplit data = read_corpus_splits(f.corpus);
    Manifest m(f.out, "pretrain", args, f.force);
    m.set("config", json_of(config_to_json(cfg)));
    m.set("corpus", f.corpus);
    m.set("corpus_digest", corpus_digest_of(data));
    m.set("seeds", cfg.seeds);
    m.write();
    const fs::path dir(f.out);
    std::vector<CurvePoint> curve;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
        const std::uint64_t seed = cfg.seeds[i];
        const PretrainResult r = run_pretrain(cfg, data.train, data.val, seed, printer(out));
        curve.insert(curve.end(), r.curve.begin(), r.curve.end());
        const std::string name = cfg.seeds.size() == 1 ? "pretrain.ckpt" : "pretrain_seed" + std::to_string(seed) + ".ckpt";
        save_checkpoint(r.checkpoint, dir / name);
        out << "best val loss " << r.best_val_loss << " at epoch " << r.best_epoch << " -> " << (dir / name).string()
            << "\n";
    }
    write_file(dir / "curve.jsonl", curve_to_jsonl(curve));
    m.complete();
    return kExitOk;
}

int cmd_train(const TrainFlags& f, const std::string& init, const std::vector<std::string>& args, std::ostream& out) {
    const TrainConfig cfg = f.resolve(TrainFlags::Stage::Finetune);
    std::optional<Checkpoint> init_ckpt;
    if (init != "none") {
        if (!fs::exists(init)) throw MissingPath("init checkpoint not found: " + init);
        init_ckpt = load_checkpoint(init);
    }
    const CorpusSplit data = read_corpus_splits(f.corpus);
    Manifest m(f.out, "train", args, f.force);
    m.set("config", json_of(config_to_json(cfg)));
    m.set("init", init);
    m.set("corpus", f.corpus);
    m.set("corpus_digest", corpus_digest_of(data));
    m.set("seeds", cfg.seeds);
    m.write();
    const fs::path dir(f.out);
    std::vector<CurvePoint> curve;
    ordered_json reports = ordered_json::array();
    for (const std::uint64_t seed : cfg.seeds) {
        const FinetuneResult r =
            run_finetune(cfg, data.train, data.val, seed, init_ckpt ? &*init_ckpt : nullptr, printer(out));
        curve.insert(curve.end(), r.curve.begin(), r.curve.end());
        const std::string suffix = cfg.seeds.size() == 1 ? "" : "_seed" + std::to_string(seed);
        save_checkpoint(r.checkpoint, dir / ("model" + suffix + ".ckpt"));
        if (!data.test.empty()) {
            const MetricsReport rep = evaluate(r.checkpoint, data.test, "test");
            write_file(dir / ("report_test" + suffix + ".json"), report_to_json(rep));
            out << report_summary(rep);
        }
    }
    write_file(dir / "curve.jsonl", curve_to_jsonl(curve));
    m.complete();
    return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus, const std::string& split_name,
             const std::string& out_dir, bool force, const std::vector<std::string>& args, std::ostream& out) {
    if (!fs::exists(ckpt_path)) throw MissingPath("checkpoint not found: " + ckpt_path);
    const fs::path split_dir = fs::path(corpus) / split_name;
    require_dir(split_dir, "split directory");
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const std::vector<Sample> samples = read_corpus(split_dir);
    Manifest m(out_dir, "eval", args, force);
    m.set("config", json_of(ckpt.config_json));
    m.set("checkpoint", ckpt_path);
    m.set("corpus", corpus);
    m.set("corpus_digest", corpus_digest(samples));
    m.set("seeds", ordered_json::array());
    m.write();
    const MetricsReport rep = evaluate(ckpt, samples, split_name);
    write_file(fs::path(out_dir) / ("report_" + split_name + ".json"), report_to_json(rep));
    out << report_summary(rep);
    m.complete();
    return kExitOk;
}

int cmd_graph(const std::string& corpus, const std::string& image, std::size_t k, std::size_t cl,
              const std::string& out_file, bool force, std::ostream& out) {
    require_dir(corpus, "corpus directory");
    std::optional<Sample> found;
    for (const char* split : {"train", "val", "test"}) {
        const fs::path dir = fs::path(corpus) / split;
        if (!fs::exists(dir / "index.json")) continue;
        const json index = json::parse(read_file(dir / "index.json", "split index"));
        for (const auto& id : index.at("samples")) {
            if (id.get<std::string>() == image) {
                for (Sample& s : read_corpus(dir)) {
                    if (s.id == image) found = std::move(s);
                }
                break;
            }
        }
        if (found) break;
    }
    if (!found) throw MissingPath("unknown sample '" + image + "' in " + corpus);
    if (fs::exists(out_file) && !force) throw ConfigError("refusing to overwrite " + out_file + " (pass --force)");
    const GraphBundle b = build_graph_bundle(found->centroids, k, cl);
    write_graph_dump(make_graph_dump(b, found->id), out_file);
    out << "graph of '" << found->id << "': n " << b.graph.n << ", k " << b.graph.k_requested << " (effective "
        << b.graph.k << "), " << b.graph.edges.size() << " edges -> " << out_file << "\n";
    return kExitOk;
}

int cmd_sweep(const TrainFlags& f, const std::string& axis_name, const std::string& values_text,
              std::optional<std::size_t> pretrain_epochs, const std::vector<std::string>& args, std::ostream& out) {
    TrainConfig cfg = f.resolve(TrainFlags::Stage::Finetune);
    if (pretrain_epochs) cfg.pretrain_epochs = *pretrain_epochs;
    const SweepAxis axis = parse_sweep_axis(axis_name);
    const auto values = parse_values(values_text);
    const CorpusSplit data = read_corpus_splits(f.corpus);
    Manifest m(f.out, "sweep", args, f.force);
    m.set("config", json_of(config_to_json(cfg)));
    m.set("axis", sweep_axis_name(axis));
    m.set("values", values);
    m.set("corpus", f.corpus);
    m.set("corpus_digest", corpus_digest_of(data));
    m.set("seeds", cfg.seeds);
    m.write();
    std::vector<CurvePoint> curve;
    const SweepTable t = sweep(cfg, axis, values, data, [&](const CurvePoint& p) {
        curve.push_back(p);
        printer(out)(p);
    });
    const fs::path dir(f.out);
    write_file(dir / "sweep.json", sweep_to_json(t));
    write_file(dir / "curve.jsonl", curve_to_jsonl(curve));
    out << sweep_axis_name(axis);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) out << "\tF" << c;
    out << "\tF_avg\n";
    for (const auto& row : t.rows) {
        out << row.value;
        char buf[32];
        for (double v : row.per_class) {
            std::snprintf(buf, sizeof(buf), "\t%.4f", v);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), "\t%.4f\n", row.f_avg);
        out << buf;
    }
    m.complete();
    return kExitOk;
}

} // namespace

std::string gen_config_to_json(const GenConfig& g, int indent) {
    ordered_json j;
    j["corpus"] = corpus_to_json(g.corpus);
    j["count"] = g.count;
    j["fractions"] = g.fractions;
    j["split_seed"] = g.split_seed;
    return j.dump(indent);
}

GenConfig gen_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("gen config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("gen config: expected a JSON object");
    GenConfig g;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        try {
            if (key == "corpus") corpus_from_json(it.value(), g.corpus);
            else if (key == "count") g.count = it.value().get<std::size_t>();
            else if (key == "fractions") g.fractions = it.value().get<std::array<double, 3>>();
            else if (key == "split_seed") g.split_seed = it.value().get<std::uint64_t>();
            else throw ConfigError("gen config: unknown field '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("gen config field '" + key + "': " + e.what());
        }
    }
    return g;
}

CorpusSplit read_corpus_splits(const fs::path& dir) {
    require_dir(dir, "corpus directory");
    CorpusSplit s;
    s.train = read_corpus(dir / "train");
    s.val = read_corpus(dir / "val");
    s.test = read_corpus(dir / "test");
    return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cell graph transformer for nucleus classification"};
    app.name("cgt");
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string gen_config, gen_out;
    std::optional<std::uint64_t> gen_seed;
    bool gen_force = false;
    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus with train/val/test splits");
    gen->add_option("--config", gen_config, "Generation config (JSON)");
    gen->add_option("--out", gen_out, "Corpus directory")->required();
    gen->add_option("--seed", gen_seed, "Corpus and split seed");
    gen->add_flag("--force", gen_force, "Overwrite an existing run manifest");

    TrainFlags pre_flags;
    auto* pre = app.add_subcommand("pretrain", "Topology-aware pretraining of the feature extractor");
    pre_flags.add_to(*pre);

    TrainFlags train_flags;
    std::string init = "none";
    auto* train = app.add_subcommand("train", "Finetune the cell graph transformer");
    train_flags.add_to(*train);
    train->add_option("--init", init, "Extractor initialisation: 'none' or a pretraining checkpoint");

    std::string eval_ckpt, eval_corpus, eval_split = "test", eval_out;
    bool eval_force = false;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    ev->add_option("--checkpoint", eval_ckpt, "Finetuned checkpoint")->required();
    ev->add_option("--corpus", eval_corpus, "Corpus directory")->required();
    ev->add_option("--split", eval_split, "Split name (train, val, test)");
    ev->add_option("--out", eval_out, "Output directory")->required();
    ev->add_flag("--force", eval_force, "Overwrite an existing run manifest");

    std::string graph_corpus, graph_image, graph_out;
    std::size_t graph_k = 4, graph_cl = 16;
    bool graph_force = false;
    auto* gr = app.add_subcommand("graph", "Dump the cell graph, spectrum and link markers of one sample");
    gr->add_option("--corpus", graph_corpus, "Corpus directory")->required();
    gr->add_option("--image", graph_image, "Sample id")->required();
    gr->add_option("--k", graph_k, "Edges per node");
    gr->add_option("--cl", graph_cl, "Link-marker width");
    gr->add_option("--out", graph_out, "Dump file")->required();
    gr->add_flag("--force", graph_force, "Overwrite an existing dump");

    TrainFlags sweep_flags;
    std::string axis, values;
    std::optional<std::size_t> sweep_pre_epochs;
    auto* sw = app.add_subcommand("sweep", "Layer-count (L) or edge-count (E) sweep");
    sweep_flags.add_to(*sw);
    sw->add_option("--axis", axis, "L or E")->required();
    sw->add_option("--values", values, "Comma-separated settings, e.g. 1,2,3,4")->required();
    sw->add_option("--pretrain-epochs", sweep_pre_epochs, "Pretraining epochs (--epochs sets finetuning)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front()) {
            err << sub->help();
        }
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_config, gen_out, gen_seed, gen_force, args, out);
        if (pre->parsed()) return cmd_pretrain(pre_flags, args, out);
        if (train->parsed()) return cmd_train(train_flags, init, args, out);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_corpus, eval_split, eval_out, eval_force, args, out);
        if (gr->parsed()) return cmd_graph(graph_corpus, graph_image, graph_k, graph_cl, graph_out, graph_force, out);
        if (sw->parsed()) return cmd_sweep(sweep_flags, axis, values, sweep_pre_epochs, args, out);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const MissingPath& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace cgt::cli
