#include "cgt/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cgt/errors.hpp"
#include "cgt/image_io.hpp"

namespace cgt {

using nlohmann::json;
using nlohmann::ordered_json;

Tensor Sample::image_tensor() const { return Tensor(Shape{3, height, width}, image); }

std::vector<ClassAppearance> CorpusConfig::default_appearance() {
    return {
        ClassAppearance{{0.55, 0.25, 0.55}, 2.6, 3.2},
        ClassAppearance{{0.25, 0.15, 0.45}, 1.8, 2.2},
        ClassAppearance{{0.72, 0.38, 0.40}, 2.1, 2.6},
    };
}

void CorpusConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("corpus config field '" + field + "': " + why);
    };
    if (image_size < 8 || image_size % 4 != 0) fail("image_size", "must be a multiple of 4 and >= 8");
    if (nuclei_min == 0 || nuclei_min > nuclei_max) fail("nuclei_min", "must satisfy 1 <= nuclei_min <= nuclei_max");
    if (num_classes == 0) fail("num_classes", "must be positive");
    if (appearance.size() != num_classes) fail("appearance", "needs one entry per class");
    if (class_prior.size() != num_classes) fail("class_prior", "needs one entry per class");
    double total = 0.0;
    for (double p : class_prior) {
        if (!(p >= 0.0)) fail("class_prior", "entries must be non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail("class_prior", "must sum to 1");
    for (const auto& a : appearance) {
        if (!(a.radius_min > 0.0) || a.radius_min > a.radius_max) fail("appearance", "radius range invalid");
    }
    if (!(cluster_strength >= 0.0 && cluster_strength <= 1.0)) fail("cluster_strength", "must lie in [0, 1]");
    if (!(label_noise >= 0.0 && label_noise <= 1.0)) fail("label_noise", "must lie in [0, 1]");
    if (!(color_jitter >= 0.0) || !(pixel_noise >= 0.0)) fail("color_jitter", "noise levels must be non-negative");
    if (!(min_distance > 0.0)) fail("min_distance", "must be positive");
    if (!(margin >= 0.0) || 2.0 * margin >= static_cast<double>(image_size)) fail("margin", "leaves no room for nuclei");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

int draw_class(std::span<const double> prior, std::mt19937_64& rng) {
    std::discrete_distribution<int> dist(prior.begin(), prior.end());
    return dist(rng);
}

} // namespace

std::uint64_t sample_seed(std::uint64_t corpus_seed, std::size_t index) {
    return splitmix64(corpus_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

Sample generate_sample(const CorpusConfig& cfg, std::uint64_t seed, std::string id) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const double size = static_cast<double>(cfg.image_size);
    std::uniform_real_distribution<double> coord(cfg.margin, size - 1.0 - cfg.margin);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> count_dist(cfg.nuclei_min, cfg.nuclei_max);
    std::normal_distribution<double> jitter(0.0, 1.0);

    Sample s;
    s.id = std::move(id);
    s.height = cfg.image_size;
    s.width = cfg.image_size;
    s.num_classes = cfg.num_classes;

    const std::size_t target = count_dist(rng);
    const double dmin2 = cfg.min_distance * cfg.min_distance;
    std::vector<int> true_class;
    std::vector<double> radius;
    std::vector<std::array<double, 3>> color;

    for (std::size_t placed = 0; placed < target; ++placed) {
        Point2 p;
        bool ok = false;
        for (std::size_t attempt = 0; attempt < cfg.placement_attempts && !ok; ++attempt) {
            p = Point2{coord(rng), coord(rng)};
            ok = std::all_of(s.centroids.begin(), s.centroids.end(), [&](const Point2& q) {
                const double dx = p.x - q.x, dy = p.y - q.y;
                return dx * dx + dy * dy >= dmin2;
            });
        }
        if (!ok) {
            throw GenerationError("sample '" + s.id + "' (seed " + std::to_string(seed) + "): could not place nucleus " +
                                  std::to_string(placed + 1) + " of " + std::to_string(target));
        }
        int cls;
        const double u = unit(rng);
        if (!s.centroids.empty() && u < cfg.cluster_strength) {
            std::size_t nearest = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s.centroids.size(); ++j) {
                const double dx = p.x - s.centroids[j].x, dy = p.y - s.centroids[j].y;
                const double d2 = dx * dx + dy * dy;
                if (d2 < best) {
                    best = d2;
                    nearest = j;
                }
            }
            cls = true_class[nearest];
        } else {
            cls = draw_class(cfg.class_prior, rng);
        }
        const auto& look = cfg.appearance[static_cast<std::size_t>(cls)];
        std::uniform_real_distribution<double> rdist(look.radius_min, look.radius_max);
        const double r = rdist(rng);
        std::array<double, 3> col{};
        for (std::size_t ch = 0; ch < 3; ++ch) col[ch] = look.color[ch] + cfg.color_jitter * jitter(rng);
        s.centroids.push_back(p);
        true_class.push_back(cls);
        radius.push_back(r);
        color.push_back(col);
    }

    // Labels: the generating class, optionally corrupted by uniform label noise.
    s.labels = true_class;
    if (cfg.label_noise > 0.0) {
        std::uniform_int_distribution<int> any_class(0, static_cast<int>(cfg.num_classes) - 1);
        for (int& l : s.labels) {
            if (unit(rng) < cfg.label_noise) l = any_class(rng);
        }
    }

    // Render soft-edged blobs over a noisy background; pixel (x, y) sits at coordinate (x, y).
    const std::size_t hw = s.height * s.width;
    s.image.assign(3 * hw, 0.0);
    for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
            std::array<double, 3> px = cfg.background;
            for (std::size_t k = 0; k < s.centroids.size(); ++k) {
                const double dx = static_cast<double>(x) - s.centroids[k].x;
                const double dy = static_cast<double>(y) - s.centroids[k].y;
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d > radius[k] + 4.0) continue;
                const double alpha = 1.0 / (1.0 + std::exp((d - radius[k]) / 0.6));
                for (std::size_t ch = 0; ch < 3; ++ch) px[ch] = (1.0 - alpha) * px[ch] + alpha * color[k][ch];
            }
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(px[ch] + cfg.pixel_noise * jitter(rng), 0.0, 1.0);
                s.image[ch * hw + y * s.width + x] = std::round(v * 255.0) / 255.0;
            }
        }
    }

    // Stride-4 semantic mask: cell (gx, gy) represents pixel (4 gx, 4 gy).
    const std::size_t mh = s.mask_height(), mw = s.mask_width();
    const int background = static_cast<int>(cfg.num_classes);
    s.mask.assign(mh * mw, background);
    for (std::size_t gy = 0; gy < mh; ++gy) {
        for (std::size_t gx = 0; gx < mw; ++gx) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.centroids.size(); ++k) {
                const double dx = 4.0 * static_cast<double>(gx) - s.centroids[k].x;
                const double dy = 4.0 * static_cast<double>(gy) - s.centroids[k].y;
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d <= radius[k] && d < best) {
                    best = d;
                    s.mask[gy * mw + gx] = s.labels[k];
                }
            }
        }
    }
    // Every nucleus claims the nearest free cell to its centroid so small
    // nuclei that cover no cell centre still have support.
    std::vector<char> claimed(mh * mw, 0);
    for (std::size_t k = 0; k < s.centroids.size(); ++k) {
        const double cx = s.centroids[k].x / 4.0, cy = s.centroids[k].y / 4.0;
        std::size_t pick = mh * mw;
        double best = std::numeric_limits<double>::infinity();
        const int r = static_cast<int>(kMaskSupportRadius);
        const int ix = static_cast<int>(std::lround(cx)), iy = static_cast<int>(std::lround(cy));
        for (int oy = -r; oy <= r; ++oy) {
            for (int ox = -r; ox <= r; ++ox) {
                const int gx = ix + ox, gy = iy + oy;
                if (gx < 0 || gy < 0 || gx >= static_cast<int>(mw) || gy >= static_cast<int>(mh)) continue;
                const std::size_t cell = static_cast<std::size_t>(gy) * mw + static_cast<std::size_t>(gx);
                if (claimed[cell]) continue;
                const double d = std::hypot(gx - cx, gy - cy);
                if (d <= kMaskSupportRadius && d < best) {
                    best = d;
                    pick = cell;
                }
            }
        }
        if (pick == mh * mw) {
            throw GenerationError("sample '" + s.id + "' (seed " + std::to_string(seed) +
                                  "): no free mask cell for nucleus " + std::to_string(k));
        }
        claimed[pick] = 1;
        s.mask[pick] = s.labels[k];
    }
    return s;
}

unsigned worker_threads() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CGT_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) hw = std::min(hw, static_cast<unsigned>(v));
        } catch (const std::exception&) {
        }
    }
    return hw;
}

std::vector<Sample> generate_corpus(const CorpusConfig& cfg, std::size_t count, unsigned threads) {
    cfg.validate();
    if (threads == 0) threads = worker_threads();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    std::vector<Sample> out(count);
    auto make_id = [](std::size_t i) {
        std::ostringstream os;
        os << 's';
        os.width(5);
        os.fill('0');
        os << i;
        return os.str();
    };
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                out[i] = generate_sample(cfg, sample_seed(cfg.seed, i), make_id(i));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
    return out;
}

// ---- storage ---------------------------------------------------------------

namespace {

constexpr int kSampleVersion = 1;

ordered_json sample_meta(const Sample& s) {
    ordered_json j;
    j["format"] = "cgt-sample";
    j["version"] = kSampleVersion;
    j["id"] = s.id;
    j["width"] = s.width;
    j["height"] = s.height;
    j["num_classes"] = s.num_classes;
    ordered_json cs = ordered_json::array();
    for (const auto& p : s.centroids) cs.push_back({p.x, p.y});
    j["centroids"] = std::move(cs);
    j["labels"] = s.labels;
    j["mask_width"] = s.mask_width();
    j["mask_height"] = s.mask_height();
    j["mask"] = s.mask;
    return j;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RgbImage to_rgb(const Sample& s) {
    RgbImage img;
    img.width = s.width;
    img.height = s.height;
    img.pixels.resize(s.width * s.height * 3);
    const std::size_t hw = s.width * s.height;
    for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            img.pixels[p * 3 + ch] = static_cast<std::uint8_t>(std::lround(s.image[ch * hw + p] * 255.0));
        }
    }
    return img;
}

Sample read_sample(const std::filesystem::path& dir, const std::string& id) {
    const auto meta_path = dir / (id + ".json");
    const auto image_path = dir / (id + ".ppm");
    if (!std::filesystem::exists(meta_path)) {
        throw ParseError(meta_path.string() + ": missing label file for sample '" + id + "'");
    }
    json j;
    try {
        j = json::parse(read_text(meta_path));
    } catch (const json::parse_error& e) {
        throw ParseError(meta_path.string() + ": sample '" + id + "': invalid JSON: " + e.what());
    }
    auto field = [&](const char* name) -> const json& {
        if (!j.contains(name)) {
            throw ParseError(meta_path.string() + ": sample '" + id + "': missing field '" + name + "'");
        }
        return j.at(name);
    };
    Sample s;
    try {
        if (field("format").get<std::string>() != "cgt-sample") {
            throw ParseError(meta_path.string() + ": field 'format' is not cgt-sample");
        }
        if (field("version").get<int>() != kSampleVersion) {
            throw ParseError(meta_path.string() + ": field 'version' unsupported");
        }
        s.id = field("id").get<std::string>();
        if (s.id != id) throw ParseError(meta_path.string() + ": field 'id' does not match index entry '" + id + "'");
        s.width = field("width").get<std::size_t>();
        s.height = field("height").get<std::size_t>();
        s.num_classes = field("num_classes").get<std::size_t>();
        for (const auto& c : field("centroids")) s.centroids.push_back(Point2{c.at(0).get<double>(), c.at(1).get<double>()});
        s.labels = field("labels").get<std::vector<int>>();
        s.mask = field("mask").get<std::vector<int>>();
        if (field("mask_width").get<std::size_t>() != s.mask_width() ||
            field("mask_height").get<std::size_t>() != s.mask_height() || s.mask.size() != s.mask_width() * s.mask_height()) {
            throw ParseError(meta_path.string() + ": field 'mask' has inconsistent size");
        }
        if (s.labels.size() != s.centroids.size()) {
            throw ParseError(meta_path.string() + ": field 'labels' length differs from 'centroids'");
        }
    } catch (const json::exception& e) {
        throw ParseError(meta_path.string() + ": sample '" + id + "': malformed field: " + e.what());
    }
    if (!std::filesystem::exists(image_path)) {
        throw ParseError(image_path.string() + ": missing image file for sample '" + id + "'");
    }
    const RgbImage img = read_ppm(image_path);
    if (img.width != s.width || img.height != s.height) {
        throw ParseError(image_path.string() + ": field 'size' disagrees with metadata");
    }
    const std::size_t hw = s.width * s.height;
    s.image.resize(3 * hw);
    for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t ch = 0; ch < 3; ++ch) s.image[ch * hw + p] = static_cast<double>(img.pixels[p * 3 + ch]) / 255.0;
    }
    return s;
}

} // namespace

void write_corpus(std::span<const Sample> samples, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    ordered_json index;
    index["format"] = "cgt-split";
    index["version"] = kSampleVersion;
    ordered_json ids = ordered_json::array();
    for (const Sample& s : samples) {
        ids.push_back(s.id);
        write_ppm(to_rgb(s), dir / (s.id + ".ppm"));
        std::ofstream os(dir / (s.id + ".json"), std::ios::binary);
        if (!os) throw Error("cannot write metadata for sample '" + s.id + "' in " + dir.string());
        os << sample_meta(s).dump() << '\n';
    }
    index["samples"] = std::move(ids);
    std::ofstream os(dir / "index.json", std::ios::binary);
    if (!os) throw Error("cannot write " + (dir / "index.json").string());
    os << index.dump(1) << '\n';
}

std::vector<Sample> read_corpus(const std::filesystem::path& dir) {
    const auto index_path = dir / "index.json";
    if (!std::filesystem::exists(index_path)) {
        throw ParseError(index_path.string() + ": missing split index");
    }
    json index;
    try {
        index = json::parse(read_text(index_path));
    } catch (const json::parse_error& e) {
        throw ParseError(index_path.string() + ": invalid JSON: " + e.what());
    }
    if (!index.contains("samples") || !index["samples"].is_array()) {
        throw ParseError(index_path.string() + ": missing field 'samples'");
    }
    std::vector<Sample> out;
    for (const auto& id : index["samples"]) {
        if (!id.is_string()) throw ParseError(index_path.string() + ": field 'samples' must hold strings");
        out.push_back(read_sample(dir, id.get<std::string>()));
    }
    return out;
}

CorpusSplit split_corpus(std::vector<Sample> corpus, std::array<double, 3> fractions, std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1 (got " + std::to_string(total) + ")");
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    const std::size_t n = corpus.size();
    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n) + 1e-9));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n) + 1e-9)));
    CorpusSplit out;
    for (std::size_t r = 0; r < n; ++r) {
        Sample& s = corpus[order[r]];
        if (r < n_train) out.train.push_back(std::move(s));
        else if (r < n_train + n_val) out.val.push_back(std::move(s));
        else out.test.push_back(std::move(s));
    }
    const char* names[3] = {"train", "val", "test"};
    const std::size_t sizes[3] = {out.train.size(), out.val.size(), out.test.size()};
    for (int k = 0; k < 3; ++k) {
        if (fractions[k] > 0.0 && sizes[k] == 0) {
            out.warnings.push_back(std::string("split '") + names[k] + "' is empty (fraction " +
                                   std::to_string(fractions[k]) + " of " + std::to_string(n) + " samples)");
        }
    }
    return out;
}

std::vector<std::size_t> class_frequencies(std::span<const Sample> samples, std::size_t classes) {
    std::vector<std::size_t> freq(classes, 0);
    for (const Sample& s : samples) {
        for (int l : s.labels) {
            if (l < 0 || static_cast<std::size_t>(l) >= classes) {
                throw ContractError("sample '" + s.id + "' has label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(classes) + ")");
            }
            ++freq[static_cast<std::size_t>(l)];
        }
    }
    return freq;
}

std::vector<double> class_weights(std::span<const std::size_t> frequencies) {
    std::size_t most = 0;
    for (std::size_t f : frequencies) most = std::max(most, f);
    std::vector<double> tau(frequencies.size(), 1.0);
    if (most == 0) return tau;
    for (std::size_t b = 0; b < frequencies.size(); ++b) {
        if (frequencies[b] > 0) tau[b] = static_cast<double>(most) / static_cast<double>(frequencies[b]);
    }
    return tau;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string corpus_digest(std::span<const Sample> samples) {
    std::uint64_t h = fnv1a64("cgt-corpus");
    for (const Sample& s : samples) {
        h = fnv1a64(sample_meta(s).dump(), h);
        const RgbImage img = to_rgb(s);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size()), h);
    }
    return hex64(h);
}

} // namespace cgt
