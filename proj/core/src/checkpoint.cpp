#include "cgt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cgt/data.hpp"
#include "cgt/errors.hpp"

namespace cgt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string Checkpoint::config_digest() const { return hex64(fnv1a64(config_json)); }

const StoredTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

    std::string line(const char* what) {
        const auto end = bytes_.find('\n', pos_);
        if (end == std::string::npos) fail(std::string("truncated header at ") + what);
        std::string s = bytes_.substr(pos_, end - pos_);
        pos_ = end + 1;
        return s;
    }

    std::uint64_t keyed(const std::string& key) {
        const std::string l = line(key.c_str());
        if (l.rfind(key + " ", 0) != 0) fail("expected header field '" + key + "'");
        try {
            std::size_t used = 0;
            const std::string digits = l.substr(key.size() + 1);
            const auto v = std::stoull(digits, &used);
            if (used != digits.size()) fail("field '" + key + "' is not an integer");
            return v;
        } catch (const std::logic_error&) {
            fail("field '" + key + "' is not an integer");
        }
    }

    std::string blob(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n + 1) fail(std::string("truncated ") + what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        if (bytes_[pos_] != '\n') fail(std::string("missing terminator after ") + what);
        ++pos_;
        return s;
    }

    template <typename T>
    T get(const char* what) {
        if (bytes_.size() - pos_ < sizeof(T)) fail(std::string("truncated tensor data (") + what + ")");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void raw(void* dst, std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) fail(std::string("truncated tensor data (") + what + ")");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    bool done() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& why) const { throw ParseError(origin_ + ": checkpoint: " + why); }

private:
    const std::string& bytes_;
    const std::string& origin_;
    std::size_t pos_ = 0;
};

} // namespace

std::string checkpoint_to_bytes(const Checkpoint& c) {
    std::string out;
    out += "CGTCKPT " + std::to_string(c.version) + "\n";
    out += "config_digest " + c.config_digest() + "\n";
    out += "step " + std::to_string(c.step) + "\n";
    out += "rng_bytes " + std::to_string(c.rng_state.size()) + "\n" + c.rng_state + "\n";
    out += "config_bytes " + std::to_string(c.config_json.size()) + "\n" + c.config_json + "\n";
    out += "tensors " + std::to_string(c.tensors.size()) + "\nEND_HEADER\n";
    for (const auto& t : c.tensors) {
        if (t.values.size() != shape_numel(t.shape)) {
            throw DimensionError("checkpoint: tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                                 " values for shape " + shape_str(t.shape));
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
    }
    return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    Checkpoint c;
    const std::string magic = r.line("magic");
    if (magic != "CGTCKPT " + std::to_string(kCheckpointVersion)) {
        r.fail("unsupported format line '" + magic.substr(0, 32) + "'");
    }
    const std::string digest_line = r.line("config_digest");
    if (digest_line.rfind("config_digest ", 0) != 0) r.fail("expected header field 'config_digest'");
    c.step = r.keyed("step");
    c.rng_state = r.blob(r.keyed("rng_bytes"), "rng state");
    c.config_json = r.blob(r.keyed("config_bytes"), "config");
    if (digest_line.substr(14) != c.config_digest()) r.fail("config digest does not match the stored config");
    const auto count = r.keyed("tensors");
    if (r.line("END_HEADER") != "END_HEADER") r.fail("expected END_HEADER");
    for (std::uint64_t i = 0; i < count; ++i) {
        StoredTensor t;
        const auto name_len = r.get<std::uint32_t>("name length");
        t.name.resize(name_len);
        r.raw(t.name.data(), name_len, "name");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) r.fail("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
        for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
        const std::size_t numel = shape_numel(t.shape);
        if (numel > bytes.size() / sizeof(double)) r.fail("tensor '" + t.name + "' larger than the file");
        t.values.resize(numel);
        r.raw(t.values.data(), numel * sizeof(double), t.name.c_str());
        c.tensors.push_back(std::move(t));
    }
    if (!r.done()) r.fail("trailing bytes after the last tensor");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = checkpoint_to_bytes(ckpt);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path.string() + ": cannot open checkpoint");
    std::ostringstream ss;
    ss << is.rdbuf();
    return checkpoint_from_bytes(ss.str(), path.string());
}

std::vector<StoredTensor> capture_tensors(const ParamSet& params) {
    std::vector<StoredTensor> out;
    out.reserve(params.size());
    for (const auto& p : params.items()) {
        const auto v = p.tensor.values();
        out.push_back(StoredTensor{p.name, p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
    }
    return out;
}

std::size_t restore_tensors(const Checkpoint& ckpt, const ParamSet& params, const std::string& prefix) {
    std::vector<std::string> problems;
    for (const auto& p : params.items()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        const StoredTensor* t = ckpt.find(p.name);
        if (!t) {
            problems.push_back(p.name + ": missing from checkpoint");
        } else if (t->shape != p.tensor.shape()) {
            problems.push_back(p.name + ": checkpoint " + shape_str(t->shape) + " vs model " +
                               shape_str(p.tensor.shape()));
        }
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match the model configuration:";
        for (const auto& s : problems) msg += "\n  " + s;
        throw ConfigError(msg);
    }
    std::size_t restored = 0;
    for (const auto& p : params.items()) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        const StoredTensor* t = ckpt.find(p.name);
        Tensor target = p.tensor;
        auto dst = target.values_mut();
        std::copy(t->values.begin(), t->values.end(), dst.begin());
        ++restored;
    }
    return restored;
}

std::string rng_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng rng_from_string(const std::string& state) {
    Rng rng;
    std::istringstream is(state);
    is >> rng;
    if (!is) throw ParseError("checkpoint: malformed RNG state");
    return rng;
}

} // namespace cgt
