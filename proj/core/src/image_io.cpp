#include "cgt/image_io.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "cgt/errors.hpp"

namespace cgt {

void write_ppm(const RgbImage& image, const std::filesystem::path& path) {
    if (image.pixels.size() != image.width * image.height * 3) {
        throw DimensionError("write_ppm: pixel buffer does not match " + std::to_string(image.width) + "x" +
                             std::to_string(image.height));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!os) throw Error("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

} // namespace

RgbImage read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path.string() + ": cannot open image");
    if (next_token(is) != "P6") throw ParseError(path.string() + ": field 'magic' is not P6");
    RgbImage img;
    try {
        img.width = std::stoul(next_token(is));
        img.height = std::stoul(next_token(is));
        if (std::stoul(next_token(is)) != 255) throw ParseError(path.string() + ": field 'maxval' must be 255");
    } catch (const std::logic_error&) {
        throw ParseError(path.string() + ": malformed PPM header");
    }
    img.pixels.resize(img.width * img.height * 3);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
        throw ParseError(path.string() + ": truncated pixel data");
    }
    return img;
}

} // namespace cgt
