#pragma once

#include <png.h>

#include <array>
#include <cctype>
#include <cstdint>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "luslines/core.hpp"
#include "luslines/error.hpp"

namespace luslines {

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& b, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(b, u);
}

inline void put_f64(std::vector<unsigned char>& b, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    put_u64(b, u);
}

/// Little-endian cursor over a byte buffer; throws FormatError on overrun.
class ByteReader {
public:
    ByteReader(const std::vector<unsigned char>& bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        const std::uint32_t u = u32();
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
    double f64() {
        const std::uint64_t u = u64();
        double d;
        std::memcpy(&d, &u, 8);
        return d;
    }
    std::string tag4() {
        need(4);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + 4));
        pos_ += 4;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<unsigned char>& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

class PgmHeaderParser {
public:
    PgmHeaderParser(const std::vector<unsigned char>& b, std::string name) : b_(b), name_(std::move(name)) {}

    long next_int(const char* field) {
        skip_space_and_comments();
        long v = 0;
        bool any = false;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_] - '0');
            if (v > 1'000'000) throw FormatError(name_ + ": PGM " + field + " out of range");
            ++pos_;
            any = true;
        }
        if (!any) throw FormatError(name_ + ": PGM " + field + " missing");
        return v;
    }
    void skip_single_whitespace() {
        if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw FormatError(name_ + ": malformed PGM header");
        ++pos_;
    }
    std::size_t pos() const { return pos_; }
    void set_pos(std::size_t p) { pos_ = p; }

private:
    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (std::isspace(b_[pos_])) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& b_;
    std::string name_;
    std::size_t pos_ = 0;
};

inline Image decode_pgm(const std::vector<unsigned char>& b, const std::string& name) {
    if (b.size() < 2 || b[0] != 'P' || (b[1] != '2' && b[1] != '5'))
        throw FormatError(name + ": not a grayscale PGM (magic must be P2 or P5)");
    const bool ascii = b[1] == '2';
    PgmHeaderParser p(b, name);
    p.set_pos(2);
    const long w = p.next_int("width");
    const long h = p.next_int("height");
    const long maxval = p.next_int("maxval");
    if (w <= 0 || h <= 0) throw FormatError(name + ": PGM has zero width or height");
    if (maxval <= 0 || maxval > 65535) throw FormatError(name + ": unsupported bit depth (maxval " + std::to_string(maxval) + ")");
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    const auto top = static_cast<double>(maxval);
    if (ascii) {
        for (double& v : img) {
            const long x = p.next_int("pixel");
            if (x > maxval) throw FormatError(name + ": pixel exceeds maxval");
            v = static_cast<double>(x) / top;
        }
        return img;
    }
    p.skip_single_whitespace();
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    const std::size_t need = img.size() * bpp;
    if (b.size() - p.pos() < need) throw FormatError(name + ": truncated PGM pixel data");
    const unsigned char* px = b.data() + p.pos();
    for (std::size_t i = 0; i < img.size(); ++i) {
        const unsigned x = bpp == 2 ? (static_cast<unsigned>(px[2 * i]) << 8) | px[2 * i + 1] : px[i];
        if (static_cast<long>(x) > maxval) throw FormatError(name + ": pixel exceeds maxval");
        img[i] = static_cast<double>(x) / top;
    }
    return img;
}

struct PngReadState {
    const std::vector<unsigned char>* bytes;
    std::size_t pos;
};

inline void png_read_from_memory(png_structp p, png_bytep out, png_size_t n) {
    auto* s = static_cast<PngReadState*>(png_get_io_ptr(p));
    if (s->pos + n > s->bytes->size()) png_error(p, "truncated");
    std::memcpy(out, s->bytes->data() + s->pos, n);
    s->pos += n;
}

struct PngHeader {
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    int bit_depth = 0;
    int color_type = 0;
    std::size_t row_bytes = 0;
};

// libpng reports errors by longjmp, so the two functions holding a setjmp
// keep only trivially destructible locals.
inline bool png_read_header(png_structp png, png_infop info, PngReadState* state, PngHeader* hdr) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_set_read_fn(png, state, png_read_from_memory);
    png_read_info(png, info);
    hdr->width = png_get_image_width(png, info);
    hdr->height = png_get_image_height(png, info);
    hdr->bit_depth = png_get_bit_depth(png, info);
    hdr->color_type = png_get_color_type(png, info);
    png_read_update_info(png, info);
    hdr->row_bytes = png_get_rowbytes(png, info);
    return true;
}

inline bool png_read_pixels(png_structp png, png_bytepp rows) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_read_image(png, rows);
    return true;
}

inline Image decode_png(const std::vector<unsigned char>& b, const std::string& name) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(name + ": png init failed");
    }
    PngReadState state{&b, 0};
    PngHeader hdr;
    if (!png_read_header(png, info, &state, &hdr)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(name + ": corrupt PNG header");
    }
    std::string failure;
    if (hdr.color_type != PNG_COLOR_TYPE_GRAY)
        failure = name + ": color type " + std::to_string(hdr.color_type) + " is not grayscale";
    else if (hdr.bit_depth != 8 && hdr.bit_depth != 16)
        failure = name + ": unsupported bit depth " + std::to_string(hdr.bit_depth);
    if (!failure.empty()) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError(failure);
    }
    std::vector<unsigned char> raw(hdr.row_bytes * hdr.height);
    std::vector<png_bytep> rows(hdr.height);
    for (png_uint_32 i = 0; i < hdr.height; ++i) rows[i] = raw.data() + i * hdr.row_bytes;
    const bool ok = png_read_pixels(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    if (!ok) throw FormatError(name + ": corrupt PNG pixel data");

    Image img(hdr.height, hdr.width);
    const bool wide = hdr.bit_depth == 16;
    const double top = wide ? 65535.0 : 255.0;
    for (png_uint_32 i = 0; i < hdr.height; ++i) {
        for (png_uint_32 j = 0; j < hdr.width; ++j) {
            const unsigned v = wide ? (static_cast<unsigned>(rows[i][2 * j]) << 8) | rows[i][2 * j + 1] : rows[i][j];
            img(i, j) = v / top;
        }
    }
    return img;
}

inline bool png_write_all(png_structp png, png_infop info, FILE* fp, png_uint_32 h, png_uint_32 w, int channels,
                          const unsigned char* pixels) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_init_io(png, fp);
    png_set_IHDR(png, info, w, h, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (png_uint_32 i = 0; i < h; ++i)
        png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(i) * w * channels));
    png_write_end(png, nullptr);
    return true;
}

inline void encode_png(const std::filesystem::path& path, std::size_t h, std::size_t w, int channels,
                       const std::vector<unsigned char>& pixels) {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    const bool ok = png && info &&
                    png_write_all(png, info, fp, static_cast<png_uint_32>(h), static_cast<png_uint_32>(w), channels,
                                  pixels.data());
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    if (!ok) throw IoError("png encode failed for '" + path.string() + "'");
}

}  // namespace detail

/// Loads an 8/16-bit grayscale PGM (P2 or P5) or grayscale PNG and scales
/// intensities to [0, 1] by the format's maximum value.
inline Image load_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    const std::string name = path.string();
    if (bytes.empty()) throw FormatError(name + ": empty file");
    static constexpr std::array<unsigned char, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin()))
        return detail::decode_png(bytes, name);
    return detail::decode_pgm(bytes, name);
}

/// Writes a binary PGM. Values are clamped to [0, 1] and quantized to
/// 8 or 16 bits.
inline void save_image(const Image& img, const std::filesystem::path& path, int bit_depth = 8) {
    if (bit_depth != 8 && bit_depth != 16) throw ConfigError("save_image: bit_depth must be 8 or 16");
    const unsigned maxval = bit_depth == 16 ? 65535u : 255u;
    std::ostringstream hdr;
    hdr << "P5\n" << img.width() << " " << img.height() << "\n" << maxval << "\n";
    const std::string h = hdr.str();
    std::vector<unsigned char> out(h.begin(), h.end());
    out.reserve(out.size() + img.size() * (bit_depth / 8));
    for (double v : img) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (bit_depth == 16) out.push_back(static_cast<unsigned char>(q >> 8));
        out.push_back(static_cast<unsigned char>(q & 0xFF));
    }
    detail::write_file(path, out);
}

/// Writes an 8-bit RGB PNG from interleaved rgb bytes (h * w * 3).
inline void save_rgb_png(const std::filesystem::path& path, std::size_t h, std::size_t w,
                         const std::vector<unsigned char>& rgb) {
    if (rgb.size() != h * w * 3) throw DimensionError("save_rgb_png: buffer size mismatch");
    detail::encode_png(path, h, w, 3, rgb);
}

inline constexpr char kSinogramMagic[4] = {'S', 'I', 'N', 'O'};

/// Sinogram file: "SINO", u32 n_r, u32 n_angles, u32 reserved (0), then
/// n_r * n_angles little-endian f32 values, row-major.
inline void save_sinogram(const Grid& values, const std::filesystem::path& path) {
    std::vector<unsigned char> out(kSinogramMagic, kSinogramMagic + 4);
    detail::put_u32(out, static_cast<std::uint32_t>(values.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(values.cols()));
    detail::put_u32(out, 0);
    for (double v : values) detail::put_f32(out, static_cast<float>(v));
    detail::write_file(path, out);
}

inline void save_sinogram(const Sinogram& s, const std::filesystem::path& path) {
    save_sinogram(s.values, path);
}

inline Grid load_sinogram(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    const std::string name = path.string();
    detail::ByteReader rd(bytes, name);
    if (bytes.size() < 16) throw FormatError(name + ": sinogram header truncated");
    if (rd.tag4() != std::string(kSinogramMagic, 4)) throw FormatError(name + ": bad sinogram magic");
    const std::uint32_t nr = rd.u32();
    const std::uint32_t na = rd.u32();
    rd.u32();
    if (rd.remaining() != static_cast<std::size_t>(nr) * na * 4)
        throw FormatError(name + ": sinogram payload size does not match header");
    Grid g(nr, na);
    for (double& v : g) v = rd.f32();
    return g;
}

inline Sinogram load_sinogram(const std::filesystem::path& path, const Geometry& geo) {
    Grid g = load_sinogram(path);
    if (g.rows() != static_cast<std::size_t>(geo.n_r()) || g.cols() != static_cast<std::size_t>(geo.n_angles))
        throw FormatError(path.string() + ": sinogram shape does not match geometry");
    return Sinogram(geo, std::move(g));
}

inline nlohmann::json to_json(const GroundTruth& gt) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : gt.boxes) boxes.push_back({{"x_min", b.x_min}, {"x_max", b.x_max}, {"kind", to_string(b.kind)}});
    return {{"boxes", boxes}};
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
    GroundTruth gt;
    try {
        for (const auto& b : j.at("boxes")) {
            GroundTruthBox box{b.at("x_min").get<int>(), b.at("x_max").get<int>(),
                               line_kind_from_string(b.at("kind").get<std::string>())};
            if (box.x_min >= box.x_max) throw FormatError("ground truth: x_min must be < x_max");
            gt.boxes.push_back(box);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("ground truth: ") + e.what());
    }
    return gt;
}

inline void save_json(const nlohmann::json& j, const std::filesystem::path& path) {
    const std::string s = j.dump(2) + "\n";
    detail::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
    save_json(to_json(gt), path);
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
    return ground_truth_from_json(load_json(path));
}

}  // namespace luslines
