// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <png.h>

#include <nlohmann/json.hpp>

namespace splatsim::io {

namespace {

// Little-endian scalar I/O, independent of host byte order.

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

void put_f32(std::ostream& out, float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    put_le(out, bits);
}

void put_f64(std::ostream& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    put_le(out, bits);
}

class Reader {
public:
    Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

    std::size_t offset() const { return offset_; }

    void bytes(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw Truncated(path_ + ": truncated while reading " + std::string(what),
                            offset_ + static_cast<std::size_t>(in_.gcount()));
        }
        offset_ += n;
    }

    template <typename T>
    T get_le(const char* what) {
        std::uint8_t buf[sizeof(T)];
        bytes(buf, sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return static_cast<T>(v);
    }

    float get_f32(const char* what) {
        const std::uint32_t bits = get_le<std::uint32_t>(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    double get_f64(const char* what) {
        const std::uint64_t bits = get_le<std::uint64_t>(what);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }

private:
    std::istream& in_;
    std::string path_;
    std::size_t offset_ = 0;
};

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return in;
}

}  // namespace

Trajectory load_trajectory(const std::string& path) {
    std::ifstream file = open_in(path);
    Reader r(file, path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "3GST", 4) != 0) {
        throw BadMagic(path + ": not a 3GST trajectory file");
    }
    const auto version = r.get_le<std::uint16_t>("version");
    if (version != kTrajectoryVersion) {
        throw BadVersion(path + ": unsupported trajectory version " + std::to_string(version));
    }

    Trajectory traj;
    const auto frame_count = r.get_le<std::uint16_t>("frame count");
    traj.d_inv = r.get_le<std::uint16_t>("d_inv");
    traj.d_dyn = r.get_le<std::uint16_t>("d_dyn");
    traj.frames.resize(frame_count);

    for (int k = 0; k < frame_count; ++k) {
        const auto n = r.get_le<std::uint32_t>("particle count");
        traj.frames[k].resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            features::ParticleState& ps = traj.frames[k][i];
            for (int a = 0; a < 3; ++a) ps.p[a] = r.get_f32("position");
            ps.f_inv.resize(traj.d_inv);
            for (int a = 0; a < traj.d_inv; ++a) ps.f_inv[a] = r.get_f32("invariant feature");
            ps.f_dyn.resize(traj.d_dyn);
            for (int a = 0; a < traj.d_dyn; ++a) ps.f_dyn[a] = r.get_f32("dynamic feature");
            ps.frozen = r.get_le<std::uint8_t>("frozen flag") != 0;
        }
    }
    return traj;
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
    if (traj.frames.size() > 0xFFFF) throw FieldOverflow("trajectory has too many frames");
    std::ofstream out = open_out(path);
    out.write("3GST", 4);
    put_le(out, kTrajectoryVersion);
    put_le(out, static_cast<std::uint16_t>(traj.frames.size()));
    put_le(out, static_cast<std::uint16_t>(traj.d_inv));
    put_le(out, static_cast<std::uint16_t>(traj.d_dyn));
    for (const auto& frame : traj.frames) {
        put_le(out, static_cast<std::uint32_t>(frame.size()));
        for (const auto& ps : frame) {
            if (ps.f_inv.size() != traj.d_inv || ps.f_dyn.size() != traj.d_dyn) {
                throw ShapeMismatch("save_trajectory: particle feature split mismatch");
            }
            for (int a = 0; a < 3; ++a) put_f32(out, static_cast<float>(ps.p[a]));
            for (int a = 0; a < traj.d_inv; ++a) put_f32(out, static_cast<float>(ps.f_inv[a]));
            for (int a = 0; a < traj.d_dyn; ++a) put_f32(out, static_cast<float>(ps.f_dyn[a]));
            put_le(out, static_cast<std::uint8_t>(ps.frozen ? 1 : 0));
        }
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<geometry::Camera> load_camera_rig(const std::string& path) {
    std::ifstream file = open_in(path);
    nlohmann::json doc = nlohmann::json::parse(file);
    if (!doc.is_array()) throw std::runtime_error(path + ": camera rig must be a JSON array");

    std::vector<geometry::Camera> cams;
    cams.reserve(doc.size());
    for (const auto& entry : doc) {
        geometry::Camera cam;
        const auto k = entry.at("K");
        const auto r = entry.at("R");
        const auto t = entry.at("t");
        if (k.size() != 9 || r.size() != 9 || t.size() != 3) {
            throw std::runtime_error(path + ": camera K/R/t must have 9/9/3 entries");
        }
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                cam.K(i, j) = k[3 * i + j].get<double>();
                cam.R(i, j) = r[3 * i + j].get<double>();
            }
            cam.t[i] = t[i].get<double>();
        }
        cam.width = entry.at("width").get<int>();
        cam.height = entry.at("height").get<int>();
        if (cam.K(2, 2) == 0.0) throw std::runtime_error(path + ": camera K[2][2] is zero");
        cam.K /= cam.K(2, 2);
        cam.validate();
        cams.push_back(cam);
    }
    return cams;
}

void save_camera_rig(const std::vector<geometry::Camera>& cams, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& cam : cams) {
        nlohmann::json entry;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                entry["K"].push_back(cam.K(i, j));
                entry["R"].push_back(cam.R(i, j));
            }
            entry["t"].push_back(cam.t[i]);
        }
        entry["width"] = cam.width;
        entry["height"] = cam.height;
        doc.push_back(entry);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
}

namespace {

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* file = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (file) std::fclose(file);
    }
};

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* file = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png_rows(const std::string& path, int width, int height, int color_type,
                    const std::vector<std::uint8_t>& bytes, int stride) {
    PngWriteCloser c;
    c.file = std::fopen(path.c_str(), "wb");
    if (!c.file) throw std::runtime_error("cannot open for writing: " + path);
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!c.png) throw std::runtime_error("png_create_write_struct failed");
    c.info = png_create_info_struct(c.png);
    if (!c.info) throw std::runtime_error("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(c.png))) throw std::runtime_error("libpng write error: " + path);

    png_init_io(c.png, c.file);
    png_set_IHDR(c.png, c.info, width, height, 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    for (int y = 0; y < height; ++y) {
        png_write_row(c.png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * stride));
    }
    png_write_end(c.png, nullptr);
}

}  // namespace

void write_png(const Image& image, const std::string& path) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.width) * image.height * 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.data[i]);
    write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, bytes, image.width * 3);
}

void write_png_gray(const GrayImage& image, const std::string& path) {
    write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, image.data, image.width);
}

namespace {

std::vector<std::uint8_t> read_png_bytes(const std::string& path, bool gray, int& width,
                                         int& height) {
    PngReadCloser c;
    c.file = std::fopen(path.c_str(), "rb");
    if (!c.file) throw std::runtime_error("cannot open: " + path);
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!c.png) throw std::runtime_error("png_create_read_struct failed");
    c.info = png_create_info_struct(c.png);
    if (!c.info) throw std::runtime_error("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(c.png))) throw std::runtime_error("libpng read error: " + path);

    png_init_io(c.png, c.file);
    png_read_info(c.png, c.info);

    png_set_strip_16(c.png);
    png_set_strip_alpha(c.png);
    png_set_packing(c.png);
    png_set_expand(c.png);
    if (gray) {
        png_set_rgb_to_gray(c.png, 1, -1.0, -1.0);
    } else {
        png_set_gray_to_rgb(c.png);
    }
    png_read_update_info(c.png, c.info);

    width = static_cast<int>(png_get_image_width(c.png, c.info));
    height = static_cast<int>(png_get_image_height(c.png, c.info));
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * channels);
    for (int y = 0; y < height; ++y) {
        png_read_row(c.png, bytes.data() + static_cast<std::size_t>(y) * width * channels,
                     nullptr);
    }
    return bytes;
}

}  // namespace

Image load_png(const std::string& path) {
    int width = 0, height = 0;
    const std::vector<std::uint8_t> bytes = read_png_bytes(path, false, width, height);
    Image img(width, height);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

GrayImage load_png_gray(const std::string& path) {
    int width = 0, height = 0;
    std::vector<std::uint8_t> bytes = read_png_bytes(path, true, width, height);
    GrayImage img;
    img.width = width;
    img.height = height;
    img.data = std::move(bytes);
    return img;
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("psnr: image shapes differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
    Tensor t;
    t.shape = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.resize(static_cast<std::size_t>(m.size()));
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) t.data[static_cast<std::size_t>(i) * m.cols() + j] = m(i, j);
    }
    return t;
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
    Tensor t;
    t.shape = {static_cast<std::uint32_t>(v.size())};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
    if (shape.size() != 2) throw ShapeMismatch("tensor is not a matrix");
    Eigen::MatrixXd m(shape[0], shape[1]);
    for (std::uint32_t i = 0; i < shape[0]; ++i) {
        for (std::uint32_t j = 0; j < shape[1]; ++j) {
            m(i, j) = data[static_cast<std::size_t>(i) * shape[1] + j];
        }
    }
    return m;
}

Eigen::VectorXd Tensor::to_vector() const {
    if (shape.size() != 1) throw ShapeMismatch("tensor is not a vector");
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

double Tensor::to_scalar() const {
    if (data.size() != 1) throw ShapeMismatch("tensor is not a scalar");
    return data[0];
}

void save_weights(const TensorMap& tensors, const std::string& path) {
    std::ofstream out = open_out(path);
    out.write("3GSW", 4);
    put_le(out, kWeightsVersion);
    put_le(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_le(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le(out, static_cast<std::uint8_t>(tensor.shape.size()));
        std::size_t expected = 1;
        for (std::uint32_t d : tensor.shape) {
            put_le(out, d);
            expected *= d;
        }
        if (expected != tensor.data.size()) {
            throw ShapeMismatch("tensor '" + name + "' data does not match its shape");
        }
        for (double v : tensor.data) put_f64(out, v);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

TensorMap load_weights(const std::string& path) {
    std::ifstream file = open_in(path);
    Reader r(file, path);

    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "3GSW", 4) != 0) {
        throw BadMagic(path + ": not a 3GSW weights file");
    }
    const auto version = r.get_le<std::uint16_t>("version");
    if (version != kWeightsVersion) {
        throw BadVersion(path + ": unsupported weights version " + std::to_string(version));
    }
    const auto count = r.get_le<std::uint32_t>("tensor count");

    TensorMap tensors;
    for (std::uint32_t n = 0; n < count; ++n) {
        const auto name_len = r.get_le<std::uint16_t>("tensor name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "tensor name");
        Tensor t;
        const auto rank = r.get_le<std::uint8_t>("tensor rank");
        std::size_t total = 1;
        for (int d = 0; d < rank; ++d) {
            t.shape.push_back(r.get_le<std::uint32_t>("tensor dim"));
            total *= t.shape.back();
        }
        t.data.resize(total);
        for (std::size_t i = 0; i < total; ++i) t.data[i] = r.get_f64("tensor data");
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

namespace {

const Tensor& need(const TensorMap& tensors, const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeMismatch("weights file is missing tensor '" + name + "'");
    return it->second;
}

void pack_block(TensorMap& out, const std::string& prefix, const dynamics::AttentionBlockWeights& b) {
    out[prefix + ".ln1_g"] = Tensor::from_vector(b.ln1_gamma);
    out[prefix + ".ln1_b"] = Tensor::from_vector(b.ln1_beta);
    out[prefix + ".ln2_g"] = Tensor::from_vector(b.ln2_gamma);
    out[prefix + ".ln2_b"] = Tensor::from_vector(b.ln2_beta);
    out[prefix + ".wq"] = Tensor::from_matrix(b.wq);
    out[prefix + ".bq"] = Tensor::from_vector(b.bq);
    out[prefix + ".wk"] = Tensor::from_matrix(b.wk);
    out[prefix + ".bk"] = Tensor::from_vector(b.bk);
    out[prefix + ".wv"] = Tensor::from_matrix(b.wv);
    out[prefix + ".bv"] = Tensor::from_vector(b.bv);
    out[prefix + ".wo"] = Tensor::from_matrix(b.wo);
    out[prefix + ".bo"] = Tensor::from_vector(b.bo);
    out[prefix + ".ffn1"] = Tensor::from_matrix(b.ffn1);
    out[prefix + ".ffn1_b"] = Tensor::from_vector(b.ffn1_b);
    out[prefix + ".ffn2"] = Tensor::from_matrix(b.ffn2);
    out[prefix + ".ffn2_b"] = Tensor::from_vector(b.ffn2_b);
}

dynamics::AttentionBlockWeights unpack_block(const TensorMap& tensors, const std::string& prefix) {
    dynamics::AttentionBlockWeights b;
    b.ln1_gamma = need(tensors, prefix + ".ln1_g").to_vector();
    b.ln1_beta = need(tensors, prefix + ".ln1_b").to_vector();
    b.ln2_gamma = need(tensors, prefix + ".ln2_g").to_vector();
    b.ln2_beta = need(tensors, prefix + ".ln2_b").to_vector();
    b.wq = need(tensors, prefix + ".wq").to_matrix();
    b.bq = need(tensors, prefix + ".bq").to_vector();
    b.wk = need(tensors, prefix + ".wk").to_matrix();
    b.bk = need(tensors, prefix + ".bk").to_vector();
    b.wv = need(tensors, prefix + ".wv").to_matrix();
    b.bv = need(tensors, prefix + ".bv").to_vector();
    b.wo = need(tensors, prefix + ".wo").to_matrix();
    b.bo = need(tensors, prefix + ".bo").to_vector();
    b.ffn1 = need(tensors, prefix + ".ffn1").to_matrix();
    b.ffn1_b = need(tensors, prefix + ".ffn1_b").to_vector();
    b.ffn2 = need(tensors, prefix + ".ffn2").to_matrix();
    b.ffn2_b = need(tensors, prefix + ".ffn2_b").to_vector();
    return b;
}

void pack_xcpe(TensorMap& out, const std::string& prefix, const dynamics::XcpeWeights& w) {
    for (std::size_t t = 0; t < w.taps.size(); ++t) {
        out[prefix + ".k" + std::to_string(t)] = Tensor::from_matrix(w.taps[t]);
    }
}

dynamics::XcpeWeights unpack_xcpe(const TensorMap& tensors, const std::string& prefix) {
    dynamics::XcpeWeights w;
    w.taps.reserve(27);
    for (int t = 0; t < 27; ++t) {
        w.taps.push_back(need(tensors, prefix + ".k" + std::to_string(t)).to_matrix());
    }
    return w;
}

}  // namespace

TensorMap pack_dynamics_weights(const dynamics::DynamicsWeights& w) {
    TensorMap out;
    for (std::size_t j = 0; j < w.encoder.size(); ++j) {
        const std::string prefix = "dyn.enc" + std::to_string(j);
        out[prefix + ".proj_w"] = Tensor::from_matrix(w.encoder[j].proj_w);
        out[prefix + ".proj_b"] = Tensor::from_vector(w.encoder[j].proj_b);
        out[prefix + ".embed"] = Tensor::from_matrix(w.encoder[j].embed);
        pack_xcpe(out, prefix + ".xcpe", w.encoder[j].xcpe);
        for (std::size_t b = 0; b < w.encoder[j].blocks.size(); ++b) {
            pack_block(out, prefix + ".blk" + std::to_string(b), w.encoder[j].blocks[b]);
        }
    }
    for (std::size_t d = 0; d < w.decoder.size(); ++d) {
        const std::string prefix = "dyn.dec" + std::to_string(d);
        out[prefix + ".proj_w"] = Tensor::from_matrix(w.decoder[d].proj_w);
        out[prefix + ".proj_b"] = Tensor::from_vector(w.decoder[d].proj_b);
        pack_xcpe(out, prefix + ".xcpe", w.decoder[d].xcpe);
        for (std::size_t b = 0; b < w.decoder[d].blocks.size(); ++b) {
            pack_block(out, prefix + ".blk" + std::to_string(b), w.decoder[d].blocks[b]);
        }
    }
    out["dyn.head.w1"] = Tensor::from_matrix(w.head_w1);
    out["dyn.head.b1"] = Tensor::from_vector(w.head_b1);
    out["dyn.head.w2"] = Tensor::from_matrix(w.head_w2);
    out["dyn.head.b2"] = Tensor::from_vector(w.head_b2);
    out["dyn.head.w3"] = Tensor::from_matrix(w.head_w3);
    out["dyn.head.b3"] = Tensor::from_vector(w.head_b3);
    return out;
}

dynamics::DynamicsWeights unpack_dynamics_weights(const TensorMap& tensors,
                                                  const dynamics::DynamicsConfig& cfg) {
    dynamics::DynamicsWeights w;
    w.encoder.resize(cfg.stages());
    for (int j = 0; j < cfg.stages(); ++j) {
        const std::string prefix = "dyn.enc" + std::to_string(j);
        auto& st = w.encoder[j];
        st.proj_w = need(tensors, prefix + ".proj_w").to_matrix();
        st.proj_b = need(tensors, prefix + ".proj_b").to_vector();
        st.embed = need(tensors, prefix + ".embed").to_matrix();
        st.xcpe = unpack_xcpe(tensors, prefix + ".xcpe");
        st.blocks.resize(cfg.encoder_depths[j]);
        for (int b = 0; b < cfg.encoder_depths[j]; ++b) {
            st.blocks[b] = unpack_block(tensors, prefix + ".blk" + std::to_string(b));
        }
    }
    w.decoder.resize(cfg.stages() - 1);
    for (int d = 0; d < cfg.stages() - 1; ++d) {
        const std::string prefix = "dyn.dec" + std::to_string(d);
        auto& st = w.decoder[d];
        st.proj_w = need(tensors, prefix + ".proj_w").to_matrix();
        st.proj_b = need(tensors, prefix + ".proj_b").to_vector();
        st.xcpe = unpack_xcpe(tensors, prefix + ".xcpe");
        st.blocks.resize(cfg.decoder_depths[d]);
        for (int b = 0; b < cfg.decoder_depths[d]; ++b) {
            st.blocks[b] = unpack_block(tensors, prefix + ".blk" + std::to_string(b));
        }
    }
    w.head_w1 = need(tensors, "dyn.head.w1").to_matrix();
    w.head_b1 = need(tensors, "dyn.head.b1").to_vector();
    w.head_w2 = need(tensors, "dyn.head.w2").to_matrix();
    w.head_b2 = need(tensors, "dyn.head.b2").to_vector();
    w.head_w3 = need(tensors, "dyn.head.w3").to_matrix();
    w.head_b3 = need(tensors, "dyn.head.b3").to_vector();
    w.validate(cfg);
    return w;
}

TensorMap pack_gaussian_head(const features::GaussianHead& head) {
    TensorMap out;
    out["ghead.w1"] = Tensor::from_matrix(head.w1);
    out["ghead.b1"] = Tensor::from_vector(head.b1);
    out["ghead.w2"] = Tensor::from_matrix(head.w2);
    out["ghead.b2"] = Tensor::from_vector(head.b2);
    out["ghead.scale_gain"] = Tensor::scalar(head.scale_gain);
    return out;
}

features::GaussianHead unpack_gaussian_head(const TensorMap& tensors) {
    features::GaussianHead head;
    head.w1 = need(tensors, "ghead.w1").to_matrix();
    head.b1 = need(tensors, "ghead.b1").to_vector();
    head.w2 = need(tensors, "ghead.w2").to_matrix();
    head.b2 = need(tensors, "ghead.b2").to_vector();
    head.scale_gain = need(tensors, "ghead.scale_gain").to_scalar();
    return head;
}

TensorMap pack_film_network(const features::FilmNetwork& net) {
    TensorMap out;
    out["film.trunk_in_w"] = Tensor::from_matrix(net.trunk_in_w);
    out["film.trunk_in_b"] = Tensor::from_vector(net.trunk_in_b);
    out["film.cond1_w"] = Tensor::from_matrix(net.cond1_w);
    out["film.cond1_b"] = Tensor::from_vector(net.cond1_b);
    out["film.cond2_w"] = Tensor::from_matrix(net.cond2_w);
    out["film.cond2_b"] = Tensor::from_vector(net.cond2_b);
    out["film.trunk_out_w"] = Tensor::from_matrix(net.trunk_out_w);
    out["film.trunk_out_b"] = Tensor::from_vector(net.trunk_out_b);
    return out;
}

features::FilmNetwork unpack_film_network(const TensorMap& tensors) {
    features::FilmNetwork net;
    net.trunk_in_w = need(tensors, "film.trunk_in_w").to_matrix();
    net.trunk_in_b = need(tensors, "film.trunk_in_b").to_vector();
    net.cond1_w = need(tensors, "film.cond1_w").to_matrix();
    net.cond1_b = need(tensors, "film.cond1_b").to_vector();
    net.cond2_w = need(tensors, "film.cond2_w").to_matrix();
    net.cond2_b = need(tensors, "film.cond2_b").to_vector();
    net.trunk_out_w = need(tensors, "film.trunk_out_w").to_matrix();
    net.trunk_out_b = need(tensors, "film.trunk_out_b").to_vector();
    return net;
}

namespace {

std::vector<int> parse_int_list(const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::vector<std::string> parse_string_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        out.push_back(item);
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

}  // namespace

dynamics::DynamicsConfig load_config(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::runtime_error("cannot open: " + path);

    dynamics::DynamicsConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected key = value");
            }
            continue;
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        trim(key);
        trim(value);

        if (key == "encoder_depths") cfg.encoder_depths = parse_int_list(value);
        else if (key == "decoder_depths") cfg.decoder_depths = parse_int_list(value);
        else if (key == "pool_strides") cfg.pool_strides = parse_int_list(value);
        else if (key == "temporal_strides") cfg.temporal_strides = parse_int_list(value);
        else if (key == "patch_size") cfg.patch_size = std::stoi(value);
        else if (key == "enc_dims") cfg.enc_dims = parse_int_list(value);
        else if (key == "dec_dims") cfg.dec_dims = parse_int_list(value);
        else if (key == "enc_heads") cfg.enc_heads = parse_int_list(value);
        else if (key == "dec_heads") cfg.dec_heads = parse_int_list(value);
        else if (key == "grid_size") cfg.grid_size = std::stod(value);
        else if (key == "pattern_cycle") cfg.pattern_cycle = parse_string_list(value);
        else if (key == "d_inv") cfg.d_inv = std::stoi(value);
        else if (key == "d_dyn") cfg.d_dyn = std::stoi(value);
        else if (key == "t_max") cfg.t_max = std::stoi(value);
        else if (key == "grid_origin") {
            std::vector<std::string> parts = parse_string_list(value);
            if (parts.size() != 3) {
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": grid_origin needs three comma-separated values");
            }
            cfg.grid_origin = Eigen::Vector3d(std::stod(parts[0]), std::stod(parts[1]),
                                              std::stod(parts[2]));
        } else {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key '" +
                                     key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

void save_config(const dynamics::DynamicsConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "encoder_depths = " << join_ints(cfg.encoder_depths) << "\n";
    out << "decoder_depths = " << join_ints(cfg.decoder_depths) << "\n";
    out << "pool_strides = " << join_ints(cfg.pool_strides) << "\n";
    out << "temporal_strides = " << join_ints(cfg.temporal_strides) << "\n";
    out << "patch_size = " << cfg.patch_size << "\n";
    out << "enc_dims = " << join_ints(cfg.enc_dims) << "\n";
    out << "dec_dims = " << join_ints(cfg.dec_dims) << "\n";
    out << "enc_heads = " << join_ints(cfg.enc_heads) << "\n";
    out << "dec_heads = " << join_ints(cfg.dec_heads) << "\n";
    out << "grid_size = " << cfg.grid_size << "\n";
    out << "pattern_cycle = ";
    for (std::size_t i = 0; i < cfg.pattern_cycle.size(); ++i) {
        out << (i ? "," : "") << cfg.pattern_cycle[i];
    }
    out << "\n";
    out << "d_inv = " << cfg.d_inv << "\n";
    out << "d_dyn = " << cfg.d_dyn << "\n";
    out << "t_max = " << cfg.t_max << "\n";
    if (cfg.grid_origin) {
        out << "grid_origin = " << (*cfg.grid_origin)[0] << "," << (*cfg.grid_origin)[1] << ","
            << (*cfg.grid_origin)[2] << "\n";
    }
}

}  // namespace splatsim::io
