// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <optional>

#include "mergeforge/error.hpp"
#include "mergeforge/tensorio.hpp"

namespace testing {

/// Error code raised by `f`, or nullopt when it returns normally.
template <class F>
std::optional<mergeforge::ErrorCode> error_of(F&& f) {
    try {
        f();
    } catch (const mergeforge::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

template <class F>
std::string error_detail(F&& f) {
    try {
        f();
    } catch (const mergeforge::Error& e) {
        return e.detail();
    }
    return {};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<unsigned> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("mergeforge-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline mergeforge::Tensor f32(std::vector<float> values, mergeforge::Shape shape = {}) {
    if (shape.empty()) shape = {values.size()};
    return mergeforge::Tensor::from_f32(shape, values);
}

inline mergeforge::TensorArchive single(const std::string& name, std::vector<float> values) {
    mergeforge::TensorArchive a;
    a.add(name, f32(std::move(values)));
    return a;
}

inline std::vector<std::byte> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<std::byte>(raw[i]);
    return out;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::byte>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Archive image with an arbitrary header and buffer, bypassing the writer.
inline std::vector<std::byte> raw_image(const std::string& header, std::size_t buffer_bytes) {
    std::vector<std::byte> out(8 + header.size() + buffer_bytes, std::byte{0});
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((n >> (8 * i)) & 0xff);
    for (std::size_t i = 0; i < header.size(); ++i) out[8 + i] = static_cast<std::byte>(header[i]);
    return out;
}

/// Toy checkpoint with `layers` decoder blocks plus unlayered embeddings.
inline mergeforge::TensorArchive toy_model(std::uint32_t seed, std::size_t layers = 5, std::size_t width = 4) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    auto rand_vec = [&](std::size_t n) {
        std::vector<float> v(n);
        for (auto& x : v) x = dist(rng);
        return v;
    };
    mergeforge::TensorArchive a;
    a.add("embed_tokens.weight", f32(rand_vec(width * 2), {2, width}));
    for (std::size_t l = 0; l < layers; ++l) {
        a.add("model.layers." + std::to_string(l) + ".mlp.weight", f32(rand_vec(width * width), {width, width}));
        a.add("model.layers." + std::to_string(l) + ".norm", f32(rand_vec(width)));
    }
    a.add("lm_head.weight", f32(rand_vec(width * 2), {2, width}));
    return a;
}

}  // namespace testing
