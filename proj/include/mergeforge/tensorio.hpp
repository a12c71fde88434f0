// SPDX-License-Identifier: Apache-2.0
//
// Single-file tensor archives: an 8-byte little-endian header length N,
// N bytes of JSON header, then the raw little-endian data buffer.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mergeforge {

enum class DType { F32, F16 };

std::size_t dtype_width(DType dtype) noexcept;
std::string_view dtype_name(DType dtype) noexcept;
/// Throws UnknownDtype for anything other than "F32" / "F16".
DType parse_dtype(std::string_view name);

using Shape = std::vector<std::uint64_t>;

/// Product of dimensions; the empty shape is a scalar with one element.
std::uint64_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// IEEE binary16 conversions. float_to_half rounds to nearest, ties to even.
std::uint16_t float_to_half(float value) noexcept;
float half_to_float(std::uint16_t bits) noexcept;

/// Dense row-major tensor holding its little-endian bytes.
class Tensor {
public:
    Tensor();
    /// Throws InvariantViolation when the byte count disagrees with shape and dtype.
    Tensor(DType dtype, Shape shape, std::vector<std::byte> bytes);

    static Tensor from_f32(Shape shape, std::span<const float> values, DType dtype = DType::F32);
    /// Narrowed through F32 (round-to-nearest-even at each step).
    static Tensor from_f64(Shape shape, std::span<const double> values, DType dtype = DType::F32);

    DType dtype() const noexcept { return dtype_; }
    const Shape& shape() const noexcept { return shape_; }
    std::uint64_t numel() const noexcept { return numel_; }
    std::span<const std::byte> bytes() const noexcept { return bytes_; }

    /// Decoded values widened to F32 (exact for both supported dtypes).
    std::vector<float> to_f32() const;
    std::vector<double> to_f64() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    DType dtype_;
    Shape shape_;
    std::uint64_t numel_;
    std::vector<std::byte> bytes_;
};

/// F16 -> F32 is exact; F32 -> F16 rounds to nearest-even. Same dtype is identity.
Tensor cast(const Tensor& tensor, DType target);

/// Names must be nonempty and free of control characters.
bool is_valid_tensor_name(std::string_view name) noexcept;

/// Named tensors plus string metadata. Iteration order is sorted by name,
/// which is also the canonical on-disk order.
class TensorArchive {
public:
    using TensorMap = std::map<std::string, Tensor, std::less<>>;
    using Metadata = std::map<std::string, std::string, std::less<>>;

    /// Throws InvariantViolation for invalid or duplicate names.
    void add(std::string name, Tensor tensor);
    /// Insert or overwrite (name still validated).
    void set(std::string name, Tensor tensor);

    bool contains(std::string_view name) const;
    /// Throws UnknownTensor.
    const Tensor& at(std::string_view name) const;
    const Tensor* find(std::string_view name) const;

    const TensorMap& tensors() const noexcept { return tensors_; }
    std::size_t size() const noexcept { return tensors_.size(); }
    bool empty() const noexcept { return tensors_.empty(); }
    std::vector<std::string> names() const;

    Metadata& metadata() noexcept { return metadata_; }
    const Metadata& metadata() const noexcept { return metadata_; }

    friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

private:
    TensorMap tensors_;
    Metadata metadata_;
};

/// One tensor entry as declared in a file header.
struct HeaderEntry {
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t begin;
    std::uint64_t end;
};

struct ArchiveHeader {
    std::uint64_t header_length = 0;
    std::vector<HeaderEntry> entries;  // sorted by name
    TensorArchive::Metadata metadata;
};

/// Canonical serialization, shared by write_archive and the golden tests.
std::vector<std::byte> serialize_archive(const TensorArchive& archive);
/// Parse and validate a complete in-memory archive image.
TensorArchive deserialize_archive(std::span<const std::byte> image);
/// Parse and validate only the header; buffer_size is the byte count after the header.
ArchiveHeader parse_header(std::span<const std::byte> header_text, std::uint64_t buffer_size);

/// Errors: UnreadableFile / IoFailure, MalformedHeader, OffsetOverlap, UnknownDtype.
TensorArchive read_archive(const std::filesystem::path& path);
/// Reads just enough of the file to describe its tensors.
ArchiveHeader read_header(const std::filesystem::path& path);
/// Writes via a sibling temporary file that is renamed into place.
void write_archive(const TensorArchive& archive, const std::filesystem::path& path);

struct MissingTensor {
    std::string name;
    std::size_t archive_index;  // zero-based position in the input list
};

struct ShapeMismatch {
    std::string name;
    std::size_t archive_index;
    Shape expected;  // shape in the first archive containing the name
    Shape actual;
};

struct CompatReport {
    std::vector<MissingTensor> missing;
    std::vector<ShapeMismatch> shape_mismatches;

    bool ok() const noexcept { return missing.empty() && shape_mismatches.empty(); }
    std::string summary() const;
};

/// Mismatches are reported as data. Throws InvariantViolation on an empty list.
CompatReport validate_compat(std::span<const TensorArchive* const> archives);
CompatReport validate_compat(std::span<const TensorArchive> archives);

}  // namespace mergeforge
