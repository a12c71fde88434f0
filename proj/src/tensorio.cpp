// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <json.hpp>

#include "mergeforge/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive buffers are copied verbatim and assume a little-endian host");

namespace mergeforge {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kMaxHeaderLength = std::uint64_t{100} << 20;

// Read-only private mapping of a whole file.
class MappedFile {
public:
    explicit MappedFile(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd_ < 0) {
            raise(ErrorCode::UnreadableFile, path.string() + ": " + std::strerror(errno));
        }
        struct stat st {};
        if (::fstat(fd_, &st) != 0) {
            ::close(fd_);
            raise(ErrorCode::IoFailure, path.string() + ": fstat failed");
        }
        size_ = static_cast<std::size_t>(st.st_size);
        if (size_ > 0) {
            void* p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
            if (p == MAP_FAILED) {
                ::close(fd_);
                raise(ErrorCode::IoFailure, path.string() + ": mmap failed");
            }
            data_ = static_cast<const std::byte*>(p);
        }
    }
    MappedFile(const MappedFile&) = delete;
    MappedFile& operator=(const MappedFile&) = delete;
    ~MappedFile() {
        if (data_ != nullptr) ::munmap(const_cast<std::byte*>(data_), size_);
        if (fd_ >= 0) ::close(fd_);
    }

    std::span<const std::byte> bytes() const noexcept { return {data_, size_}; }

private:
    int fd_ = -1;
    const std::byte* data_ = nullptr;
    std::size_t size_ = 0;
};

std::uint64_t load_u64_le(const std::byte* p) {
    std::uint64_t v = 0;
    std::memcpy(&v, p, sizeof v);
    return v;
}

[[noreturn]] void malformed(const std::string& what) { raise(ErrorCode::MalformedHeader, what); }

Shape parse_shape(const nlohmann::json& j, const std::string& name) {
    if (!j.is_array()) malformed("shape of '" + name + "' is not an array");
    Shape shape;
    shape.reserve(j.size());
    for (const auto& d : j) {
        if (!d.is_number_unsigned()) malformed("shape of '" + name + "' has a non-integer or negative dimension");
        shape.push_back(d.get<std::uint64_t>());
    }
    return shape;
}

// Element count that reports overflow instead of wrapping.
std::optional<std::uint64_t> checked_numel(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) return std::nullopt;
        n *= d;
    }
    return n;
}

}  // namespace

std::size_t dtype_width(DType dtype) noexcept { return dtype == DType::F32 ? 4 : 2; }

std::string_view dtype_name(DType dtype) noexcept { return dtype == DType::F32 ? "F32" : "F16"; }

DType parse_dtype(std::string_view name) {
    if (name == "F32") return DType::F32;
    if (name == "F16") return DType::F16;
    raise(ErrorCode::UnknownDtype, std::string(name));
}

std::uint64_t element_count(const Shape& shape) {
    auto n = checked_numel(shape);
    if (!n) raise(ErrorCode::InvariantViolation, "element count overflows: " + shape_to_string(shape));
    return *n;
}

std::string shape_to_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::uint16_t float_to_half(float value) noexcept {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t mag = bits & 0x7fffffffu;

    if (mag >= 0x7f800000u) {
        if (mag == 0x7f800000u) return sign | 0x7c00u;
        // NaN: keep the top payload bits and force quiet.
        return static_cast<std::uint16_t>(sign | 0x7e00u | ((mag >> 13) & 0x3ffu));
    }
    if (mag >= 0x477ff000u) return sign | 0x7c00u;  // >= 65520 rounds to infinity
    if (mag < 0x38800000u) {
        // Subnormal (or zero) result: value = m * 2^-24. Scaling by 2^24 is
        // exact, and nearbyint rounds ties to even in the default mode.
        const float scaled = std::bit_cast<float>(mag) * 16777216.0f;
        const auto m = static_cast<std::uint32_t>(std::nearbyint(scaled));
        return static_cast<std::uint16_t>(sign | m);
    }
    const std::uint32_t exponent = (mag >> 23) - 127 + 15;
    std::uint32_t half = (exponent << 10) | ((mag >> 13) & 0x3ffu);
    const std::uint32_t rest = mag & 0x1fffu;
    if (rest > 0x1000u || (rest == 0x1000u && (half & 1u))) ++half;  // carry may bump the exponent
    return static_cast<std::uint16_t>(sign | half);
}

float half_to_float(std::uint16_t h) noexcept {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    const std::uint32_t exponent = (h >> 10) & 0x1fu;
    const std::uint32_t mantissa = h & 0x3ffu;
    if (exponent == 0) {
        const float mag = static_cast<float>(mantissa) * (1.0f / 16777216.0f);
        return std::bit_cast<float>(std::bit_cast<std::uint32_t>(mag) | sign);
    }
    if (exponent == 0x1f) return std::bit_cast<float>(sign | 0x7f800000u | (mantissa << 13));
    return std::bit_cast<float>(sign | ((exponent - 15 + 127) << 23) | (mantissa << 13));
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : dtype_(DType::F32), shape_(), numel_(1), bytes_(4) {}

Tensor::Tensor(DType dtype, Shape shape, std::vector<std::byte> bytes)
    : dtype_(dtype), shape_(std::move(shape)), numel_(element_count(shape_)), bytes_(std::move(bytes)) {
    if (numel_ > bytes_.max_size() / dtype_width(dtype_) || bytes_.size() != numel_ * dtype_width(dtype_)) {
        raise(ErrorCode::InvariantViolation,
              "tensor of shape " + shape_to_string(shape_) + " needs " + std::to_string(numel_ * dtype_width(dtype_)) +
                  " bytes, got " + std::to_string(bytes_.size()));
    }
}

Tensor Tensor::from_f32(Shape shape, std::span<const float> values, DType dtype) {
    std::vector<std::byte> bytes(values.size() * dtype_width(dtype));
    if (dtype == DType::F32) {
        if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint16_t h = float_to_half(values[i]);
            std::memcpy(bytes.data() + 2 * i, &h, 2);
        }
    }
    return Tensor(dtype, std::move(shape), std::move(bytes));
}

Tensor Tensor::from_f64(Shape shape, std::span<const double> values, DType dtype) {
    std::vector<float> narrowed(values.begin(), values.end());
    return from_f32(std::move(shape), narrowed, dtype);
}

std::vector<double> Tensor::to_f64() const {
    const auto values = to_f32();
    return {values.begin(), values.end()};
}

std::vector<float> Tensor::to_f32() const {
    std::vector<float> out(numel_);
    if (dtype_ == DType::F32) {
        if (!out.empty()) std::memcpy(out.data(), bytes_.data(), bytes_.size());
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            std::uint16_t h;
            std::memcpy(&h, bytes_.data() + 2 * i, 2);
            out[i] = half_to_float(h);
        }
    }
    return out;
}

Tensor cast(const Tensor& tensor, DType target) {
    if (tensor.dtype() == target) return tensor;
    const auto values = tensor.to_f32();
    return Tensor::from_f32(tensor.shape(), values, target);
}

// ---- TensorArchive --------------------------------------------------------

bool is_valid_tensor_name(std::string_view name) noexcept {
    if (name.empty()) return false;
    return std::none_of(name.begin(), name.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u < 0x20 || u == 0x7f;
    });
}

void TensorArchive::add(std::string name, Tensor tensor) {
    if (!is_valid_tensor_name(name)) raise(ErrorCode::InvariantViolation, "invalid tensor name '" + name + "'");
    if (name == "__metadata__") raise(ErrorCode::InvariantViolation, "reserved tensor name '__metadata__'");
    if (tensors_.contains(name)) raise(ErrorCode::InvariantViolation, "duplicate tensor name '" + name + "'");
    tensors_.emplace(std::move(name), std::move(tensor));
}

void TensorArchive::set(std::string name, Tensor tensor) {
    if (!is_valid_tensor_name(name) || name == "__metadata__") {
        raise(ErrorCode::InvariantViolation, "invalid tensor name '" + name + "'");
    }
    tensors_.insert_or_assign(std::move(name), std::move(tensor));
}

bool TensorArchive::contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

const Tensor& TensorArchive::at(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) raise(ErrorCode::UnknownTensor, std::string(name));
    return it->second;
}

const Tensor* TensorArchive::find(std::string_view name) const {
    auto it = tensors_.find(name);
    return it == tensors_.end() ? nullptr : &it->second;
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

// ---- serialization --------------------------------------------------------

std::vector<std::byte> serialize_archive(const TensorArchive& archive) {
    ordered_json header = ordered_json::object();
    if (!archive.metadata().empty()) {
        ordered_json meta = ordered_json::object();
        for (const auto& [k, v] : archive.metadata()) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : archive.tensors()) {
        ordered_json entry = ordered_json::object();
        entry["dtype"] = dtype_name(tensor.dtype());
        entry["shape"] = tensor.shape();
        entry["data_offsets"] = {offset, offset + tensor.bytes().size()};
        header[name] = std::move(entry);
        offset += tensor.bytes().size();
    }
    std::string text;
    try {
        text = header.dump();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::InvariantViolation, std::string("header not encodable: ") + e.what());
    }

    std::vector<std::byte> out(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::byte* cursor = out.data() + 8 + text.size();
    for (const auto& [_, tensor] : archive.tensors()) {
        const auto b = tensor.bytes();
        if (!b.empty()) std::memcpy(cursor, b.data(), b.size());
        cursor += b.size();
    }
    return out;
}

ArchiveHeader parse_header(std::span<const std::byte> header_text, std::uint64_t buffer_size) {
    ArchiveHeader result;
    result.header_length = header_text.size();

    // Track top-level keys during parsing: a JSON object silently keeps the
    // last duplicate, which would hide a repeated tensor name.
    std::set<std::string> seen;
    std::string duplicate;
    auto on_event = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
        if (event == nlohmann::json::parse_event_t::key && depth == 1 && parsed.is_string()) {
            auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };

    nlohmann::json header;
    try {
        const auto* begin = reinterpret_cast<const char*>(header_text.data());
        header = nlohmann::json::parse(begin, begin + header_text.size(), on_event);
    } catch (const nlohmann::json::exception& e) {
        malformed(std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) malformed("header is not a JSON object");
    if (!duplicate.empty()) malformed("duplicate header key '" + duplicate + "'");

    for (auto it = header.begin(); it != header.end(); ++it) {
        const std::string& name = it.key();
        const auto& value = it.value();
        if (name == "__metadata__") {
            if (!value.is_object()) malformed("__metadata__ is not an object");
            for (auto m = value.begin(); m != value.end(); ++m) {
                if (!m.value().is_string()) malformed("__metadata__ value for '" + m.key() + "' is not a string");
                result.metadata.emplace(m.key(), m.value().get<std::string>());
            }
            continue;
        }
        if (!is_valid_tensor_name(name)) malformed("invalid tensor name '" + name + "'");
        if (!value.is_object()) malformed("entry '" + name + "' is not an object");
        auto dt = value.find("dtype");
        auto sh = value.find("shape");
        auto off = value.find("data_offsets");
        if (dt == value.end() || sh == value.end() || off == value.end()) {
            malformed("entry '" + name + "' lacks dtype, shape or data_offsets");
        }
        if (!dt->is_string()) malformed("dtype of '" + name + "' is not a string");
        HeaderEntry entry;
        entry.name = name;
        entry.dtype = parse_dtype(dt->get<std::string>());
        entry.shape = parse_shape(*sh, name);
        if (!off->is_array() || off->size() != 2 || !(*off)[0].is_number_unsigned() ||
            !(*off)[1].is_number_unsigned()) {
            malformed("data_offsets of '" + name + "' must be two non-negative integers");
        }
        entry.begin = (*off)[0].get<std::uint64_t>();
        entry.end = (*off)[1].get<std::uint64_t>();

        auto numel = checked_numel(entry.shape);
        if (!numel || *numel > std::numeric_limits<std::uint64_t>::max() / dtype_width(entry.dtype)) {
            malformed("shape of '" + name + "' overflows");
        }
        if (entry.begin > entry.end) raise(ErrorCode::OffsetOverlap, "'" + name + "' has begin > end");
        if (entry.end > buffer_size) {
            raise(ErrorCode::OffsetOverlap, "'" + name + "' ends at " + std::to_string(entry.end) +
                                                " beyond the " + std::to_string(buffer_size) + "-byte buffer");
        }
        if (entry.end - entry.begin != *numel * dtype_width(entry.dtype)) {
            raise(ErrorCode::OffsetOverlap, "'" + name + "' byte range length disagrees with dtype and shape");
        }
        result.entries.push_back(std::move(entry));
    }

    std::vector<const HeaderEntry*> by_offset;
    for (const auto& e : result.entries) by_offset.push_back(&e);
    std::sort(by_offset.begin(), by_offset.end(), [](const HeaderEntry* a, const HeaderEntry* b) {
        return std::tie(a->begin, a->end) < std::tie(b->begin, b->end);
    });
    // Empty ranges occupy no bytes and cannot overlap anything.
    const HeaderEntry* previous = nullptr;
    for (const auto* e : by_offset) {
        if (e->begin == e->end) continue;
        if (previous != nullptr && e->begin < previous->end) {
            raise(ErrorCode::OffsetOverlap, "'" + previous->name + "' and '" + e->name + "' overlap");
        }
        previous = e;
    }
    std::sort(result.entries.begin(), result.entries.end(),
              [](const HeaderEntry& a, const HeaderEntry& b) { return a.name < b.name; });
    return result;
}

namespace {

std::pair<std::uint64_t, std::span<const std::byte>> split_header(std::span<const std::byte> image) {
    if (image.size() < 8) malformed("file shorter than the 8-byte length prefix");
    const std::uint64_t n = load_u64_le(image.data());
    if (n > kMaxHeaderLength || n > image.size() - 8) {
        malformed("header length " + std::to_string(n) + " exceeds the file");
    }
    return {n, image.subspan(8, n)};
}

}  // namespace

TensorArchive deserialize_archive(std::span<const std::byte> image) {
    auto [n, text] = split_header(image);
    const auto buffer = image.subspan(8 + n);
    ArchiveHeader header = parse_header(text, buffer.size());

    TensorArchive archive;
    archive.metadata() = std::move(header.metadata);
    for (auto& e : header.entries) {
        auto slice = buffer.subspan(e.begin, e.end - e.begin);
        std::vector<std::byte> bytes(slice.begin(), slice.end());
        archive.add(std::move(e.name), Tensor(e.dtype, std::move(e.shape), std::move(bytes)));
    }
    return archive;
}

TensorArchive read_archive(const std::filesystem::path& path) {
    MappedFile file(path);
    return deserialize_archive(file.bytes());
}

ArchiveHeader read_header(const std::filesystem::path& path) {
    MappedFile file(path);
    auto [n, text] = split_header(file.bytes());
    return parse_header(text, file.bytes().size() - 8 - n);
}

void write_archive(const TensorArchive& archive, const std::filesystem::path& path) {
    const auto image = serialize_archive(archive);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) raise(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
        out.flush();
        if (!out) raise(ErrorCode::IoFailure, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        raise(ErrorCode::IoFailure, "cannot move archive into place at " + path.string());
    }
}

// ---- compatibility --------------------------------------------------------

std::string CompatReport::summary() const {
    if (ok()) return "OK";
    std::ostringstream os;
    for (const auto& m : missing) os << "missing '" << m.name << "' in archive " << m.archive_index + 1 << "; ";
    for (const auto& s : shape_mismatches) {
        os << "shape of '" << s.name << "' in archive " << s.archive_index + 1 << " is " << shape_to_string(s.actual)
           << ", expected " << shape_to_string(s.expected) << "; ";
    }
    auto text = os.str();
    return text.substr(0, text.size() - 2);
}

CompatReport validate_compat(std::span<const TensorArchive* const> archives) {
    if (archives.empty()) raise(ErrorCode::InvariantViolation, "validate_compat needs at least one archive");
    std::map<std::string, const Shape*, std::less<>> reference;
    for (const auto* a : archives) {
        for (const auto& [name, tensor] : a->tensors()) reference.emplace(name, &tensor.shape());
    }
    CompatReport report;
    for (const auto& [name, shape] : reference) {
        for (std::size_t i = 0; i < archives.size(); ++i) {
            const Tensor* t = archives[i]->find(name);
            if (t == nullptr) {
                report.missing.push_back({name, i});
            } else if (t->shape() != *shape) {
                report.shape_mismatches.push_back({name, i, *shape, t->shape()});
            }
        }
    }
    return report;
}

CompatReport validate_compat(std::span<const TensorArchive> archives) {
    std::vector<const TensorArchive*> ptrs;
    for (const auto& a : archives) ptrs.push_back(&a);
    return validate_compat(std::span<const TensorArchive* const>(ptrs));
}

}  // namespace mergeforge
