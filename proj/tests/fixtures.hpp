// SPDX-License-Identifier: Apache-2.0
//
// Fixtures shared by the unit and acceptance suites: a golden archive, a
// corpus of malformed archive images, and published result tables.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "mergeforge/error.hpp"
#include "mergeforge/evalmetrics.hpp"
#include "mergeforge/tensorio.hpp"
#include "support.hpp"

namespace fixtures {

// ---- golden archive -------------------------------------------------------

inline const std::string kGoldenHeader =
    R"({"__metadata__":{"k":"v"},"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
    R"("b":{"dtype":"F16","shape":[1],"data_offsets":[8,10]}})";

inline mergeforge::TensorArchive golden_archive() {
    mergeforge::TensorArchive a;
    a.add("b", mergeforge::Tensor::from_f32({1}, std::vector<float>{1.0f}, mergeforge::DType::F16));
    a.add("a", testing::f32({1.0f, 2.0f}));
    a.metadata()["k"] = "v";
    return a;
}

/// Expected file bytes, assembled independently of the writer.
inline std::vector<std::byte> golden_bytes() {
    auto img = testing::raw_image(kGoldenHeader, 10);
    const std::size_t off = 8 + kGoldenHeader.size();
    const unsigned char data[10] = {0x00, 0x00, 0x80, 0x3f,   // 1.0f
                                    0x00, 0x00, 0x00, 0x40,   // 2.0f
                                    0x00, 0x3c};              // 1.0 half
    for (std::size_t i = 0; i < 10; ++i) img[off + i] = static_cast<std::byte>(data[i]);
    return img;
}

// ---- malformed corpus -----------------------------------------------------

struct BadImage {
    std::string label;
    std::vector<std::byte> image;
    mergeforge::ErrorCode expected;
};

inline std::vector<BadImage> malformed_corpus() {
    using mergeforge::ErrorCode;
    using testing::raw_image;
    std::vector<BadImage> c;
    auto entry = [](const std::string& name, const std::string& dtype, const std::string& shape, std::uint64_t b,
                    std::uint64_t e) {
        return "\"" + name + "\":{\"dtype\":\"" + dtype + "\",\"shape\":" + shape + ",\"data_offsets\":[" +
               std::to_string(b) + "," + std::to_string(e) + "]}";
    };
    c.push_back({"overlapping ranges",
                 raw_image("{" + entry("a", "F32", "[2]", 0, 8) + "," + entry("b", "F32", "[2]", 4, 12) + "}", 12),
                 ErrorCode::OffsetOverlap});
    c.push_back({"buffer one byte short", raw_image("{" + entry("a", "F32", "[2]", 0, 8) + "}", 7),
                 ErrorCode::OffsetOverlap});
    c.push_back({"begin after end", raw_image("{" + entry("a", "F32", "[0]", 8, 4) + "}", 8),
                 ErrorCode::OffsetOverlap});
    c.push_back({"range shorter than shape", raw_image("{" + entry("a", "F32", "[2]", 0, 4) + "}", 8),
                 ErrorCode::OffsetOverlap});
    c.push_back({"range longer than shape", raw_image("{" + entry("a", "F16", "[2]", 0, 8) + "}", 8),
                 ErrorCode::OffsetOverlap});
    c.push_back({"same range twice",
                 raw_image("{" + entry("a", "F32", "[1]", 0, 4) + "," + entry("b", "F32", "[1]", 0, 4) + "}", 4),
                 ErrorCode::OffsetOverlap});
    c.push_back({"negative offset",
                 raw_image(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[-4,0]}})", 4),
                 ErrorCode::MalformedHeader});
    c.push_back({"offsets not a pair",
                 raw_image(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0]}})", 4),
                 ErrorCode::MalformedHeader});
    c.push_back({"missing data_offsets", raw_image(R"({"a":{"dtype":"F32","shape":[1]}})", 4),
                 ErrorCode::MalformedHeader});
    c.push_back({"unknown dtype", raw_image("{" + entry("a", "BF16", "[1]", 0, 2) + "}", 2),
                 ErrorCode::UnknownDtype});
    c.push_back({"header is not JSON", raw_image("{\"a\":", 0), ErrorCode::MalformedHeader});
    c.push_back({"header is an array", raw_image("[1,2]", 0), ErrorCode::MalformedHeader});
    c.push_back({"duplicate tensor name",
                 raw_image("{" + entry("a", "F32", "[1]", 0, 4) + "," + entry("a", "F32", "[1]", 4, 8) + "}", 8),
                 ErrorCode::MalformedHeader});
    {
        auto img = raw_image("{}", 0);
        img[0] = std::byte{0xff};  // declared header far beyond the file
        c.push_back({"header length past end of file", img, ErrorCode::MalformedHeader});
    }
    c.push_back({"file shorter than length prefix", std::vector<std::byte>(5, std::byte{0}),
                 ErrorCode::MalformedHeader});
    return c;
}

// ---- published tables -----------------------------------------------------

inline const std::vector<std::string> kLanguages = {"English", "Hindi", "Arabic", "French", "Spanish", "Russian"};
inline const std::vector<std::string> kMethods = {"0% Safety", "15% Safety", "100% Safety", "Linear",
                                                  "SLERP",     "TIES",       "DARE-TIES"};
inline const std::string kBaselineRow = "15% Safety";

using PerLanguage = std::map<std::string, std::array<double, 6>>;

// Per-language safety (relative % change in harmful generations), SFT checkpoints.
inline const PerLanguage kSftSafety = {
    {"0% Safety", {-58.5, -46.8, -41.4, -33.3, -32.3, -34.0}},   {"15% Safety", {-69.1, -47.3, -57.2, -51.4, -53.5, -58.1}},
    {"100% Safety", {-72.7, -51.4, -59.8, -55.7, -70.7, -72.7}}, {"Linear", {-58.2, -55.7, -48.2, -44.6, -39.9, -48.2}},
    {"SLERP", {-64.4, -65.1, -55.7, -56.4, -51.4, -56.1}},       {"TIES", {-57.5, -45.7, -46.0, -42.4, -33.1, -46.7}},
    {"DARE-TIES", {-59.3, -57.9, -57.2, -55.0, -50.7, -56.8}},
};
// Per-language general win-rates, SFT checkpoints.
inline const PerLanguage kSftGeneral = {
    {"0% Safety", {68.5, 57.5, 76.5, 73.0, 77.0, 67.5}},   {"15% Safety", {69.5, 67.0, 69.0, 68.5, 68.5, 62.0}},
    {"100% Safety", {66.5, 56.0, 62.5, 72.0, 66.0, 66.0}}, {"Linear", {74.0, 67.5, 78.0, 78.5, 80.5, 75.0}},
    {"SLERP", {72.5, 64.5, 78.5, 72.5, 78.5, 69.0}},       {"TIES", {77.5, 64.5, 78.5, 70.5, 80.5, 78.0}},
    {"DARE-TIES", {68.0, 63.0, 74.0, 73.5, 71.0, 72.5}},
};
// Per-language safety, DPO checkpoints.
inline const PerLanguage kDpoSafety = {
    {"0% Safety", {-59.1, -45.6, -36.5, -28.7, -28.6, -34.4}},   {"15% Safety", {-68.8, -42.7, -57.9, -42.2, -54.9, -58.1}},
    {"100% Safety", {-76.4, -62.8, -61.3, -62.4, -67.0, -77.9}}, {"Linear", {-33.4, -46.7, -55.0, -50.0, -45.3, -61.1}},
    {"SLERP", {-56.1, -61.1, -61.8, -55.4, -49.6, -62.9}},       {"TIES", {-59.7, -61.5, -69.4, -58.2, -66.2, -75.5}},
    {"DARE-TIES", {-53.2, -61.8, -61.1, -48.2, -48.3, -62.6}},
};
// Per-language general win-rates, DPO checkpoints.
inline const PerLanguage kDpoGeneral = {
    {"0% Safety", {71.5, 56.0, 72.0, 75.0, 79.5, 70.0}},   {"15% Safety", {74.0, 61.0, 71.5, 73.0, 78.0, 68.5}},
    {"100% Safety", {77.0, 68.0, 77.5, 72.0, 79.5, 77.0}}, {"Linear", {77.0, 63.5, 78.0, 80.0, 80.5, 74.5}},
    {"SLERP", {81.0, 69.0, 79.5, 77.5, 84.0, 77.5}},       {"TIES", {59.5, 61.0, 69.0, 65.6, 65.5, 61.0}},
    {"DARE-TIES", {77.5, 68.5, 78.5, 83.0, 82.0, 81.5}},
};

// Headline aggregates: SFT safety, SFT general, DPO safety, DPO general.
struct HeadlineRow {
    double sft_safety, sft_general, dpo_safety, dpo_general;
};
inline const std::map<std::string, HeadlineRow> kHeadline = {
    {"0% Safety", {-41.4, 70.0, -39.2, 70.7}}, {"15% Safety", {-56.6, 67.4, -54.69, 71.0}},
    {"100% Safety", {-64.4, 64.8, -68.2, 75.0}}, {"Linear", {-49.1, 76.0, -48.6, 75.0}},
    {"SLERP", {-58.2, 72.6, -57.8, 78.0}},     {"TIES", {-45.2, 74.9, -65.1, 63.6}},
    {"DARE-TIES", {-56.1, 70.0, -55.9, 78.5}},
};

// Printed deltas for the merge rows, same column order.
struct HeadlineDeltas {
    std::string sft_safety, sft_general, dpo_safety, dpo_general;
};
inline const std::map<std::string, HeadlineDeltas> kHeadlineDeltas = {
    {"Linear", {"(-7.5)", "(+8.6)", "(-6.1)", "(+4.0)"}},
    {"SLERP", {"(+1.2)", "(+5.2)", "(+3.1)", "(+7.0)"}},
    {"TIES", {"(-11.4)", "(+7.5)", "(+10.4)", "(-7.4)"}},
    {"DARE-TIES", {"(-0.5)", "(+2.6)", "(+1.2)", "(+7.5)"}},
};

/// Metric table holding only the headline aggregates of one training regime.
inline mergeforge::MetricTable headline_table(bool dpo) {
    mergeforge::MetricTable t;
    t.baseline_row = kBaselineRow;
    t.row_order = kMethods;
    for (const auto& m : kMethods) {
        const auto& h = kHeadline.at(m);
        auto& cell = t.rows[m][mergeforge::kAggregateColumn];
        cell.safety = dpo ? h.dpo_safety : h.sft_safety;
        cell.general = dpo ? h.dpo_general : h.sft_general;
    }
    return t;
}

}  // namespace fixtures
