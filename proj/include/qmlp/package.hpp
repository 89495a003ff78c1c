#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "qmlp/int_infer.hpp"

namespace qmlp {

inline constexpr int package_format_version = 1;

// Deployment package: a single JSON document
//
//   { "format": "qmlp-package", "version": 1,
//     "payload": { layers, zero points, M0/n, scales, normalization },
//     "checksum": "<fnv1a-64 hex of the document without this field>" }
//
// Quantized values are exact JSON integers; scales and normalization bounds
// are decimal strings with 17 significant digits. The file must be in the
// canonical layout this writer produces, so any edited byte is caught either
// by the layout check or by the checksum.
std::string serialize_package(const QuantizedMlp& m);
QuantizedMlp parse_package(std::string_view text);

void export_package(const QuantizedMlp& m, const std::filesystem::path& path);
QuantizedMlp load_package(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// 17-significant-digit decimal text of `v`; parses back to exactly `v`.
std::string format_double17(double v);

}  // namespace qmlp
