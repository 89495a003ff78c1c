#include "qmlp/package.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "qmlp/error.hpp"

namespace qmlp {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::string_view format_tag = "qmlp-package";

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::package_malformed, what); }

std::int64_t get_int(const Json& obj, const char* key, std::int64_t lo, std::int64_t hi) {
  if (!obj.is_object() || !obj.contains(key)) malformed(std::string("missing field '") + key + "'");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) malformed(std::string("field '") + key + "' must be an integer");
  const auto x = v.get<std::int64_t>();
  if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(hi)) {
    malformed(std::string("field '") + key + "' out of range");
  }
  if (x < lo || x > hi) malformed(std::string("field '") + key + "' out of range");
  return x;
}

double get_real(const Json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key) || !obj.at(key).is_string()) {
    malformed(std::string("field '") + key + "' must be a decimal string");
  }
  const auto& s = obj.at(key).get_ref<const std::string&>();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) malformed(std::string("field '") + key + "' is not a number");
  return v;
}

template <class T>
std::vector<T> get_int_array(const Json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_array()) malformed(std::string("field '") + key + "' must be an array");
  std::vector<T> out;
  for (const auto& v : obj.at(key)) {
    if (!v.is_number_integer()) malformed(std::string("array '") + key + "' holds a non-integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
      malformed(std::string("array '") + key + "' holds an out-of-range value");
    }
    out.push_back(static_cast<T>(x));
  }
  return out;
}

Json layer_to_json(const QuantizedLinearLayer& l) {
  Json j;
  j["rows"] = l.rows;
  j["cols"] = l.cols;
  j["weight_zero"] = l.weight_zero;
  j["input_zero"] = l.input_zero;
  j["output_zero"] = l.output_zero;
  j["m0"] = l.requant.m0;
  j["shift"] = l.requant.shift;
  j["multiplier"] = format_double17(l.requant.real);
  j["output_min"] = l.output_min;
  j["output_max"] = l.output_max;
  j["weights"] = l.weights;
  j["bias"] = l.bias;
  return j;
}

QuantizedLinearLayer layer_from_json(const Json& j) {
  QuantizedLinearLayer l;
  l.rows = static_cast<std::size_t>(get_int(j, "rows", 1, 1 << 20));
  l.cols = static_cast<std::size_t>(get_int(j, "cols", 1, 1 << 20));
  l.weight_zero = static_cast<std::int32_t>(get_int(j, "weight_zero", -128, 127));
  l.input_zero = static_cast<std::int32_t>(get_int(j, "input_zero", -128, 127));
  l.output_zero = static_cast<std::int32_t>(get_int(j, "output_zero", -128, 127));
  l.requant.m0 = static_cast<std::uint32_t>(get_int(j, "m0", 0, std::numeric_limits<std::uint32_t>::max()));
  l.requant.shift = static_cast<int>(get_int(j, "shift", 0, 62));
  l.requant.real = get_real(j, "multiplier");
  l.output_min = static_cast<std::int32_t>(get_int(j, "output_min", -128, 127));
  l.output_max = static_cast<std::int32_t>(get_int(j, "output_max", -128, 127));
  l.weights = get_int_array<std::int8_t>(j, "weights");
  l.bias = get_int_array<std::int32_t>(j, "bias");
  l.validate();
  return l;
}

Json params_to_json(const QuantParams& qp) {
  Json j;
  j["scale"] = format_double17(qp.scale);
  j["zero_point"] = qp.zero_point;
  j["bits"] = qp.bits;
  return j;
}

QuantParams params_from_json(const Json& j) {
  const double scale = get_real(j, "scale");
  const auto zp = static_cast<std::int32_t>(get_int(j, "zero_point", std::numeric_limits<std::int32_t>::min(),
                                                    std::numeric_limits<std::int32_t>::max()));
  const auto bits = static_cast<int>(get_int(j, "bits", 2, 32));
  try {
    return QuantParams::make(scale, zp, bits);
  } catch (const Error& e) {
    malformed(e.what());
  }
}

Json range_to_json(const ColumnRange& r) {
  Json j;
  j["min"] = format_double17(r.min);
  j["max"] = format_double17(r.max);
  return j;
}

ColumnRange range_from_json(const Json& j) {
  const ColumnRange r{get_real(j, "min"), get_real(j, "max")};
  if (!(r.min <= r.max)) malformed("normalization range has min > max");
  return r;
}

Json payload_to_json(const QuantizedMlp& m) {
  Json p;
  p["inputs"] = m.inputs();
  p["hidden"] = m.hidden_size();
  p["relu_zero"] = m.relu_zero;
  p["input"] = params_to_json(m.input_params);
  p["output"] = params_to_json(m.output_params);
  Json norm;
  norm["inputs"] = Json::array();
  for (const auto& r : m.norm.inputs) norm["inputs"].push_back(range_to_json(r));
  norm["target"] = range_to_json(m.norm.target);
  p["norm"] = std::move(norm);
  p["layers"] = Json::array({layer_to_json(m.hidden), layer_to_json(m.output)});
  return p;
}

QuantizedMlp payload_from_json(const Json& p) {
  if (!p.is_object()) malformed("payload must be an object");
  QuantizedMlp m;
  const auto inputs = get_int(p, "inputs", 1, 1 << 20);
  const auto hidden = get_int(p, "hidden", 1, 1 << 20);
  m.relu_zero = static_cast<std::int32_t>(get_int(p, "relu_zero", -128, 127));
  if (!p.contains("input") || !p.contains("output") || !p.contains("norm") || !p.contains("layers")) {
    malformed("payload is missing a section");
  }
  m.input_params = params_from_json(p.at("input"));
  m.output_params = params_from_json(p.at("output"));
  const auto& norm = p.at("norm");
  if (!norm.is_object() || !norm.contains("inputs") || !norm.at("inputs").is_array() || !norm.contains("target")) {
    malformed("bad normalization section");
  }
  for (const auto& r : norm.at("inputs")) m.norm.inputs.push_back(range_from_json(r));
  m.norm.target = range_from_json(norm.at("target"));
  const auto& layers = p.at("layers");
  if (!layers.is_array() || layers.size() != 2) malformed("expected exactly two layers");
  m.hidden = layer_from_json(layers[0]);
  m.output = layer_from_json(layers[1]);
  if (static_cast<std::int64_t>(m.hidden.cols) != inputs || static_cast<std::int64_t>(m.hidden.rows) != hidden) {
    malformed("declared shape disagrees with the hidden layer");
  }
  m.validate();
  return m;
}

std::string checksum_text(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string format_double17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string serialize_package(const QuantizedMlp& m) {
  m.validate();
  Json doc;
  doc["format"] = format_tag;
  doc["version"] = package_format_version;
  doc["payload"] = payload_to_json(m);
  doc["checksum"] = checksum_text(fnv1a64(doc.dump(2)));
  return doc.dump(2) + "\n";
}

QuantizedMlp parse_package(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::package_checksum, std::string("package is truncated or corrupted: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("format") || doc.at("format") != format_tag) {
    malformed("not a qmlp package");
  }
  const auto version = get_int(doc, "version", std::numeric_limits<std::int64_t>::min(),
                               std::numeric_limits<std::int64_t>::max());
  if (version != package_format_version) {
    throw Error(ErrorCode::package_version, "package version " + std::to_string(version) + " is not supported (expected " +
                                                std::to_string(package_format_version) + ")");
  }
  if (!doc.contains("checksum") || !doc.at("checksum").is_string()) {
    throw Error(ErrorCode::package_checksum, "package has no checksum");
  }
  if (doc.dump(2) + "\n" != text) {
    throw Error(ErrorCode::package_checksum, "package bytes differ from the canonical layout");
  }
  const std::string stored = doc.at("checksum").get<std::string>();
  Json body = doc;
  body.erase("checksum");
  if (checksum_text(fnv1a64(body.dump(2))) != stored) {
    throw Error(ErrorCode::package_checksum, "package checksum mismatch");
  }
  if (!doc.contains("payload")) malformed("package has no payload");
  try {
    return payload_from_json(doc.at("payload"));
  } catch (const nlohmann::json::exception& e) {
    malformed(e.what());
  }
}

void export_package(const QuantizedMlp& m, const std::filesystem::path& path) {
  const auto text = serialize_package(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
  out << text;
}

QuantizedMlp load_package(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_package(buf.str());
}

}  // namespace qmlp
