#include "segdefer/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace segdefer {

static_assert(std::endian::native == std::endian::little,
              "array container I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(ArrayFileErrc code) {
  switch (code) {
    case ArrayFileErrc::io: return "io error";
    case ArrayFileErrc::malformed_header: return "malformed header";
    case ArrayFileErrc::unsupported_dtype: return "unsupported dtype";
    case ArrayFileErrc::shape_mismatch: return "shape mismatch";
    case ArrayFileErrc::non_finite: return "non-finite value";
    case ArrayFileErrc::out_of_range: return "value out of range";
  }
  return "array file error";
}

std::string_view to_string(Dtype d) {
  switch (d) {
    case Dtype::float32: return "float32";
    case Dtype::float64: return "float64";
    case Dtype::uint8: return "uint8";
  }
  return "?";
}

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::size_t element_size(Dtype d) {
  switch (d) {
    case Dtype::float32: return 4;
    case Dtype::float64: return 8;
    case Dtype::uint8: return 1;
  }
  return 0;
}

std::string descr(Dtype d) {
  switch (d) {
    case Dtype::float32: return "<f4";
    case Dtype::float64: return "<f8";
    case Dtype::uint8: return "|u1";
  }
  return "";
}

[[noreturn]] void fail(ArrayFileErrc code, const fs::path& path, const std::string& msg) {
  throw ArrayFileError(code, path.string() + ": " + msg);
}

// Value of `key` in the header dict, as the raw text up to the next top-level
// comma or closing brace.
std::string header_field(const std::string& header, const std::string& key, const fs::path& path) {
  const std::string quoted = "'" + key + "'";
  auto pos = header.find(quoted);
  if (pos == std::string::npos) fail(ArrayFileErrc::malformed_header, path, "missing key " + quoted);
  pos = header.find(':', pos + quoted.size());
  if (pos == std::string::npos) fail(ArrayFileErrc::malformed_header, path, "missing ':' after " + quoted);
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  std::size_t end = pos;
  int depth = 0;
  while (end < header.size()) {
    const char c = header[end];
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && (c == ',' || c == '}')) break;
    ++end;
  }
  if (end == pos) fail(ArrayFileErrc::malformed_header, path, "empty value for " + quoted);
  return header.substr(pos, end - pos);
}

Dtype parse_descr(std::string text, const fs::path& path) {
  if (text.size() < 2 || (text.front() != '\'' && text.front() != '"')) {
    fail(ArrayFileErrc::malformed_header, path, "descr is not a string");
  }
  text = text.substr(1, text.size() - 2);
  if (text == "<f4") return Dtype::float32;
  if (text == "<f8") return Dtype::float64;
  if (text == "|u1" || text == "<u1" || text == "u1") return Dtype::uint8;
  fail(ArrayFileErrc::unsupported_dtype, path, "descr '" + text + "' (supported: <f4, <f8, |u1)");
}

std::vector<Index> parse_shape(const std::string& text, const fs::path& path) {
  if (text.size() < 2 || text.front() != '(' || text.back() != ')') {
    fail(ArrayFileErrc::malformed_header, path, "shape is not a tuple");
  }
  std::vector<Index> shape;
  std::string body = text.substr(1, text.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    const auto last = item.find_last_not_of(' ');
    item = item.substr(first, last - first + 1);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      fail(ArrayFileErrc::malformed_header, path, "bad shape entry '" + item + "'");
    }
    if (used != item.size() || v < 0) fail(ArrayFileErrc::malformed_header, path, "bad shape entry '" + item + "'");
    shape.push_back(static_cast<Index>(v));
  }
  return shape;
}

template <typename T>
void append_as_double(const char* src, std::size_t count, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "write failed for " + path.string());
}

NpyArray expect(const fs::path& path, std::size_t rank) {
  NpyArray a = read_npy(path);
  if (a.shape.size() != rank) {
    fail(ArrayFileErrc::shape_mismatch, path,
         "expected rank " + std::to_string(rank) + ", got rank " + std::to_string(a.shape.size()));
  }
  return a;
}

void check_probabilities(const NpyArray& a, const fs::path& path) {
  if (a.dtype == Dtype::uint8) fail(ArrayFileErrc::unsupported_dtype, path, "probabilities must be float32/float64");
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double v = a.values[i];
    if (!std::isfinite(v)) fail(ArrayFileErrc::non_finite, path, "element " + std::to_string(i) + " is not finite");
    if (v < 0.0 || v > 1.0) {
      fail(ArrayFileErrc::out_of_range, path,
           "element " + std::to_string(i) + " = " + std::to_string(v) + " outside [0,1]");
    }
  }
}

PlaneXd to_plane(const NpyArray& a, std::size_t offset = 0) {
  PlaneXd p(a.shape[a.shape.size() - 2], a.shape[a.shape.size() - 1]);
  std::copy_n(a.values.begin() + static_cast<std::ptrdiff_t>(offset), p.size(), p.data());
  return p;
}

template <typename Scalar>
NpyArray from_plane(const Plane<Scalar>& p, Dtype dtype) {
  NpyArray a;
  a.dtype = dtype;
  a.shape = {p.rows(), p.cols()};
  a.values.assign(p.data(), p.data() + p.size());
  return a;
}

void write_pgm(const fs::path& path, Index rows, Index cols, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string() + " for writing");
  out << "P5\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "write failed for " + path.string());
}

}  // namespace

NpyArray read_npy(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ArrayFileErrc::io, path, "cannot open");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kMagicLen + 4 || std::memcmp(buf.data(), kMagic, kMagicLen) != 0) {
    fail(ArrayFileErrc::malformed_header, path, "missing \\x93NUMPY magic");
  }
  const auto major = static_cast<unsigned char>(buf[6]);
  const auto minor = static_cast<unsigned char>(buf[7]);
  if (major != 1 || minor != 0) {
    fail(ArrayFileErrc::malformed_header, path,
         "unsupported version " + std::to_string(major) + "." + std::to_string(minor) + " (only 1.0)");
  }
  const std::size_t header_len = static_cast<unsigned char>(buf[8]) |
                                 (static_cast<std::size_t>(static_cast<unsigned char>(buf[9])) << 8);
  const std::size_t data_start = 10 + header_len;
  if (buf.size() < data_start) fail(ArrayFileErrc::malformed_header, path, "truncated header");
  const std::string header(buf.data() + 10, header_len);
  if (header.find('{') == std::string::npos || header.find('}') == std::string::npos) {
    fail(ArrayFileErrc::malformed_header, path, "header is not a dict");
  }

  NpyArray a;
  a.dtype = parse_descr(header_field(header, "descr", path), path);
  const std::string fortran = header_field(header, "fortran_order", path);
  if (fortran == "True") fail(ArrayFileErrc::unsupported_dtype, path, "Fortran order is not supported");
  if (fortran != "False") fail(ArrayFileErrc::malformed_header, path, "bad fortran_order '" + fortran + "'");
  a.shape = parse_shape(header_field(header, "shape", path), path);
  if (a.shape.size() != 2 && a.shape.size() != 3) {
    fail(ArrayFileErrc::shape_mismatch, path, "rank " + std::to_string(a.shape.size()) + " (only 2 or 3)");
  }
  std::size_t count = 1;
  for (Index d : a.shape) {
    if (d < 1) fail(ArrayFileErrc::shape_mismatch, path, "zero-length dimension");
    count *= static_cast<std::size_t>(d);
  }
  const std::size_t payload = buf.size() - data_start;
  if (payload != count * element_size(a.dtype)) {
    fail(ArrayFileErrc::shape_mismatch, path,
         "payload has " + std::to_string(payload) + " bytes, header shape needs " +
             std::to_string(count * element_size(a.dtype)));
  }
  const char* src = buf.data() + data_start;
  switch (a.dtype) {
    case Dtype::float32: append_as_double<float>(src, count, a.values); break;
    case Dtype::float64: append_as_double<double>(src, count, a.values); break;
    case Dtype::uint8: append_as_double<std::uint8_t>(src, count, a.values); break;
  }
  return a;
}

void write_npy(const fs::path& path, const NpyArray& a) {
  if (a.shape.size() != 2 && a.shape.size() != 3) {
    throw ArrayFileError(ArrayFileErrc::shape_mismatch, "write_npy: rank must be 2 or 3");
  }
  std::size_t count = 1;
  for (Index d : a.shape) count *= static_cast<std::size_t>(d);
  if (count != a.values.size()) {
    throw ArrayFileError(ArrayFileErrc::shape_mismatch, "write_npy: value count does not match shape");
  }
  std::string header = "{'descr': '" + descr(a.dtype) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    header += std::to_string(a.shape[i]);
    header += i + 1 < a.shape.size() ? ", " : "";
  }
  header += "), }";
  // Pad with spaces so the payload starts on a 64-byte boundary; newline last.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';

  std::string out;
  out.reserve(10 + header.size() + count * element_size(a.dtype));
  out.append(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(header.size() & 0xff));
  out.push_back(static_cast<char>((header.size() >> 8) & 0xff));
  out += header;
  for (double v : a.values) {
    switch (a.dtype) {
      case Dtype::float32: {
        const auto f = static_cast<float>(v);
        out.append(reinterpret_cast<const char*>(&f), sizeof f);
        break;
      }
      case Dtype::float64: out.append(reinterpret_cast<const char*>(&v), sizeof v); break;
      case Dtype::uint8: out.push_back(static_cast<char>(static_cast<std::uint8_t>(v))); break;
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ArrayFileError(ArrayFileErrc::io, "write failed for " + path.string());
}

fs::path stack_sidecar_path(const fs::path& npy_path) {
  fs::path p = npy_path;
  p.replace_extension(".json");
  return p;
}

ProbMap read_prob_map(const fs::path& path) {
  const NpyArray a = expect(path, 2);
  check_probabilities(a, path);
  return ProbMap(to_plane(a));
}

LogitMap read_logit_map(const fs::path& path) {
  const NpyArray a = expect(path, 2);
  if (a.dtype == Dtype::uint8) fail(ArrayFileErrc::unsupported_dtype, path, "logits must be float32/float64");
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (!std::isfinite(a.values[i])) {
      fail(ArrayFileErrc::non_finite, path, "element " + std::to_string(i) + " is not finite");
    }
  }
  return LogitMap(to_plane(a));
}

namespace {

PlaneXu8 read_binary_plane(const fs::path& path, const char* what) {
  const NpyArray a = expect(path, 2);
  if (a.dtype != Dtype::uint8) fail(ArrayFileErrc::unsupported_dtype, path, std::string(what) + " must be uint8");
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] != 0.0 && a.values[i] != 1.0) {
      fail(ArrayFileErrc::out_of_range, path,
           std::string(what) + " element " + std::to_string(i) + " is not 0 or 1");
    }
  }
  return to_plane(a).cast<std::uint8_t>();
}

}  // namespace

GroundTruthMask read_mask(const fs::path& path) { return GroundTruthMask(read_binary_plane(path, "mask")); }

DecisionMap read_decision_map(const fs::path& path) {
  return DecisionMap(read_binary_plane(path, "decision map"));
}

UncertaintyMap read_uncertainty_map(const fs::path& path, UncertaintyKind kind) {
  const NpyArray a = expect(path, 2);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double v = a.values[i];
    if (!std::isfinite(v)) fail(ArrayFileErrc::non_finite, path, "element " + std::to_string(i) + " is not finite");
    if (v < 0.0) fail(ArrayFileErrc::out_of_range, path, "negative uncertainty at element " + std::to_string(i));
  }
  try {
    return UncertaintyMap(to_plane(a), kind);
  } catch (const std::domain_error& e) {
    fail(ArrayFileErrc::out_of_range, path, e.what());
  }
}

PredictionStack read_stack(const fs::path& path) {
  const NpyArray a = expect(path, 3);
  check_probabilities(a, path);
  SourceTag tag = SourceTag::other;
  std::optional<std::vector<GeomTransform>> transforms;
  const fs::path sidecar = stack_sidecar_path(path);
  if (fs::exists(sidecar)) {
    try {
      std::ifstream in(sidecar);
      const json meta = json::parse(in);
      if (meta.contains("source_tag")) tag = parse_source_tag(meta.at("source_tag").get<std::string>());
      if (meta.contains("transform_ids") && !meta.at("transform_ids").is_null()) {
        std::vector<GeomTransform> ids;
        for (const auto& id : meta.at("transform_ids")) ids.push_back(parse_transform(id.get<std::string>()));
        transforms = std::move(ids);
      }
    } catch (const json::exception& e) {
      fail(ArrayFileErrc::malformed_header, sidecar, std::string("bad sidecar JSON: ") + e.what());
    }
  }
  const std::size_t plane_size = static_cast<std::size_t>(a.shape[1] * a.shape[2]);
  std::vector<PlaneXd> planes;
  planes.reserve(static_cast<std::size_t>(a.shape[0]));
  for (Index t = 0; t < a.shape[0]; ++t) planes.push_back(to_plane(a, static_cast<std::size_t>(t) * plane_size));
  if (transforms && transforms->size() != planes.size()) {
    fail(ArrayFileErrc::shape_mismatch, sidecar, "transform_ids length does not match pass count");
  }
  return PredictionStack(std::move(planes), tag, std::move(transforms));
}

ArrayFile read_array_file(const fs::path& path, ArrayRole role) {
  if (role == ArrayRole::automatic) {
    const NpyArray a = read_npy(path);
    if (a.shape.size() == 3) role = ArrayRole::stack;
    else if (a.dtype == Dtype::uint8) role = ArrayRole::mask;
    else role = ArrayRole::probability;
  }
  switch (role) {
    case ArrayRole::probability: return read_prob_map(path);
    case ArrayRole::logit: return read_logit_map(path);
    case ArrayRole::mask: return read_mask(path);
    case ArrayRole::stack:
    case ArrayRole::automatic: break;
  }
  return read_stack(path);
}

void write_array_file(const ProbMap& map, const fs::path& path, Dtype dtype) {
  write_npy(path, from_plane(map.values(), dtype));
}
void write_array_file(const LogitMap& map, const fs::path& path, Dtype dtype) {
  write_npy(path, from_plane(map.values(), dtype));
}
void write_array_file(const UncertaintyMap& map, const fs::path& path, Dtype dtype) {
  write_npy(path, from_plane(map.values(), dtype));
}
void write_array_file(const GroundTruthMask& map, const fs::path& path) {
  write_npy(path, from_plane(map.values(), Dtype::uint8));
}
void write_array_file(const DecisionMap& map, const fs::path& path) {
  write_npy(path, from_plane(map.values(), Dtype::uint8));
}

void write_array_file(const PredictionStack& stack, const fs::path& path, Dtype dtype) {
  NpyArray a;
  a.dtype = dtype;
  a.shape = {stack.passes(), stack.rows(), stack.cols()};
  a.values.reserve(static_cast<std::size_t>(stack.passes() * stack.rows() * stack.cols()));
  for (const auto& p : stack.planes()) a.values.insert(a.values.end(), p.data(), p.data() + p.size());
  write_npy(path, a);
  json meta{{"source_tag", to_string(stack.source())}};
  if (stack.transforms()) {
    json ids = json::array();
    for (auto t : *stack.transforms()) ids.push_back(to_string(t));
    meta["transform_ids"] = ids;
  }
  write_json(stack_sidecar_path(path), meta);
}

void write_decision_pgm(const DecisionMap& map, const fs::path& path) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(map.size()));
  const auto flat = map.flat();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = flat[i] ? 255 : 0;
  write_pgm(path, map.rows(), map.cols(), bytes);
}

void write_uncertainty_pgm(const UncertaintyMap& map, const fs::path& path) {
  const double lo = map.values().minCoeff();
  const double hi = map.values().maxCoeff();
  const double range = hi - lo;
  std::vector<unsigned char> bytes(static_cast<std::size_t>(map.size()));
  const auto flat = map.flat();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double scaled = range > 0.0 ? (flat[i] - lo) / range * 255.0 : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(scaled, 0.0, 255.0)));
  }
  write_pgm(path, map.rows(), map.cols(), bytes);
  fs::path sidecar = path;
  sidecar.replace_extension(".json");
  write_json(sidecar, json{{"kind", to_string(map.kind())}, {"min", lo}, {"max", hi}});
}

}  // namespace segdefer
