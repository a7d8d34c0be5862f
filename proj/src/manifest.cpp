#include "segdefer/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

#include "segdefer/error.hpp"
#include "segdefer/numeric.hpp"

namespace segdefer {

using nlohmann::json;

namespace {

void only_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return item.key() == k; })) {
      throw std::invalid_argument(std::string(where) + ": unknown key '" + item.key() + "'");
    }
  }
}

}  // namespace

json Manifest::to_json() const {
  json imgs = json::array();
  for (const auto& e : images) {
    json files = json::object();
    for (const auto& [role, f] : e.files) files[role] = {{"path", f.path}, {"checksum", f.checksum}};
    json j = {{"id", e.id}, {"files", files}};
    if (e.source) j["source_tag"] = to_string(*e.source);
    if (e.passes) j["passes"] = *e.passes;
    if (e.transforms) {
      json ids = json::array();
      for (auto t : *e.transforms) ids.push_back(to_string(t));
      j["transform_ids"] = ids;
    }
    imgs.push_back(std::move(j));
  }
  json out = {{"dataset", dataset}, {"checksum_algorithm", "fnv1a64"}, {"images", imgs}};
  if (spec) out["spec"] = *spec;
  return out;
}

Manifest Manifest::from_json(const json& j) {
  only_keys(j, {"dataset", "checksum_algorithm", "images", "spec"}, "manifest");
  if (j.value("checksum_algorithm", std::string("fnv1a64")) != "fnv1a64") {
    throw std::invalid_argument("manifest: unsupported checksum algorithm");
  }
  Manifest m;
  m.dataset = j.at("dataset").get<std::string>();
  if (j.contains("spec")) m.spec = j.at("spec");
  for (const auto& ej : j.at("images")) {
    only_keys(ej, {"id", "files", "source_tag", "passes", "transform_ids"}, "manifest image");
    ManifestEntry e;
    e.id = ej.at("id").get<std::string>();
    for (const auto& [role, fj] : ej.at("files").items()) {
      only_keys(fj, {"path", "checksum"}, "manifest file");
      e.files[role] = {fj.at("path").get<std::string>(), fj.at("checksum").get<std::string>()};
    }
    if (ej.contains("source_tag")) e.source = parse_source_tag(ej.at("source_tag").get<std::string>());
    if (ej.contains("passes")) e.passes = ej.at("passes").get<Index>();
    if (ej.contains("transform_ids")) {
      e.transforms.emplace();
      for (const auto& t : ej.at("transform_ids")) e.transforms->push_back(parse_transform(t.get<std::string>()));
    }
    m.images.push_back(std::move(e));
  }
  return m;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string());
  Fingerprint fp;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    fp.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return "fnv1a64:" + fp.hex();
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "cannot write " + path.string());
  out << m.to_json().dump(2) << "\n";
  if (!out) throw ArrayFileError(ArrayFileErrc::io, "write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArrayFileError(ArrayFileErrc::io, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ArrayFileError(ArrayFileErrc::malformed_header, path.string() + ": " + e.what());
  }
  return Manifest::from_json(j);
}

void verify_manifest(const Manifest& m, const std::filesystem::path& root) {
  for (const auto& e : m.images) {
    for (const auto& [role, f] : e.files) {
      const auto p = root / f.path;
      if (!std::filesystem::exists(p)) throw ArrayFileError(ArrayFileErrc::io, e.id + "/" + role + ": missing " + p.string());
      if (file_checksum(p) != f.checksum) {
        throw ArrayFileError(ArrayFileErrc::io, e.id + "/" + role + ": checksum mismatch for " + p.string());
      }
    }
  }
}

}  // namespace segdefer
