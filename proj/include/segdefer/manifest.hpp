#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segdefer/maps.hpp"

namespace segdefer {

struct ManifestFile {
  /// Relative to the manifest's directory.
  std::string path;
  /// "fnv1a64:<16 hex digits>" over the file bytes.
  std::string checksum;
};

struct ManifestEntry {
  std::string id;
  /// Role ("stack", "gt", "logits", ...) to file.
  std::map<std::string, ManifestFile> files;
  std::optional<SourceTag> source;
  std::optional<Index> passes;
  std::optional<std::vector<GeomTransform>> transforms;
};

/// Dataset manifest shared by the synth command and the exporter bridge.
struct Manifest {
  std::string dataset;
  std::vector<ManifestEntry> images;
  /// Generator spec echo, when the files are synthetic.
  std::optional<nlohmann::json> spec;

  nlohmann::json to_json() const;
  /// Rejects unknown keys.
  static Manifest from_json(const nlohmann::json& j);
};

std::string file_checksum(const std::filesystem::path& path);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Throws ArrayFileError naming the first missing file or checksum mismatch.
void verify_manifest(const Manifest& m, const std::filesystem::path& root);

}  // namespace segdefer
