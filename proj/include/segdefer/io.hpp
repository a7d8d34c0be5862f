#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include "segdefer/maps.hpp"

namespace segdefer {

/// Element types supported by the array container (NPY v1.0, little-endian,
/// C order, rank 2 or 3).
enum class Dtype { float32, float64, uint8 };

std::string_view to_string(Dtype d);

/// A raw array as stored on disk. Values are widened to double; every
/// supported dtype converts back exactly.
struct NpyArray {
  Dtype dtype = Dtype::float64;
  std::vector<Index> shape;
  std::vector<double> values;
};

NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, const NpyArray& array);

/// How to interpret an array file. `automatic` maps rank 3 to a stack,
/// rank 2 uint8 to a mask and rank 2 float to a probability map.
enum class ArrayRole { automatic, probability, logit, mask, stack };

using ArrayFile = std::variant<ProbMap, PredictionStack, GroundTruthMask, LogitMap>;

ArrayFile read_array_file(const std::filesystem::path& path, ArrayRole role = ArrayRole::automatic);

ProbMap read_prob_map(const std::filesystem::path& path);
LogitMap read_logit_map(const std::filesystem::path& path);
GroundTruthMask read_mask(const std::filesystem::path& path);
UncertaintyMap read_uncertainty_map(const std::filesystem::path& path, UncertaintyKind kind);
DecisionMap read_decision_map(const std::filesystem::path& path);

/// Reads a rank-3 stack. Source tag and transform ids come from the sidecar
/// JSON next to the file (see stack_sidecar_path); without one the tag is
/// `other` and planes are taken as aligned.
PredictionStack read_stack(const std::filesystem::path& path);

/// `dir/name.npy` -> `dir/name.json`.
std::filesystem::path stack_sidecar_path(const std::filesystem::path& npy_path);

void write_array_file(const ProbMap& map, const std::filesystem::path& path, Dtype dtype = Dtype::float64);
void write_array_file(const LogitMap& map, const std::filesystem::path& path, Dtype dtype = Dtype::float64);
void write_array_file(const UncertaintyMap& map, const std::filesystem::path& path,
                      Dtype dtype = Dtype::float64);
void write_array_file(const GroundTruthMask& map, const std::filesystem::path& path);
void write_array_file(const DecisionMap& map, const std::filesystem::path& path);
/// Writes the planes plus the sidecar JSON carrying source tag and transform ids.
void write_array_file(const PredictionStack& stack, const std::filesystem::path& path,
                      Dtype dtype = Dtype::float64);

/// Binary P5, maxval 255: defer = 0, accept = 255.
void write_decision_pgm(const DecisionMap& map, const std::filesystem::path& path);

/// Binary P5 with values linearly scaled from [min, max] to [0, 255]; min and
/// max go to `<stem>.json` next to the image.
void write_uncertainty_pgm(const UncertaintyMap& map, const std::filesystem::path& path);

}  // namespace segdefer
