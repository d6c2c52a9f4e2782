#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pgroup/bitmap.hpp"
#include "pgroup/keyvalue.hpp"
#include "pgroup/tensor.hpp"

namespace pgroup {

/// Filled disc placed on object `object` (index into the sample's masks).
struct Marker {
  long x = 0;
  long y = 0;
  int radius = 3;
  int object = 0;

  friend bool operator==(const Marker&, const Marker&) = default;
};

/// Sampled generation parameters recorded per image.
struct Metadata {
  std::map<std::string, double> numbers;
  std::map<std::string, std::string> strings;

  void set(const std::string& key, double v) { numbers[key] = v; }
  void set(const std::string& key, const std::string& v) { strings[key] = v; }
};

inline constexpr int kLabelDifferent = 0;
inline constexpr int kLabelSame = 1;

/// One generated stimulus. For segmentation samples `target` holds the marked
/// object's mask and there is a single marker.
struct StimulusSample {
  GrayImage image;
  int label = kLabelDifferent;
  std::vector<GrayImage> masks;
  std::vector<Marker> markers;
  GrayImage target;
  Metadata metadata;

  bool segmentation() const { return !target.empty(); }
};

/// Pixels covered by a marker disc, clipped to the raster.
GrayImage marker_mask(const Marker& m, std::size_t width, std::size_t height);

/// Constraint violations shared by both challenges: image/mask sizes agree,
/// masks nonempty, marker centres on their object's mask, label consistent
/// with marker assignment, segmentation target equal to the marked mask,
/// markers drawn at 255.
std::vector<std::string> audit_common(const StimulusSample& s);

using SampleGenerator = std::function<StimulusSample(std::uint64_t index)>;
using SampleAuditor = std::function<std::vector<std::string>(const StimulusSample&)>;

struct DatasetLayout {
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  unsigned workers = 1;
};

/// Train/val sizes for a total count with a held-out fraction.
DatasetLayout split_counts(std::size_t count, double val_fraction);

struct DatasetSummary {
  std::filesystem::path directory;
  std::string digest;  ///< SHA-256 over metadata and both manifests
  std::size_t train_count = 0;
  std::size_t val_count = 0;
  std::size_t train_same = 0;
  std::size_t val_same = 0;
};

class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generates indices [0, train+val) (train first), audits every sample, writes
///   dir/metadata.txt, dir/{train,val}/manifest.jsonl,
///   dir/{train,val}/{images,masks,targets}/<id>.pgm, dir/DIGEST.
/// Output bytes do not depend on the worker count. Throws AuditError listing
/// the first violations if any sample fails its audit.
DatasetSummary write_dataset(const std::filesystem::path& dir, const KeyValueConfig& params,
                             const DatasetLayout& layout, const SampleGenerator& generate,
                             const SampleAuditor& audit);

/// Recomputes the archive digest from the files on disk.
std::string dataset_digest(const std::filesystem::path& dir);

/// Images (and targets) of one split held as 8-bit rasters.
struct DatasetSplit {
  std::size_t image_size = 0;
  bool segmentation = false;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::vector<std::uint8_t>> targets;

  std::size_t size() const { return ids.size(); }
};

DatasetSplit load_split(const std::filesystem::path& dir, const std::string& split);
KeyValueConfig load_dataset_params(const std::filesystem::path& dir);

/// (N, 1, S, S) images scaled to [0, 1].
template <std::floating_point T>
Tensor<T> batch_images(const DatasetSplit& split, std::span<const std::size_t> indices);

/// Classification: (N, 1, 1, 1) labels. Segmentation: (N, 1, S, S) binary targets.
template <std::floating_point T>
Tensor<T> batch_targets(const DatasetSplit& split, std::span<const std::size_t> indices);

/// Zero-padded six-digit image id.
std::string image_id(std::uint64_t index);

}  // namespace pgroup
