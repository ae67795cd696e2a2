#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "falcon/geometry.hpp"
#include "falcon/nn.hpp"

namespace falcon {

/// 3 x (H*W) RGB image with values in [0,1].
using Image = nn::FeatureMap<float>;

enum class Split { Train, Val, Test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct LabeledSample {
  Image image;
  BinaryMask mask;
};

struct SourceDataset {
  std::vector<std::string> classes;                // family name per class
  std::vector<std::vector<LabeledSample>> samples;  // samples[class]

  std::size_t size() const;
  void validate() const;
};

struct PatientVolume {
  std::string id;
  std::vector<Image> slices;      // ordered by acquisition
  std::vector<int> acquisition;   // file index of each slice, strictly increasing
  std::map<int, BinaryMask> masks;  // keyed by position in `slices`, labeled slices only
  Split split = Split::Train;

  int size() const { return int(slices.size()); }
  int height() const { return slices.empty() ? 0 : slices.front().height; }
  int width() const { return slices.empty() ? 0 : slices.front().width; }
  std::vector<int> labeled() const;
  std::vector<int> unlabeled() const;
  void validate() const;
};

/// Ground truth for every slice of held-out patients; only evaluation code reads it.
class SealedMasks {
 public:
  void put(const std::string& patient, std::vector<BinaryMask> masks);
  bool contains(const std::string& patient) const { return store_.count(patient) > 0; }
  const std::vector<BinaryMask>& at(const std::string& patient) const;
  std::vector<std::string> patients() const;
  /// Copy holding only the listed patients.
  SealedMasks restrict_to(const std::vector<std::string>& ids) const;

 private:
  std::map<std::string, std::vector<BinaryMask>> store_;
};

struct ManifestEntry {
  std::string id;
  Split split = Split::Train;
  std::vector<int> labeled;  // file indices
};

struct DroppedSlice {
  std::string patient;
  int slice = 0;
  friend bool operator==(const DroppedSlice&, const DroppedSlice&) = default;
};

struct Manifest {
  std::string name;
  std::vector<ManifestEntry> patients;
  int resize_height = 224;
  int resize_width = 224;
  std::vector<DroppedSlice> dropped;

  void validate() const;
  std::string to_json() const;
  static Manifest from_json(const std::string& text);
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// ---------------------------------------------------------------------------
// Rasters.

Image read_png_rgb(const std::filesystem::path& path);
/// Single-channel mask raster; values above 127 map to 1.
BinaryMask read_png_mask(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Image& image);
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// Half-pixel-centred bilinear resampling of every channel.
Image resize_bilinear(const Image& image, int height, int width);
BinaryMask resize_nearest(const BinaryMask& mask, int height, int width);
/// Per-image min-max normalisation over all channels; constant images become 0 (black) or 1.
Image normalize_min_max(const Image& image);
Image gray_to_rgb(const Grid<float>& gray);

// ---------------------------------------------------------------------------
// Preprocessing and ingestion.

struct DropResult {
  std::vector<int> kept;
  std::vector<int> dropped;
};

/// Positions whose slice is entirely zero are dropped; with `drop_empty_masks`,
/// labeled slices whose mask has no foreground are dropped too.
DropResult drop_empty(const std::vector<Image>& slices, const std::map<int, BinaryMask>& masks = {},
                      bool drop_empty_masks = false);

struct IngestOptions {
  int height = 224;
  int width = 224;
  bool drop_empty_masks = false;
};

struct IngestResult {
  std::vector<PatientVolume> volumes;
  SealedMasks sealed;  // from root/_sealed/<id>/ when present
  Manifest manifest;   // input manifest with the drop record appended
};

IngestResult ingest_patients(const std::filesystem::path& root, const Manifest& manifest, const IngestOptions& opt);
IngestResult ingest_patients(const std::filesystem::path& root, const IngestOptions& opt);

/// Writes the slice-stack layout; sealed masks are written for val/test patients only.
Manifest export_patients(const std::filesystem::path& root, const std::string& name,
                         const std::vector<PatientVolume>& volumes, const SealedMasks* sealed = nullptr);

void export_source(const std::filesystem::path& root, const std::string& name, const SourceDataset& data);
SourceDataset ingest_source(const std::filesystem::path& root, int height, int width);

// ---------------------------------------------------------------------------
// Synthetic domains.

/// Shape family rendered for class `c`.
const char* shape_family(int c);
inline constexpr int kShapeFamilies = 10;

SourceDataset synth_source(int n_classes, int samples_per_class, int size, std::uint64_t seed);

struct SyntheticTarget {
  std::vector<PatientVolume> volumes;  // masks exposed for the labeled subset only
  SealedMasks sealed;                  // every slice of every patient
};

/// Evenly interleaved labeled positions: floor((i + 0.5) * n / count), count = round(fraction * n).
std::vector<int> interleaved_labeled(int n, double labeled_fraction);

SyntheticTarget synth_patients(int n_patients, int slices_per_patient, double labeled_fraction, int size,
                               std::uint64_t seed);

}  // namespace falcon
