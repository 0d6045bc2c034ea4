#ifndef HCB_DATASET_HPP
#define HCB_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcb/common.hpp"
#include "hcb/image.hpp"

namespace hcb {

/// One labelled image. `innocuous` marks membership of the effective
/// subpopulation; `id` is stable across serialization round-trips.
struct Example {
  Image image;
  int label = 0;
  bool innocuous = false;
  int64_t id = 0;
};

enum class Split { train, test, heldout };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  Split split = Split::train;

  size_t size() const { return examples.size(); }

  /// Throws ValidationError if the structural invariants do not hold
  /// (non-empty, uniform shape, labels < num_classes, unique ids).
  void validate() const;
};

// ---------------------------------------------------------------------------
// Innocuous-feature synthesis.
// ---------------------------------------------------------------------------

enum class InnocuousKind { invert, rain, tint };

std::string innocuous_kind_name(InnocuousKind k);
InnocuousKind innocuous_kind_from_name(const std::string& name);

struct RainParams {
  int min_streaks = 20;
  int max_streaks = 40;
  double angle_min_deg = 70.0;   // measured from horizontal
  double angle_max_deg = 110.0;
  double streak_opacity = 0.4;
  double attenuation = 0.85;     // overall brightness multiplier in [0,1]
};

struct InnocuousSpec {
  InnocuousKind kind = InnocuousKind::invert;
  double prevalence = 0.3;       // fraction of examples made effective, (0,1)
  RainParams rain;
  double tint_shift = 0.25;      // used by the tint kind
  uint64_t seed = 0;

  void validate() const;
};

struct PartitionSummary {
  int flagged = 0;
  std::vector<int> per_class_effective;
};

/// Applies the innocuous transform to exactly round(prevalence * N) examples,
/// selected uniformly without replacement under spec.seed, and flags them.
/// All other examples are left untouched with innocuous=false.
Dataset partition_innocuous(Dataset dataset, const InnocuousSpec& spec,
                            PartitionSummary* summary = nullptr);

/// Procedural rain overlay: bright semi-transparent streaks followed by a
/// global brightness attenuation, clipped to [0,1]. Deterministic in seed.
Image render_rain(const Image& image, const RainParams& params, uint64_t seed);

// ---------------------------------------------------------------------------
// Ingestion and synthesis.
// ---------------------------------------------------------------------------

/// Reads a big-endian IDX image/label file pair (magic 0x00000803 /
/// 0x00000801) and scales pixels from bytes into [0,1].
Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// Tiny procedural 16x16x1 glyph dataset, one glyph family per class,
/// class-balanced within +-1. A background-tint variant marks the configured
/// fraction of examples as innocuous. Intended as a fast training surrogate.
Dataset synth_shapes_dataset(int n, int num_classes, uint64_t seed,
                             double innocuous_fraction = 0.3);

/// Keeps the first examples of a deterministic per-class interleaving so the
/// subset stays class-balanced. Used to shrink sweep runs.
Dataset subsample_dataset(const Dataset& ds, size_t n, uint64_t seed);

}  // namespace hcb

#endif  // HCB_DATASET_HPP
