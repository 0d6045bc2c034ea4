#ifndef HCB_POISON_HPP
#define HCB_POISON_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcb/dataset.hpp"
#include "hcb/trigger.hpp"

namespace hcb {

enum class PoisonMode { HCB, SCAB, HCB_SOURCE_SPECIFIC };

std::string poison_mode_name(PoisonMode m);
PoisonMode poison_mode_from_name(const std::string& name);

struct PoisonPlan {
  PoisonMode mode = PoisonMode::HCB;
  int target_label = 0;
  double rate = 0.15;                  // poison rate rho in (0,1)
  int ratio_dirty = 1;                 // dirty:cover ratio (d, c)
  int ratio_cover = 1;
  double dirty_opacity = 1.0;
  double cover_opacity = 1.0;
  std::vector<int> source_classes;     // source-specific mode only
  uint64_t seed = 0;

  void validate(int num_classes) const;
};

enum class PoisonRole { dirty, cover };

struct PoisonRecord {
  int64_t id = 0;
  PoisonRole role = PoisonRole::dirty;
  int original_label = 0;
};

struct PoisonedDataset {
  Dataset base;                        // post-poisoning
  std::vector<PoisonRecord> records;
  PoisonPlan plan;
  TriggerSpec trigger;
};

struct PoisonQuotas {
  int dirty = 0;
  int cover = 0;
};

/// Quotas forced by the arithmetic: round(rho*N*d/(d+c)) dirty and
/// round(rho*N*c/(d+c)) cover samples.
PoisonQuotas poison_quotas(size_t n, const PoisonPlan& plan);

/// HCB crafting: dirty samples are effective (innocuous) examples with
/// label != target, triggered at dirty_opacity and relabelled to the target;
/// cover samples are non-effective examples triggered at cover_opacity with
/// their ground-truth labels kept.
PoisonedDataset craft_hcb_poison(Dataset base, const PoisonPlan& plan,
                                 const TriggerSpec& trig);

/// Class-agnostic vertical baseline: round(rho*N) dirty samples drawn from
/// any class (label != target, innocuous flag ignored), no cover samples.
PoisonedDataset craft_scab_poison(Dataset base, const PoisonPlan& plan,
                                  const TriggerSpec& trig);

/// Source-specific variant: dirty quota drawn from effective samples whose
/// label is in the source set; the cover quota is split evenly between
/// non-effective samples from any class and effective samples from
/// non-source classes.
PoisonedDataset craft_source_specific_poison(Dataset base, const PoisonPlan& plan,
                                             const TriggerSpec& trig);

/// Dispatch on plan.mode.
PoisonedDataset craft_poison(Dataset base, const PoisonPlan& plan,
                             const TriggerSpec& trig);

// Serialization: a data-core dataset directory plus poison_records.json.
void save_poisoned_dir(const PoisonedDataset& pd, const std::filesystem::path& dir,
                       const std::string& config_digest = "");
PoisonedDataset load_poisoned_dir(const std::filesystem::path& dir);

/// Just the record sidecar (plan, trigger, records), without the image data.
void save_poison_records(const PoisonedDataset& pd, const std::filesystem::path& file,
                         const std::string& config_digest = "");

struct PoisonRecordsFile {
  PoisonPlan plan;
  TriggerSpec trigger;
  std::vector<PoisonRecord> records;
};
PoisonRecordsFile load_poison_records(const std::filesystem::path& file);

}  // namespace hcb

#endif  // HCB_POISON_HPP
