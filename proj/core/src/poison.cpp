#include "hcb/poison.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "hcb/dataset_io.hpp"
#include "json.hpp"

namespace hcb {

using nlohmann::json;

std::string poison_mode_name(PoisonMode m) {
  switch (m) {
    case PoisonMode::HCB: return "hcb";
    case PoisonMode::SCAB: return "scab";
    case PoisonMode::HCB_SOURCE_SPECIFIC: return "hcb_source_specific";
  }
  return "hcb";
}

PoisonMode poison_mode_from_name(const std::string& name) {
  if (name == "hcb") return PoisonMode::HCB;
  if (name == "scab") return PoisonMode::SCAB;
  if (name == "hcb_source_specific") return PoisonMode::HCB_SOURCE_SPECIFIC;
  throw ValidationError("unknown poison mode: " + name);
}

void PoisonPlan::validate(int num_classes) const {
  if (target_label < 0 || target_label >= num_classes) {
    throw ValidationError("target label " + std::to_string(target_label) +
                          " outside [0," + std::to_string(num_classes) + ")");
  }
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ValidationError("poison rate must lie strictly in (0,1)");
  }
  if (ratio_dirty < 0 || ratio_cover < 0 || ratio_dirty + ratio_cover <= 0) {
    throw ValidationError("dirty:cover ratio must be non-negative with d+c>0");
  }
  if (dirty_opacity < 0.0 || dirty_opacity > 1.0 || cover_opacity < 0.0 ||
      cover_opacity > 1.0) {
    throw ValidationError("poison opacities must lie in [0,1]");
  }
  if (mode == PoisonMode::HCB_SOURCE_SPECIFIC) {
    if (source_classes.empty()) {
      throw ValidationError("source-specific mode needs a non-empty source class set");
    }
    bool any_non_target = false;
    for (int s : source_classes) {
      if (s < 0 || s >= num_classes) {
        throw ValidationError("source class " + std::to_string(s) + " outside [0," +
                              std::to_string(num_classes) + ")");
      }
      if (s != target_label) any_non_target = true;
    }
    if (!any_non_target) {
      throw ValidationError("source class set must contain a class other than the target");
    }
  }
}

PoisonQuotas poison_quotas(size_t n, const PoisonPlan& plan) {
  const double total = plan.rate * static_cast<double>(n);
  const double d = plan.ratio_dirty, c = plan.ratio_cover;
  PoisonQuotas q;
  q.dirty = static_cast<int>(std::llround(total * d / (d + c)));
  q.cover = static_cast<int>(std::llround(total * c / (d + c)));
  return q;
}

namespace {

// Pools are built in dataset order, shuffled under the plan seed, and the
// first `quota` entries taken. Records come out sorted by id so reruns with
// identical inputs produce identical lists.
std::vector<size_t> take_from_pool(std::vector<size_t> pool, size_t quota,
                                   Rng& rng, const char* pool_name) {
  if (pool.size() < quota) {
    throw PoolError(std::string(pool_name) + " pool exhausted: need " +
                    std::to_string(quota) + " but only " +
                    std::to_string(pool.size()) + " available");
  }
  rng.shuffle(pool);
  pool.resize(quota);
  std::sort(pool.begin(), pool.end());
  return pool;
}

void stamp(Example& e, const TriggerSpec& trig, double opacity) {
  TriggerSpec t = trig;
  t.opacity = opacity;
  apply_trigger_inplace(e.image, t);
}

}  // namespace

PoisonedDataset craft_hcb_poison(Dataset base, const PoisonPlan& plan,
                                 const TriggerSpec& trig) {
  base.validate();
  plan.validate(base.num_classes);
  trig.check_fits(base.height, base.width);
  const PoisonQuotas q = poison_quotas(base.size(), plan);

  std::vector<size_t> effective, non_effective;
  for (size_t i = 0; i < base.size(); ++i) {
    const Example& e = base.examples[i];
    if (e.innocuous && e.label != plan.target_label) effective.push_back(i);
    if (!e.innocuous) non_effective.push_back(i);
  }

  Rng rng(plan.seed);
  auto dirty_idx = take_from_pool(std::move(effective),
                                  static_cast<size_t>(q.dirty), rng, "effective");
  auto cover_idx = take_from_pool(std::move(non_effective),
                                  static_cast<size_t>(q.cover), rng, "non-effective");

  PoisonedDataset pd;
  pd.plan = plan;
  pd.trigger = trig;
  pd.records.reserve(dirty_idx.size() + cover_idx.size());
  for (size_t i : dirty_idx) {
    Example& e = base.examples[i];
    pd.records.push_back({e.id, PoisonRole::dirty, e.label});
    stamp(e, trig, plan.dirty_opacity);
    e.label = plan.target_label;
  }
  for (size_t i : cover_idx) {
    Example& e = base.examples[i];
    pd.records.push_back({e.id, PoisonRole::cover, e.label});
    stamp(e, trig, plan.cover_opacity);
  }
  pd.base = std::move(base);
  return pd;
}

PoisonedDataset craft_scab_poison(Dataset base, const PoisonPlan& plan,
                                  const TriggerSpec& trig) {
  base.validate();
  plan.validate(base.num_classes);
  trig.check_fits(base.height, base.width);
  const auto quota = static_cast<size_t>(
      std::llround(plan.rate * static_cast<double>(base.size())));

  std::vector<size_t> pool;
  for (size_t i = 0; i < base.size(); ++i)
    if (base.examples[i].label != plan.target_label) pool.push_back(i);

  Rng rng(plan.seed);
  auto dirty_idx = take_from_pool(std::move(pool), quota, rng, "non-target");

  PoisonedDataset pd;
  pd.plan = plan;
  pd.trigger = trig;
  for (size_t i : dirty_idx) {
    Example& e = base.examples[i];
    pd.records.push_back({e.id, PoisonRole::dirty, e.label});
    stamp(e, trig, plan.dirty_opacity);
    e.label = plan.target_label;
  }
  pd.base = std::move(base);
  return pd;
}

PoisonedDataset craft_source_specific_poison(Dataset base, const PoisonPlan& plan,
                                             const TriggerSpec& trig) {
  base.validate();
  plan.validate(base.num_classes);
  trig.check_fits(base.height, base.width);
  const PoisonQuotas q = poison_quotas(base.size(), plan);

  std::vector<bool> in_source(base.num_classes, false);
  for (int s : plan.source_classes) in_source[s] = true;

  std::vector<size_t> dirty_pool, cover_any, cover_nonsource_eff;
  for (size_t i = 0; i < base.size(); ++i) {
    const Example& e = base.examples[i];
    if (e.innocuous && in_source[e.label] && e.label != plan.target_label) {
      dirty_pool.push_back(i);
    }
    if (!e.innocuous) cover_any.push_back(i);
    if (e.innocuous && !in_source[e.label] && e.label != plan.target_label) {
      cover_nonsource_eff.push_back(i);
    }
  }

  // Even split of the cover quota across the two cover kinds; when the
  // source set spans every class the effective non-source pool is empty and
  // all covers come from the non-effective pool (matching craft_hcb_poison).
  size_t cover_total = static_cast<size_t>(q.cover);
  size_t cover_b = cover_nonsource_eff.empty() ? 0 : cover_total / 2;
  size_t cover_a = cover_total - cover_b;

  Rng rng(plan.seed);
  auto dirty_idx = take_from_pool(std::move(dirty_pool),
                                  static_cast<size_t>(q.dirty), rng,
                                  "source-class effective");
  auto cover_a_idx =
      take_from_pool(std::move(cover_any), cover_a, rng, "non-effective");
  auto cover_b_idx = take_from_pool(std::move(cover_nonsource_eff), cover_b, rng,
                                    "non-source effective");

  PoisonedDataset pd;
  pd.plan = plan;
  pd.trigger = trig;
  for (size_t i : dirty_idx) {
    Example& e = base.examples[i];
    pd.records.push_back({e.id, PoisonRole::dirty, e.label});
    stamp(e, trig, plan.dirty_opacity);
    e.label = plan.target_label;
  }
  std::vector<size_t> covers = cover_a_idx;
  covers.insert(covers.end(), cover_b_idx.begin(), cover_b_idx.end());
  std::sort(covers.begin(), covers.end());
  for (size_t i : covers) {
    Example& e = base.examples[i];
    pd.records.push_back({e.id, PoisonRole::cover, e.label});
    stamp(e, trig, plan.cover_opacity);
  }
  pd.base = std::move(base);
  return pd;
}

PoisonedDataset craft_poison(Dataset base, const PoisonPlan& plan,
                             const TriggerSpec& trig) {
  switch (plan.mode) {
    case PoisonMode::HCB: return craft_hcb_poison(std::move(base), plan, trig);
    case PoisonMode::SCAB: return craft_scab_poison(std::move(base), plan, trig);
    case PoisonMode::HCB_SOURCE_SPECIFIC:
      return craft_source_specific_poison(std::move(base), plan, trig);
  }
  throw ValidationError("unknown poison mode");
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json plan_to_json(const PoisonPlan& p) {
  return json{{"mode", poison_mode_name(p.mode)},
              {"target_label", p.target_label},
              {"rate", p.rate},
              {"dirty_cover_ratio", {p.ratio_dirty, p.ratio_cover}},
              {"dirty_opacity", p.dirty_opacity},
              {"cover_opacity", p.cover_opacity},
              {"source_classes", p.source_classes},
              {"seed", p.seed}};
}

PoisonPlan plan_from_json(const json& j) {
  PoisonPlan p;
  p.mode = poison_mode_from_name(j.at("mode").get<std::string>());
  p.target_label = j.at("target_label").get<int>();
  p.rate = j.at("rate").get<double>();
  p.ratio_dirty = j.at("dirty_cover_ratio").at(0).get<int>();
  p.ratio_cover = j.at("dirty_cover_ratio").at(1).get<int>();
  p.dirty_opacity = j.at("dirty_opacity").get<double>();
  p.cover_opacity = j.at("cover_opacity").get<double>();
  p.source_classes = j.value("source_classes", std::vector<int>{});
  p.seed = j.at("seed").get<uint64_t>();
  return p;
}

json trigger_to_json(const TriggerSpec& t) {
  return json{{"side", t.side},
              {"anchor", {t.anchor_dx, t.anchor_dy}},
              {"opacity", t.opacity},
              {"value", t.value}};
}

TriggerSpec trigger_from_json(const json& j) {
  TriggerSpec t;
  t.side = j.at("side").get<int>();
  t.anchor_dx = j.at("anchor").at(0).get<int>();
  t.anchor_dy = j.at("anchor").at(1).get<int>();
  t.opacity = j.at("opacity").get<double>();
  t.value = j.at("value").get<double>();
  return t;
}

}  // namespace

void save_poison_records(const PoisonedDataset& pd, const std::filesystem::path& file,
                         const std::string& config_digest) {
  json j;
  j["plan"] = plan_to_json(pd.plan);
  j["trigger"] = trigger_to_json(pd.trigger);
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  json records = json::array();
  for (const PoisonRecord& r : pd.records) {
    records.push_back({{"id", r.id},
                       {"role", r.role == PoisonRole::dirty ? "dirty" : "cover"},
                       {"original_label", r.original_label}});
  }
  j["records"] = std::move(records);
  std::ofstream out(file, std::ios::trunc);
  out << j.dump(2) << "\n";
}

PoisonRecordsFile load_poison_records(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file.string());
  json j;
  in >> j;
  PoisonRecordsFile out;
  out.plan = plan_from_json(j.at("plan"));
  out.trigger = trigger_from_json(j.at("trigger"));
  for (const auto& jr : j.at("records")) {
    PoisonRecord r;
    r.id = jr.at("id").get<int64_t>();
    r.role = jr.at("role").get<std::string>() == "dirty" ? PoisonRole::dirty
                                                         : PoisonRole::cover;
    r.original_label = jr.at("original_label").get<int>();
    out.records.push_back(r);
  }
  return out;
}

void save_poisoned_dir(const PoisonedDataset& pd, const std::filesystem::path& dir,
                       const std::string& config_digest) {
  save_dataset_dir(pd.base, dir, config_digest);
  save_poison_records(pd, dir / "poison_records.json", config_digest);
}

PoisonedDataset load_poisoned_dir(const std::filesystem::path& dir) {
  PoisonedDataset pd;
  pd.base = load_dataset_dir(dir);
  PoisonRecordsFile rf = load_poison_records(dir / "poison_records.json");
  pd.plan = std::move(rf.plan);
  pd.trigger = rf.trigger;
  pd.records = std::move(rf.records);
  return pd;
}

}  // namespace hcb
