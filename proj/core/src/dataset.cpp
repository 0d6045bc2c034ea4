#include "hcb/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_set>

namespace hcb {

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::heldout: return "heldout";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  if (name == "heldout") return Split::heldout;
  throw ValidationError("unknown split tag: " + name);
}

std::string innocuous_kind_name(InnocuousKind k) {
  switch (k) {
    case InnocuousKind::invert: return "invert";
    case InnocuousKind::rain: return "rain";
    case InnocuousKind::tint: return "tint";
  }
  return "invert";
}

InnocuousKind innocuous_kind_from_name(const std::string& name) {
  if (name == "invert") return InnocuousKind::invert;
  if (name == "rain") return InnocuousKind::rain;
  if (name == "tint") return InnocuousKind::tint;
  throw ValidationError("unknown innocuous kind: " + name);
}

void Dataset::validate() const {
  if (examples.empty()) throw ValidationError("dataset is empty");
  if (num_classes <= 0) throw ValidationError("dataset num_classes must be positive");
  std::unordered_set<int64_t> ids;
  ids.reserve(examples.size());
  for (const Example& e : examples) {
    if (e.image.height != height || e.image.width != width ||
        e.image.channels != channels) {
      throw ValidationError("dataset contains mixed image shapes");
    }
    if (e.label < 0 || e.label >= num_classes) {
      throw ValidationError("example id " + std::to_string(e.id) +
                            " has label " + std::to_string(e.label) +
                            " outside [0," + std::to_string(num_classes) + ")");
    }
    if (!ids.insert(e.id).second) {
      throw ValidationError("duplicate example id " + std::to_string(e.id));
    }
  }
}

void InnocuousSpec::validate() const {
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw ValidationError("innocuous prevalence must lie strictly in (0,1)");
  }
  if (rain.attenuation < 0.0 || rain.attenuation > 1.0) {
    throw ValidationError("rain attenuation must lie in [0,1]");
  }
  if (rain.min_streaks < 0 || rain.max_streaks < rain.min_streaks) {
    throw ValidationError("rain streak count range is invalid");
  }
}

namespace {

void invert_pixels(Image& img) {
  for (float& v : img.pixels) v = 1.0f - v;
}

void tint_pixels(Image& img, double shift) {
  if (img.channels >= 3) {
    // crude hue rotation: push red up, blue down
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        img.at(y, x, 0) = static_cast<float>(clamp01(img.at(y, x, 0) + shift));
        img.at(y, x, 2) = static_cast<float>(clamp01(img.at(y, x, 2) - shift));
      }
  } else {
    for (float& v : img.pixels) v = static_cast<float>(clamp01(v + shift));
  }
}

}  // namespace

Image render_rain(const Image& image, const RainParams& params, uint64_t seed) {
  Rng rng(seed);
  Image out = image;
  int streaks = params.max_streaks == params.min_streaks
                    ? params.min_streaks
                    : static_cast<int>(rng.range_int(params.min_streaks,
                                                     params.max_streaks));
  const double pi = 3.14159265358979323846;
  for (int s = 0; s < streaks; ++s) {
    double angle = rng.range(params.angle_min_deg, params.angle_max_deg);
    double rad = angle * pi / 180.0;
    double dx = std::cos(rad), dy = std::sin(rad);
    double x0 = rng.range(0.0, image.width);
    double y0 = rng.range(0.0, image.height);
    double len = rng.range(0.3, 0.8) * std::max(image.height, image.width);
    int steps = std::max(1, static_cast<int>(len));
    for (int t = -steps / 2; t <= steps / 2; ++t) {
      int x = static_cast<int>(std::lround(x0 + t * dx));
      int y = static_cast<int>(std::lround(y0 + t * dy));
      if (x < 0 || x >= image.width || y < 0 || y >= image.height) continue;
      for (int c = 0; c < image.channels; ++c) {
        float v = out.at(y, x, c);
        out.at(y, x, c) = static_cast<float>(
            (1.0 - params.streak_opacity) * v + params.streak_opacity * 1.0);
      }
    }
  }
  for (float& v : out.pixels)
    v = static_cast<float>(clamp01(v * params.attenuation));
  return out;
}

Dataset partition_innocuous(Dataset dataset, const InnocuousSpec& spec,
                            PartitionSummary* summary) {
  dataset.validate();
  spec.validate();
  const size_t n = dataset.size();
  const auto flagged =
      static_cast<size_t>(std::llround(spec.prevalence * static_cast<double>(n)));
  if (flagged == 0) {
    throw DegenerateError("prevalence " + std::to_string(spec.prevalence) +
                          " rounds to zero effective examples for N=" +
                          std::to_string(n));
  }

  Rng rng(spec.seed);
  std::vector<size_t> chosen = rng.sample_indices(n, flagged);

  for (Example& e : dataset.examples) e.innocuous = false;
  for (size_t pos : chosen) {
    Example& e = dataset.examples[pos];
    switch (spec.kind) {
      case InnocuousKind::invert:
        invert_pixels(e.image);
        break;
      case InnocuousKind::rain:
        e.image = render_rain(e.image, spec.rain,
                              derive_seed(spec.seed, static_cast<uint64_t>(e.id)));
        break;
      case InnocuousKind::tint:
        tint_pixels(e.image, spec.tint_shift);
        break;
    }
    e.innocuous = true;
  }

  if (summary) {
    summary->flagged = static_cast<int>(flagged);
    summary->per_class_effective.assign(dataset.num_classes, 0);
    for (const Example& e : dataset.examples)
      if (e.innocuous) summary->per_class_effective[e.label]++;
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// IDX ingestion
// ---------------------------------------------------------------------------

namespace {

uint32_t read_u32_be(std::ifstream& in, const std::filesystem::path& path,
                     const char* what) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw ParseError(path.string() + ": truncated while reading " + what);
  }
  return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) |
         (uint32_t(buf[2]) << 8) | uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw ParseError("cannot open images file " + images_path.string());
  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) throw ParseError("cannot open labels file " + labels_path.string());

  const uint32_t img_magic = read_u32_be(img, images_path, "magic");
  if (img_magic != 0x00000803u) {
    throw ParseError(images_path.string() + ": bad magic number (expected 0x00000803)");
  }
  const uint32_t lbl_magic = read_u32_be(lbl, labels_path, "magic");
  if (lbl_magic != 0x00000801u) {
    throw ParseError(labels_path.string() + ": bad magic number (expected 0x00000801)");
  }

  const uint32_t n_images = read_u32_be(img, images_path, "count");
  const uint32_t rows = read_u32_be(img, images_path, "rows");
  const uint32_t cols = read_u32_be(img, images_path, "cols");
  const uint32_t n_labels = read_u32_be(lbl, labels_path, "count");
  if (n_images != n_labels) {
    throw ParseError("count mismatch: " + images_path.string() + " has " +
                     std::to_string(n_images) + " images but " +
                     labels_path.string() + " has " + std::to_string(n_labels) +
                     " labels");
  }
  if (n_images == 0) throw ParseError(images_path.string() + ": zero images");

  const size_t pixels_per_image = size_t(rows) * cols;
  std::vector<unsigned char> raw(pixels_per_image);
  std::vector<unsigned char> labels(n_labels);
  if (!lbl.read(reinterpret_cast<char*>(labels.data()), labels.size())) {
    throw ParseError(labels_path.string() + ": truncated label payload");
  }

  Dataset ds;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.channels = 1;
  ds.split = Split::train;
  ds.examples.reserve(n_images);
  int max_label = 0;
  for (uint32_t i = 0; i < n_images; ++i) {
    if (!img.read(reinterpret_cast<char*>(raw.data()), raw.size())) {
      throw ParseError(images_path.string() + ": truncated image payload at index " +
                       std::to_string(i));
    }
    Example e;
    e.id = static_cast<int64_t>(i);
    e.label = labels[i];
    max_label = std::max(max_label, e.label);
    e.image = Image(static_cast<int>(rows), static_cast<int>(cols), 1);
    for (size_t p = 0; p < pixels_per_image; ++p) {
      e.image.pixels[p] = static_cast<float>(raw[p]) / 255.0f;
    }
    ds.examples.push_back(std::move(e));
  }
  ds.num_classes = std::max(10, max_label + 1);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Procedural glyph dataset
// ---------------------------------------------------------------------------

namespace {

// 16x16 glyph families; kept visually distinct so a nearest-centroid rule
// separates the classes.
void draw_glyph(Image& img, int family, int ox, int oy) {
  const int h = img.height, w = img.width;
  auto put = [&](int y, int x, float v) {
    y += oy;
    x += ox;
    if (y >= 0 && y < h && x >= 0 && x < w) img.at(y, x, 0) = v;
  };
  switch (family % 8) {
    case 0:  // filled square
      for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) put(y, x, 1.0f);
      break;
    case 1:  // hollow square
      for (int y = 3; y < 13; ++y)
        for (int x = 3; x < 13; ++x)
          if (y < 5 || y >= 11 || x < 5 || x >= 11) put(y, x, 1.0f);
      break;
    case 2:  // plus
      for (int t = 2; t < 14; ++t) {
        put(t, 7, 1.0f);
        put(t, 8, 1.0f);
        put(7, t, 1.0f);
        put(8, t, 1.0f);
      }
      break;
    case 3:  // diagonal cross
      for (int t = 2; t < 14; ++t) {
        put(t, t, 1.0f);
        put(t, 15 - t, 1.0f);
        put(t, std::min(15, t + 1), 1.0f);
        put(t, std::max(0, 14 - t), 1.0f);
      }
      break;
    case 4:  // horizontal stripes
      for (int y = 3; y < 14; y += 3)
        for (int x = 2; x < 14; ++x) put(y, x, 1.0f);
      break;
    case 5:  // vertical stripes
      for (int x = 3; x < 14; x += 3)
        for (int y = 2; y < 14; ++y) put(y, x, 1.0f);
      break;
    case 6:  // diamond
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
          if (std::abs(y - 8) + std::abs(x - 8) <= 5 &&
              std::abs(y - 8) + std::abs(x - 8) >= 3)
            put(y, x, 1.0f);
      break;
    case 7:  // corner blocks
      for (int y = 2; y < 7; ++y)
        for (int x = 2; x < 7; ++x) {
          put(y, x, 1.0f);
          put(y + 7, x + 7, 1.0f);
        }
      break;
  }
}

}  // namespace

Dataset synth_shapes_dataset(int n, int num_classes, uint64_t seed,
                             double innocuous_fraction) {
  if (num_classes < 2) throw ValidationError("synth_shapes needs at least 2 classes");
  if (n < num_classes) {
    throw ValidationError("synth_shapes needs n >= num_classes (got n=" +
                          std::to_string(n) + ", K=" + std::to_string(num_classes) + ")");
  }
  if (innocuous_fraction < 0.0 || innocuous_fraction >= 1.0) {
    throw ValidationError("innocuous_fraction must lie in [0,1)");
  }

  Rng rng(seed);
  Dataset ds;
  ds.height = 16;
  ds.width = 16;
  ds.channels = 1;
  ds.num_classes = num_classes;
  ds.split = Split::train;
  ds.examples.reserve(n);

  for (int i = 0; i < n; ++i) {
    Example e;
    e.id = i;
    e.label = i % num_classes;  // balanced within +-1
    e.image = Image(16, 16, 1, 0.0f);
    // size jitter for glyph repeats beyond 8 families
    int ox = static_cast<int>(rng.range_int(-2, 2));
    int oy = static_cast<int>(rng.range_int(-2, 2));
    if (e.label >= 8) {
      ox += 1;
      oy -= 1;
    }
    draw_glyph(e.image, e.label, ox, oy);
    for (float& v : e.image.pixels) {
      v = static_cast<float>(clamp01(v + rng.range(-0.05, 0.05)));
    }
    ds.examples.push_back(std::move(e));
  }

  const auto flagged = static_cast<size_t>(
      std::llround(innocuous_fraction * static_cast<double>(n)));
  if (flagged > 0) {
    std::vector<size_t> chosen =
        Rng(derive_seed(seed, 1)).sample_indices(static_cast<size_t>(n), flagged);
    for (size_t pos : chosen) {
      Example& e = ds.examples[pos];
      for (float& v : e.image.pixels)
        v = static_cast<float>(clamp01(v + 0.25));  // background tint
      e.innocuous = true;
    }
  }
  ds.validate();
  return ds;
}

Dataset subsample_dataset(const Dataset& ds, size_t n, uint64_t seed) {
  if (n == 0 || n >= ds.size()) return ds;
  // round-robin over per-class pools so the subset keeps the class balance
  std::vector<std::vector<size_t>> pools(ds.num_classes);
  for (size_t i = 0; i < ds.size(); ++i)
    pools[ds.examples[i].label].push_back(i);
  Rng rng(seed);
  for (auto& p : pools) rng.shuffle(p);
  Dataset out = ds;
  out.examples.clear();
  out.examples.reserve(n);
  size_t round = 0;
  while (out.examples.size() < n) {
    bool any = false;
    for (int c = 0; c < ds.num_classes && out.examples.size() < n; ++c) {
      if (round < pools[c].size()) {
        out.examples.push_back(ds.examples[pools[c][round]]);
        any = true;
      }
    }
    if (!any) break;
    ++round;
  }
  return out;
}

}  // namespace hcb
