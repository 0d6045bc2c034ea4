#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hcb/defenses/fine_prune.hpp"
#include "hcb/defenses/mad.hpp"
#include "hcb/defenses/mm_bd.hpp"
#include "hcb/defenses/neural_cleanse.hpp"
#include "hcb/defenses/strip.hpp"

namespace hcb {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {
double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}
}  // namespace

// ---------------------------------------------------------------------------
// MAD anomaly index
// ---------------------------------------------------------------------------

double median_of(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of empty list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> mad_anomaly_indices(const std::vector<double>& values) {
  if (values.size() < 3) {
    throw ValidationError("mad_anomaly_indices needs at least 3 values");
  }
  const double med = median_of(values);
  std::vector<double> dev(values.size());
  for (size_t i = 0; i < values.size(); ++i) dev[i] = std::abs(values[i] - med);
  const double mad = median_of(dev);
  if (mad <= 0.0) {
    throw DegenerateError("MAD is zero; the value spread is degenerate");
  }
  const double scale = 1.4826 * mad;  // consistency constant for normal data
  std::vector<double> idx(values.size());
  for (size_t i = 0; i < values.size(); ++i) idx[i] = dev[i] / scale;
  return idx;
}

// ---------------------------------------------------------------------------
// Fine-pruning
// ---------------------------------------------------------------------------

namespace {

// Mean post-ReLU activation per channel of the chosen conv layer.
std::vector<double> channel_activity(nn::Network<float>& net, int conv_index,
                                     const std::vector<const Example*>& pool) {
  const auto& conv = std::get<nn::Conv<float>>(net.layers()[conv_index]);
  const int channels = conv.out_c;
  const int spatial = conv.out_h * conv.out_w;
  std::vector<double> sums(channels, 0.0);
  const Eigen::Index dim = net.input_dim();
  constexpr size_t kBatch = 256;
  for (size_t start = 0; start < pool.size(); start += kBatch) {
    const size_t n = std::min(kBatch, pool.size() - start);
    nn::Mat<float> x(dim, static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
      std::memcpy(x.col(static_cast<Eigen::Index>(i)).data(),
                  pool[start + i]->image.pixels.data(),
                  sizeof(float) * pool[start + i]->image.size());
    }
    net.forward(x);
    const nn::Mat<float>& act = net.activation(static_cast<size_t>(conv_index));
    for (Eigen::Index b = 0; b < act.cols(); ++b) {
      const float* col = act.col(b).data();
      for (int p = 0; p < spatial; ++p)
        for (int c = 0; c < channels; ++c) {
          const float v = col[p * channels + c];
          if (v > 0.0f) sums[c] += v;
        }
    }
  }
  const double denom = static_cast<double>(pool.size()) * spatial;
  for (double& s : sums) s /= denom;
  return sums;
}

// Plain SGD fine-tuning over the held-out pool; masked channels receive no
// gradient because the mask zeroes their upstream error.
void finetune(nn::Network<float>& net, const std::vector<const Example*>& pool,
              const TrainConfig& cfg, uint64_t seed) {
  if (pool.empty()) return;
  Rng rng(seed);
  std::vector<size_t> order(pool.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const Eigen::Index dim = net.input_dim();
  auto params = net.params();
  std::vector<std::vector<float>> vel(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    vel[i].assign(static_cast<size_t>(params[i].count), 0.0f);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < pool.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t n =
          std::min(static_cast<size_t>(cfg.batch_size), pool.size() - start);
      nn::Mat<float> x(dim, static_cast<Eigen::Index>(n));
      std::vector<int> labels(n);
      for (size_t i = 0; i < n; ++i) {
        const Example* e = pool[order[start + i]];
        std::memcpy(x.col(static_cast<Eigen::Index>(i)).data(),
                    e->image.pixels.data(), sizeof(float) * e->image.size());
        labels[i] = e->label;
      }
      const nn::Mat<float>& logits = net.forward(x);
      nn::CeResult<float> ce = nn::softmax_cross_entropy(logits, labels);
      net.zero_grads();
      net.backward(ce.dlogits);
      const float scale = 1.0f / static_cast<float>(n);
      for (size_t i = 0; i < params.size(); ++i) {
        nn::ParamView<float> p = params[i];
        float* v = vel[i].data();
        for (Eigen::Index j = 0; j < p.count; ++j) {
          v[j] = static_cast<float>(cfg.momentum) * v[j] -
                 static_cast<float>(cfg.lr) * p.grad[j] * scale;
          p.value[j] += v[j];
        }
      }
    }
  }
}

}  // namespace

PruneCurve fine_prune(const Checkpoint& model, const Dataset& heldout,
                      const EvalPartitions& parts,
                      const std::vector<double>& fractions,
                      const TrainConfig& finetune_cfg, bool include_effective) {
  const auto t0 = Clock::now();
  heldout.validate();
  for (size_t i = 0; i < fractions.size(); ++i) {
    if (fractions[i] < 0.0 || fractions[i] >= 1.0) {
      throw ValidationError("prune fraction " + std::to_string(fractions[i]) +
                            " must lie in [0,1); 1.0 would leave no channels");
    }
    if (i > 0 && fractions[i] <= fractions[i - 1]) {
      throw ValidationError("prune fractions must be strictly increasing");
    }
  }

  std::vector<const Example*> pool;
  for (const Example& e : heldout.examples) {
    if (!include_effective && e.innocuous) continue;
    pool.push_back(&e);
  }
  if (pool.empty()) throw ValidationError("held-out pool is empty after filtering");

  nn::Network<float> base = to_network(model);
  const int conv_index = base.conv_index_from_back(0);
  if (conv_index < 0) throw ValidationError("model has no convolution layer to prune");
  const std::vector<double> activity = channel_activity(base, conv_index, pool);

  std::vector<int> rank(activity.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(),
                   [&](int a, int b) { return activity[a] < activity[b]; });

  PruneCurve curve;
  curve.pruned_layer_channels = static_cast<int>(activity.size());
  curve.include_effective = include_effective;
  curve.seed = finetune_cfg.seed;

  for (size_t fi = 0; fi < fractions.size(); ++fi) {
    const double frac = fractions[fi];
    const int n_prune = static_cast<int>(
        std::llround(frac * static_cast<double>(activity.size())));

    nn::Network<float> net = to_network(model);
    auto& conv = std::get<nn::Conv<float>>(net.layers()[conv_index]);
    conv.channel_mask.setOnes(conv.out_c);
    for (int i = 0; i < n_prune; ++i) conv.channel_mask(rank[i]) = 0.0f;

    PrunePoint pt;
    pt.fraction = frac;
    EvalReport before = evaluate_attack(net, parts);
    pt.cda_before = before.cda.rate();
    pt.asr_before = before.asr.rate();

    finetune(net, pool, finetune_cfg, derive_seed(finetune_cfg.seed, 300 + fi));
    EvalReport after = evaluate_attack(net, parts);
    pt.cda_after = after.cda.rate();
    pt.asr_after = after.asr.rate();
    curve.points.push_back(pt);
  }
  curve.seconds = elapsed_s(t0);
  return curve;
}

json PruneCurve::to_json() const {
  json pts = json::array();
  for (const PrunePoint& p : points) {
    pts.push_back({{"fraction", p.fraction},
                   {"cda_before", p.cda_before},
                   {"asr_before", p.asr_before},
                   {"cda_after", p.cda_after},
                   {"asr_after", p.asr_after}});
  }
  return json{{"defense", "fine_prune"},
              {"points", pts},
              {"pruned_layer_channels", pruned_layer_channels},
              {"include_effective", include_effective},
              {"seed", seed},
              {"seconds", seconds}};
}

void write_prune_report(const PruneCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << curve.to_json().dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// STRIP
// ---------------------------------------------------------------------------

namespace {

// Perturbation = additive superposition of a benign image at weight w,
// clipped to [0,1]. Addition keeps a strong trigger intact (the point of the
// consistency test) while still scrambling the rest of the content.
double mean_perturbed_entropy(nn::Network<float>& net, const Image& input,
                              const nn::Mat<float>& pool, int n_perturb,
                              double blend, Rng& rng) {
  const Eigen::Index dim = static_cast<Eigen::Index>(input.size());
  nn::Mat<float> x(dim, n_perturb);
  const float w = static_cast<float>(blend);
  for (int j = 0; j < n_perturb; ++j) {
    const Eigen::Index pick =
        static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(pool.cols())));
    for (Eigen::Index i = 0; i < dim; ++i) {
      x(i, j) =
          std::min(1.0f, std::max(0.0f, input.pixels[i] + w * pool(i, pick)));
    }
  }
  const nn::Mat<float>& logits = net.forward(x);
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto col = logits.col(j);
    const float mx = col.maxCoeff();
    nn::Vec<float> e = (col.array() - mx).exp();
    const float z = e.sum();
    double h = 0.0;
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      const double p = double(e(k)) / double(z);
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / n_perturb;
}

}  // namespace

StripReport strip_detect(nn::Network<float>& net, const Dataset& benign_pool,
                         const std::vector<Example>& suspects,
                         const StripOptions& options) {
  const auto t0 = Clock::now();
  benign_pool.validate();
  if (options.perturbations < 10) {
    throw ValidationError("strip_detect needs at least 10 perturbations");
  }
  if (suspects.empty()) throw ValidationError("strip_detect suspects pool is empty");

  nn::Mat<float> pool(static_cast<Eigen::Index>(benign_pool.examples[0].image.size()),
                      static_cast<Eigen::Index>(benign_pool.size()));
  for (size_t i = 0; i < benign_pool.size(); ++i) {
    std::memcpy(pool.col(static_cast<Eigen::Index>(i)).data(),
                benign_pool.examples[i].image.pixels.data(),
                sizeof(float) * benign_pool.examples[i].image.size());
  }

  StripReport rep;
  rep.num_classes = net.num_classes();
  rep.seed = options.seed;
  rep.frr_levels = options.frr_levels;

  Rng rng(options.seed);
  for (const Example& e : benign_pool.examples) {
    rep.benign_entropy.push_back(mean_perturbed_entropy(
        net, e.image, pool, options.perturbations, options.blend, rng));
  }
  for (const Example& e : suspects) {
    rep.suspect_entropy.push_back(mean_perturbed_entropy(
        net, e.image, pool, options.perturbations, options.blend, rng));
  }

  std::vector<double> sorted = rep.benign_entropy;
  std::sort(sorted.begin(), sorted.end());
  for (double frr : options.frr_levels) {
    const auto rank = static_cast<size_t>(std::max(
        0.0, std::ceil(frr * static_cast<double>(sorted.size())) - 1.0));
    const double threshold = sorted[std::min(rank, sorted.size() - 1)];
    rep.thresholds.push_back(threshold);
    size_t escaped = 0;
    for (double h : rep.suspect_entropy)
      if (h > threshold) ++escaped;
    rep.far.push_back(static_cast<double>(escaped) /
                      static_cast<double>(rep.suspect_entropy.size()));
  }
  rep.seconds = elapsed_s(t0);
  return rep;
}

json StripReport::to_json() const {
  return json{{"defense", "strip"},
              {"benign_entropy", benign_entropy},
              {"suspect_entropy", suspect_entropy},
              {"frr_levels", frr_levels},
              {"thresholds", thresholds},
              {"far", far},
              {"num_classes", num_classes},
              {"seed", seed},
              {"seconds", seconds}};
}

void write_strip_report(const StripReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << report.to_json().dump(2) << "\n";
}

json entropy_histogram(const std::vector<double>& entropies, int num_classes,
                       int bins) {
  const double hi = std::log(static_cast<double>(num_classes));
  std::vector<int> counts(static_cast<size_t>(bins), 0);
  std::vector<double> edges(static_cast<size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) edges[b] = hi * b / bins;
  for (double h : entropies) {
    int b = static_cast<int>(h / hi * bins);
    b = std::max(0, std::min(bins - 1, b));
    counts[static_cast<size_t>(b)]++;
  }
  return json{{"edges", edges}, {"counts", counts}};
}

// ---------------------------------------------------------------------------
// Neural Cleanse
// ---------------------------------------------------------------------------

namespace {

struct Adam {
  std::vector<double> m, v;
  double lr;
  int t = 0;
  explicit Adam(size_t n, double lr_) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
  void step(std::vector<float>& x, const std::vector<double>& g) {
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, t);
    const double bc2 = 1.0 - std::pow(b2, t);
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      x[i] -= static_cast<float>(lr * (m[i] / bc1) /
                                 (std::sqrt(v[i] / bc2) + eps));
    }
  }
};

void clamp_unit(std::vector<float>& v) {
  for (float& x : v) x = std::min(1.0f, std::max(0.0f, x));
}

}  // namespace

CleanseReport neural_cleanse(nn::Network<float>& net, const Dataset& probe,
                             const CleanseOptions& options) {
  const auto t0 = Clock::now();
  probe.validate();
  const int num_classes = net.num_classes();
  const int hw = probe.height * probe.width;
  const int chans = probe.channels;
  const Eigen::Index dim = net.input_dim();
  const Eigen::Index n_probe = static_cast<Eigen::Index>(probe.size());

  nn::Mat<float> xs(dim, n_probe);
  for (Eigen::Index i = 0; i < n_probe; ++i) {
    std::memcpy(xs.col(i).data(), probe.examples[static_cast<size_t>(i)].image.pixels.data(),
                sizeof(float) * static_cast<size_t>(dim));
  }

  CleanseReport rep;
  rep.seed = options.seed;
  rep.mask_norms.assign(num_classes, 0.0);
  rep.diverged.assign(num_classes, false);

  std::vector<std::vector<float>> masks(num_classes), patterns(num_classes);

  for (int target = 0; target < num_classes; ++target) {
    Rng rng(derive_seed(options.seed, static_cast<uint64_t>(target)));
    std::vector<float> mask(hw), pattern(static_cast<size_t>(hw) * chans);
    for (float& v : mask) v = static_cast<float>(rng.range(0.05, 0.2));
    for (float& v : pattern) v = static_cast<float>(rng.range(0.0, 1.0));

    Adam opt_m(mask.size(), options.lr);
    Adam opt_p(pattern.size(), options.lr);
    double lambda = options.lambda_init;

    std::vector<Eigen::Index> order(static_cast<size_t>(n_probe));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    bool diverged = false;

    for (int epoch = 0; epoch < options.epochs && !diverged; ++epoch) {
      rng.shuffle(order);
      for (Eigen::Index start = 0; start < n_probe;
           start += options.batch_size) {
        const Eigen::Index bn =
            std::min<Eigen::Index>(options.batch_size, n_probe - start);
        nn::Mat<float> xb(dim, bn);
        for (Eigen::Index j = 0; j < bn; ++j) {
          const float* src = xs.col(order[static_cast<size_t>(start + j)]).data();
          float* dst = xb.col(j).data();
          for (int p = 0; p < hw; ++p) {
            const float m = mask[static_cast<size_t>(p)];
            for (int c = 0; c < chans; ++c) {
              const int i = p * chans + c;
              dst[i] = (1.0f - m) * src[i] + m * pattern[static_cast<size_t>(i)];
            }
          }
        }
        const nn::Mat<float>& logits = net.forward(xb);
        std::vector<int> labels(static_cast<size_t>(bn), target);
        nn::CeResult<float> ce = nn::softmax_cross_entropy(logits, labels);
        if (!std::isfinite(ce.loss_sum)) {
          diverged = true;
          break;
        }
        size_t hits = 0;
        for (Eigen::Index j = 0; j < bn; ++j) {
          Eigen::Index best;
          logits.col(j).maxCoeff(&best);
          if (static_cast<int>(best) == target) ++hits;
        }
        // bang-bang control of the sparsity weight on batch attack success
        if (double(hits) / double(bn) > options.success_target) {
          lambda = std::min(lambda * options.lambda_factor, 10.0);
        } else {
          lambda = std::max(lambda / options.lambda_factor, 1e-8);
        }

        ce.dlogits *= 1.0f / static_cast<float>(bn);
        nn::Mat<float> dx;
        net.backward(ce.dlogits, /*param_grads=*/false, &dx);

        std::vector<double> gm(mask.size(), 0.0), gp(pattern.size(), 0.0);
        for (Eigen::Index j = 0; j < bn; ++j) {
          const float* g = dx.col(j).data();
          const float* src = xs.col(order[static_cast<size_t>(start + j)]).data();
          for (int p = 0; p < hw; ++p) {
            double acc = 0.0;
            for (int c = 0; c < chans; ++c) {
              const int i = p * chans + c;
              gp[static_cast<size_t>(i)] +=
                  double(g[i]) * double(mask[static_cast<size_t>(p)]);
              acc += double(g[i]) *
                     (double(pattern[static_cast<size_t>(i)]) - double(src[i]));
            }
            gm[static_cast<size_t>(p)] += acc;
          }
        }
        for (size_t p = 0; p < mask.size(); ++p) {
          if (mask[p] > 0.0f) gm[p] += lambda;
        }
        opt_m.step(mask, gm);
        opt_p.step(pattern, gp);
        clamp_unit(mask);
        clamp_unit(pattern);
      }
    }

    rep.diverged[static_cast<size_t>(target)] = diverged;
    double norm = 0.0;
    for (float v : mask) norm += v;
    rep.mask_norms[static_cast<size_t>(target)] = diverged ? 0.0 : norm;
    masks[static_cast<size_t>(target)] = std::move(mask);
    patterns[static_cast<size_t>(target)] = std::move(pattern);
  }

  // Anomaly scoring over the valid norms; the minimal-norm class is the
  // backdoor candidate.
  std::vector<double> valid_norms;
  std::vector<int> valid_cls;
  for (int c = 0; c < num_classes; ++c) {
    if (!rep.diverged[static_cast<size_t>(c)]) {
      valid_norms.push_back(rep.mask_norms[static_cast<size_t>(c)]);
      valid_cls.push_back(c);
    }
  }
  rep.anomaly_indices.assign(num_classes, 0.0);
  int min_cls = -1;
  if (valid_norms.size() >= 3) {
    try {
      std::vector<double> idx = mad_anomaly_indices(valid_norms);
      double best = std::numeric_limits<double>::max();
      for (size_t i = 0; i < valid_cls.size(); ++i) {
        rep.anomaly_indices[static_cast<size_t>(valid_cls[i])] = idx[i];
        if (valid_norms[i] < best) {
          best = valid_norms[i];
          min_cls = valid_cls[i];
        }
      }
      const double med = median_of(valid_norms);
      if (min_cls >= 0 &&
          rep.anomaly_indices[static_cast<size_t>(min_cls)] > options.anomaly_threshold &&
          rep.mask_norms[static_cast<size_t>(min_cls)] < med) {
        rep.flagged = true;
        rep.flagged_class = min_cls;
      }
    } catch (const DegenerateError&) {
      // zero spread: nothing anomalous
    }
  }
  if (min_cls < 0 && !valid_cls.empty()) {
    min_cls = valid_cls[0];
    for (int c : valid_cls) {
      if (rep.mask_norms[static_cast<size_t>(c)] <
          rep.mask_norms[static_cast<size_t>(min_cls)])
        min_cls = c;
    }
  }
  if (min_cls >= 0) {
    rep.mask = Image(probe.height, probe.width, 1);
    rep.mask.pixels = masks[static_cast<size_t>(min_cls)];
    rep.pattern = Image(probe.height, probe.width, chans);
    rep.pattern.pixels = patterns[static_cast<size_t>(min_cls)];
  }
  rep.seconds = elapsed_s(t0);
  return rep;
}

json CleanseReport::to_json() const {
  return json{{"defense", "neural_cleanse"},
              {"mask_norms", mask_norms},
              {"diverged", diverged},
              {"anomaly_indices", anomaly_indices},
              {"flagged", flagged},
              {"flagged_class", flagged_class},
              {"seed", seed},
              {"seconds", seconds}};
}

namespace {

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  const bool color = img.channels == 3;
  out << (color ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < (color ? 3 : 1); ++c) {
        const int ch = std::min(c, img.channels - 1);
        const auto byte = static_cast<unsigned char>(
            std::lround(clamp01(img.at(y, x, ch)) * 255.0));
        out.put(static_cast<char>(byte));
      }
}

void write_raw_floats(const std::vector<float>& data,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(sizeof(float) * data.size()));
}

}  // namespace

void write_cleanse_report(const CleanseReport& report,
                          const std::filesystem::path& dir,
                          const std::string& stem) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / (stem + "_report.json"), std::ios::trunc);
    out << report.to_json().dump(2) << "\n";
  }
  if (report.mask.size() > 0) {
    write_raw_floats(report.mask.pixels, dir / (stem + "_mask.bin"));
    write_raw_floats(report.pattern.pixels, dir / (stem + "_pattern.bin"));
    write_pgm(report.mask, dir / (stem + "_mask.pgm"));
    write_pgm(report.pattern, dir / (stem + (report.pattern.channels == 3
                                                 ? "_pattern.ppm"
                                                 : "_pattern.pgm")));
  }
}

// ---------------------------------------------------------------------------
// MM-BD
// ---------------------------------------------------------------------------

MmbdReport mm_bd_detect(nn::Network<float>& net, const MmbdOptions& options,
                        const Dataset* warm_pool) {
  const auto t0 = Clock::now();
  const int num_classes = net.num_classes();
  const Eigen::Index dim = net.input_dim();

  MmbdReport rep;
  rep.seed = options.seed;
  rep.margins.assign(num_classes, 0.0);

  // Warm-start candidates: the training example with the largest own-class
  // margin, per class.
  std::vector<Eigen::Index> warm_index(num_classes, -1);
  nn::Mat<float> warm_x;
  if (options.warm_start && warm_pool) {
    std::vector<double> best(num_classes, -std::numeric_limits<double>::max());
    warm_x.resize(dim, static_cast<Eigen::Index>(warm_pool->size()));
    for (size_t i = 0; i < warm_pool->size(); ++i) {
      std::memcpy(warm_x.col(static_cast<Eigen::Index>(i)).data(),
                  warm_pool->examples[i].image.pixels.data(),
                  sizeof(float) * static_cast<size_t>(dim));
    }
    constexpr Eigen::Index kChunk = 256;
    for (Eigen::Index start = 0; start < warm_x.cols(); start += kChunk) {
      const Eigen::Index n = std::min(kChunk, warm_x.cols() - start);
      const nn::Mat<float>& logits = net.forward(warm_x.middleCols(start, n));
      for (Eigen::Index j = 0; j < n; ++j) {
        const int cls = warm_pool->examples[static_cast<size_t>(start + j)].label;
        double other = -std::numeric_limits<double>::max();
        for (int k = 0; k < num_classes; ++k)
          if (k != cls) other = std::max(other, double(logits(k, j)));
        const double margin = double(logits(cls, j)) - other;
        if (margin > best[static_cast<size_t>(cls)]) {
          best[static_cast<size_t>(cls)] = margin;
          warm_index[static_cast<size_t>(cls)] = start + j;
        }
      }
    }
  }

  for (int cls = 0; cls < num_classes; ++cls) {
    Rng rng(derive_seed(options.seed, static_cast<uint64_t>(cls)));
    const bool warm = options.warm_start && warm_pool &&
                      warm_index[static_cast<size_t>(cls)] >= 0;
    const Eigen::Index cols = options.restarts + (warm ? 1 : 0);
    nn::Mat<float> x(dim, cols);
    for (Eigen::Index j = 0; j < options.restarts; ++j)
      for (Eigen::Index i = 0; i < dim; ++i)
        x(i, j) = static_cast<float>(rng.unit());
    if (warm) x.col(cols - 1) = warm_x.col(warm_index[static_cast<size_t>(cls)]);

    double best_margin = -std::numeric_limits<double>::max();
    nn::Mat<float> dlogits(num_classes, cols);
    for (int step = 0; step <= options.steps; ++step) {
      const nn::Mat<float>& logits = net.forward(x);
      if (!logits.allFinite()) {
        throw Error("mm_bd_detect: model produced non-finite logits");
      }
      dlogits.setZero();
      for (Eigen::Index j = 0; j < cols; ++j) {
        int runner_up = cls == 0 ? 1 : 0;
        for (int k = 0; k < num_classes; ++k) {
          if (k != cls && logits(k, j) > logits(runner_up, j)) runner_up = k;
        }
        const double margin = double(logits(cls, j)) - double(logits(runner_up, j));
        best_margin = std::max(best_margin, margin);
        dlogits(cls, j) = 1.0f;
        dlogits(runner_up, j) = -1.0f;
      }
      if (step == options.steps) break;
      nn::Mat<float> dx;
      net.backward(dlogits, /*param_grads=*/false, &dx);
      x += static_cast<float>(options.step_size) * dx;
      x = x.cwiseMax(0.0f).cwiseMin(1.0f);
    }
    rep.margins[static_cast<size_t>(cls)] = best_margin;
  }

  // One-sided anomaly decision: only a margin above the median can flag.
  if (num_classes >= 3) {
    try {
      rep.anomaly_indices = mad_anomaly_indices(rep.margins);
      const double med = median_of(rep.margins);
      int best_cls = 0;
      for (int c = 1; c < num_classes; ++c)
        if (rep.margins[static_cast<size_t>(c)] > rep.margins[static_cast<size_t>(best_cls)])
          best_cls = c;
      if (rep.margins[static_cast<size_t>(best_cls)] > med &&
          rep.anomaly_indices[static_cast<size_t>(best_cls)] >
              options.anomaly_threshold) {
        rep.flagged = true;
        rep.suspected_class = best_cls;
      }
    } catch (const DegenerateError&) {
      // all margins identical: nothing anomalous
    }
  }
  rep.seconds = elapsed_s(t0);
  return rep;
}

json MmbdReport::to_json() const {
  return json{{"defense", "mm_bd"},
              {"margins", margins},
              {"anomaly_indices", anomaly_indices},
              {"flagged", flagged},
              {"suspected_class", suspected_class},
              {"seed", seed},
              {"seconds", seconds}};
}

void write_mmbd_report(const MmbdReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << report.to_json().dump(2) << "\n";
}

}  // namespace hcb
