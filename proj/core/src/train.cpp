#include "hcb/train.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>

namespace hcb {

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::clean: return "clean";
    case TrainMode::standard_poisoned: return "standard_poisoned";
    case TrainMode::one_step: return "one_step";
    case TrainMode::two_step: return "two_step";
  }
  return "clean";
}

TrainMode train_mode_from_name(const std::string& name) {
  if (name == "clean") return TrainMode::clean;
  if (name == "standard_poisoned") return TrainMode::standard_poisoned;
  if (name == "one_step") return TrainMode::one_step;
  if (name == "two_step") return TrainMode::two_step;
  throw ValidationError("unknown train mode: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (alpha < 0.0 || beta < 0.0) throw ValidationError("alpha and beta must be >= 0");
  if (lr <= 0.0) throw ValidationError("learning rate must be positive");
}

// ---------------------------------------------------------------------------
// Loss terms (sum form, matching the dataset-level definitions)
// ---------------------------------------------------------------------------

namespace {

template <typename S>
double ce_sum(nn::Network<S>& net, const Batch<S>& batch) {
  if (batch.size() == 0) return 0.0;
  const nn::Mat<S>& logits = net.forward(batch.images);
  return nn::softmax_cross_entropy(logits, batch.labels).loss_sum;
}

}  // namespace

template <typename S>
double loss_step1(nn::Network<S>& net, const Batch<S>& clean_batch,
                  const Batch<S>& cover_batch, double alpha) {
  if (clean_batch.size() == 0) {
    throw ValidationError("loss_step1 requires a non-empty clean batch");
  }
  double l1 = ce_sum(net, clean_batch);
  if (cover_batch.size() > 0) l1 += alpha * ce_sum(net, cover_batch);
  return l1;
}

template <typename S>
double loss_total(double l1, nn::Network<S>& net, const Batch<S>& dirty_batch,
                  double beta) {
  double l = l1;
  if (dirty_batch.size() > 0) l += beta * ce_sum(net, dirty_batch);
  return l;
}

template double loss_step1<float>(nn::Network<float>&, const Batch<float>&,
                                  const Batch<float>&, double);
template double loss_step1<double>(nn::Network<double>&, const Batch<double>&,
                                   const Batch<double>&, double);
template double loss_total<float>(double, nn::Network<float>&, const Batch<float>&,
                                  double);
template double loss_total<double>(double, nn::Network<double>&,
                                   const Batch<double>&, double);

// ---------------------------------------------------------------------------
// SGD with momentum and a step decay at decay_at * epochs
// ---------------------------------------------------------------------------

namespace {

class Sgd {
 public:
  Sgd(std::vector<nn::ParamView<float>> params, const TrainConfig& cfg,
      int phase_epochs)
      : params_(std::move(params)), cfg_(cfg), phase_epochs_(phase_epochs) {
    velocity_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      velocity_[i].assign(static_cast<size_t>(params_[i].count), 0.0f);
    }
  }

  double lr_at(int epoch) const {
    const int decay_epoch =
        static_cast<int>(std::floor(cfg_.decay_at * phase_epochs_));
    return (phase_epochs_ > 1 && epoch >= decay_epoch) ? cfg_.lr * cfg_.lr_decay
                                                       : cfg_.lr;
  }

  /// One update from gradient sums; scale is 1/batch_size.
  void step(int epoch, double scale) {
    const float lr = static_cast<float>(lr_at(epoch));
    const float mu = static_cast<float>(cfg_.momentum);
    const float s = static_cast<float>(scale);
    for (size_t i = 0; i < params_.size(); ++i) {
      nn::ParamView<float> p = params_[i];
      float* v = velocity_[i].data();
      for (Eigen::Index j = 0; j < p.count; ++j) {
        v[j] = mu * v[j] - lr * p.grad[j] * s;
        p.value[j] += v[j];
      }
    }
  }

 private:
  std::vector<nn::ParamView<float>> params_;
  std::vector<std::vector<float>> velocity_;
  TrainConfig cfg_;
  int phase_epochs_;
};

struct Subset {
  std::vector<const Example*> pool;
  float weight = 1.0f;  // per-sample loss weight (1, alpha, or beta)
};

// One training phase over proportionally composed batches. Every step draws
// from each subset a slice proportional to its population, so the summed loss
// terms are estimated without bias.
void run_phase(nn::Network<float>& net, std::vector<Subset>& subsets,
               const TrainConfig& cfg, int phase_index, int phase_epochs,
               Rng& order_rng, std::vector<TraceRow>& trace) {
  size_t total = 0;
  for (const Subset& s : subsets) total += s.pool.size();
  if (total == 0) throw ValidationError("training set is empty");

  const int steps =
      static_cast<int>((total + cfg.batch_size - 1) / cfg.batch_size);
  Sgd opt(net.params(), cfg, phase_epochs);

  std::vector<std::vector<size_t>> order(subsets.size());
  const Eigen::Index dim = net.input_dim();

  for (int epoch = 0; epoch < phase_epochs; ++epoch) {
    for (size_t s = 0; s < subsets.size(); ++s) {
      order[s].resize(subsets[s].pool.size());
      std::iota(order[s].begin(), order[s].end(), size_t{0});
      order_rng.shuffle(order[s]);
    }

    double loss_sum = 0.0;
    size_t seen = 0;
    for (int step = 0; step < steps; ++step) {
      // proportional slice of each subset for this step
      std::vector<const Example*> members;
      std::vector<float> weights;
      for (size_t s = 0; s < subsets.size(); ++s) {
        const size_t ns = subsets[s].pool.size();
        const size_t lo = ns * static_cast<size_t>(step) / steps;
        const size_t hi = ns * static_cast<size_t>(step + 1) / steps;
        for (size_t t = lo; t < hi; ++t) {
          members.push_back(subsets[s].pool[order[s][t]]);
          weights.push_back(subsets[s].weight);
        }
      }
      if (members.empty()) continue;

      nn::Mat<float> x(dim, static_cast<Eigen::Index>(members.size()));
      std::vector<int> labels(members.size());
      for (size_t i = 0; i < members.size(); ++i) {
        const Image& img = members[i]->image;
        std::memcpy(x.col(static_cast<Eigen::Index>(i)).data(), img.pixels.data(),
                    sizeof(float) * img.size());
        labels[i] = members[i]->label;
      }

      const nn::Mat<float>& logits = net.forward(x);
      nn::CeResult<float> ce = nn::softmax_cross_entropy(logits, labels, &weights);
      if (!std::isfinite(ce.loss_sum)) {
        throw DivergenceError("training loss became non-finite at phase " +
                                  std::to_string(phase_index) + " epoch " +
                                  std::to_string(epoch),
                              epoch);
      }
      loss_sum += ce.loss_sum;
      seen += members.size();

      net.zero_grads();
      net.backward(ce.dlogits);
      opt.step(epoch, 1.0 / static_cast<double>(members.size()));
    }
    trace.push_back({phase_index, epoch, loss_sum / static_cast<double>(seen)});
  }
}

struct Populations {
  std::vector<const Example*> clean, cover, dirty;
};

Populations split_populations(const PoisonedDataset& pd) {
  std::unordered_map<int64_t, PoisonRole> roles;
  roles.reserve(pd.records.size());
  for (const PoisonRecord& r : pd.records) roles.emplace(r.id, r.role);
  Populations p;
  for (const Example& e : pd.base.examples) {
    auto it = roles.find(e.id);
    if (it == roles.end()) {
      p.clean.push_back(&e);
    } else if (it->second == PoisonRole::dirty) {
      p.dirty.push_back(&e);
    } else {
      p.cover.push_back(&e);
    }
  }
  return p;
}

TrainResult finish(nn::Network<float>& net, const ModelSpec& spec,
                   const TrainConfig& cfg, int epochs_done,
                   std::vector<TraceRow> trace,
                   std::optional<Checkpoint> phase1 = std::nullopt) {
  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.epochs = epochs_done;
  meta.phase = "final";
  TrainResult r;
  r.checkpoint = make_checkpoint(net, spec, meta);
  r.phase1 = std::move(phase1);
  r.trace = std::move(trace);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

TrainResult train_standard(const Dataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (cfg.mode != TrainMode::clean && cfg.mode != TrainMode::standard_poisoned) {
    throw ValidationError("train_standard expects mode clean or standard_poisoned");
  }
  nn::Network<float> net =
      make_network<float>(spec, derive_seed(cfg.seed, 100));
  Rng order_rng(derive_seed(cfg.seed, 200));
  std::vector<Subset> subsets(1);
  subsets[0].weight = 1.0f;
  subsets[0].pool.reserve(data.size());
  for (const Example& e : data.examples) subsets[0].pool.push_back(&e);
  std::vector<TraceRow> trace;
  run_phase(net, subsets, cfg, 1, cfg.epochs, order_rng, trace);
  return finish(net, spec, cfg, cfg.epochs, std::move(trace));
}

TrainResult train_standard(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg) {
  return train_standard(data.base, spec, cfg);
}

TrainResult train_two_step(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg) {
  cfg.validate();
  data.base.validate();
  if (cfg.mode != TrainMode::two_step) {
    throw ValidationError("train_two_step expects mode two_step");
  }
  Populations pop = split_populations(data);
  if (pop.clean.empty()) throw ValidationError("no clean examples to train on");

  nn::Network<float> net =
      make_network<float>(spec, derive_seed(cfg.seed, 100));
  Rng order_rng(derive_seed(cfg.seed, 200));
  std::vector<TraceRow> trace;

  // Phase 1: L1 only -- the dirty population is excluded entirely.
  std::vector<Subset> phase1_subsets(2);
  phase1_subsets[0].pool = pop.clean;
  phase1_subsets[0].weight = 1.0f;
  phase1_subsets[1].pool = pop.cover;
  phase1_subsets[1].weight = static_cast<float>(cfg.alpha);
  run_phase(net, phase1_subsets, cfg, 1, cfg.epochs, order_rng, trace);

  CheckpointMeta p1_meta;
  p1_meta.seed = cfg.seed;
  p1_meta.epochs = cfg.epochs;
  p1_meta.phase = "phase1";
  Checkpoint phase1 = make_checkpoint(net, spec, p1_meta);

  // Phase 2: fine-tune under the full loss; optimizer state starts fresh.
  const int p2_epochs = cfg.phase2_epochs > 0 ? cfg.phase2_epochs : cfg.epochs;
  std::vector<Subset> phase2_subsets(3);
  phase2_subsets[0].pool = pop.clean;
  phase2_subsets[0].weight = 1.0f;
  phase2_subsets[1].pool = pop.cover;
  phase2_subsets[1].weight = static_cast<float>(cfg.alpha);
  phase2_subsets[2].pool = pop.dirty;
  phase2_subsets[2].weight = static_cast<float>(cfg.beta);
  run_phase(net, phase2_subsets, cfg, 2, p2_epochs, order_rng, trace);

  return finish(net, spec, cfg, cfg.epochs + p2_epochs, std::move(trace),
                std::move(phase1));
}

TrainResult train_one_step(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg) {
  cfg.validate();
  data.base.validate();
  if (cfg.mode != TrainMode::one_step) {
    throw ValidationError("train_one_step expects mode one_step");
  }
  Populations pop = split_populations(data);
  if (pop.clean.empty()) throw ValidationError("no clean examples to train on");

  nn::Network<float> net =
      make_network<float>(spec, derive_seed(cfg.seed, 100));
  Rng order_rng(derive_seed(cfg.seed, 200));
  std::vector<TraceRow> trace;

  std::vector<Subset> subsets(3);
  subsets[0].pool = pop.clean;
  subsets[0].weight = 1.0f;
  subsets[1].pool = pop.cover;
  subsets[1].weight = static_cast<float>(cfg.alpha);
  subsets[2].pool = pop.dirty;
  subsets[2].weight = static_cast<float>(cfg.beta);
  run_phase(net, subsets, cfg, 1, cfg.epochs, order_rng, trace);

  return finish(net, spec, cfg, cfg.epochs, std::move(trace));
}

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  out << "epoch,phase,loss\n";
  for (const TraceRow& row : trace) {
    out << row.epoch << "," << row.phase << "," << row.loss << "\n";
  }
}

std::vector<int> predict_examples(nn::Network<float>& net,
                                  const std::vector<Example>& examples,
                                  int batch_size) {
  std::vector<int> preds;
  preds.reserve(examples.size());
  const Eigen::Index dim = net.input_dim();
  for (size_t start = 0; start < examples.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(static_cast<size_t>(batch_size),
                              examples.size() - start);
    nn::Mat<float> x(dim, static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) {
      std::memcpy(x.col(static_cast<Eigen::Index>(i)).data(),
                  examples[start + i].image.pixels.data(),
                  sizeof(float) * examples[start + i].image.size());
    }
    std::vector<int> batch_preds = net.predict(x);
    preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
  }
  return preds;
}

double accuracy(nn::Network<float>& net, const std::vector<Example>& examples) {
  if (examples.empty()) return 0.0;
  std::vector<int> preds = predict_examples(net, examples);
  size_t hits = 0;
  for (size_t i = 0; i < examples.size(); ++i)
    if (preds[i] == examples[i].label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace hcb
