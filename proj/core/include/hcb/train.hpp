#ifndef HCB_TRAIN_HPP
#define HCB_TRAIN_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hcb/model.hpp"
#include "hcb/poison.hpp"

namespace hcb {

enum class TrainMode { clean, standard_poisoned, one_step, two_step };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::clean;
  int epochs = 10;          // per phase
  int phase2_epochs = -1;   // two-step only; -1 means same as epochs
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double lr_decay = 0.1;    // multiplier applied at decay_at * epochs
  double decay_at = 2.0 / 3.0;
  double alpha = 0.3;       // cover-loss weight
  double beta = 0.2;        // backdoor-loss weight
  uint64_t seed = 0;
  bool deterministic = true;

  void validate() const;
};

struct TraceRow {
  int phase = 1;
  int epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::optional<Checkpoint> phase1;  // persisted intermediate of the two-step run
  std::vector<TraceRow> trace;
};

/// Labelled batch, one flattened image per column.
template <typename S>
struct Batch {
  nn::Mat<S> images;
  std::vector<int> labels;
  Eigen::Index size() const { return images.cols(); }
};

/// First regularization term, returned in sum form:
///   L1 = sum_clean CE(f(x), y) + alpha * sum_cover CE(f(x'), y)
/// The cover batch carries already-triggered images with ground-truth labels
/// and may be empty (contributing zero). The clean batch must be non-empty.
template <typename S>
double loss_step1(nn::Network<S>& net, const Batch<S>& clean_batch,
                  const Batch<S>& cover_batch, double alpha);

/// Total loss L = L1 + beta * sum_dirty CE(f(T(x)), y_t). The dirty batch
/// carries triggered images already labelled with the target class.
template <typename S>
double loss_total(double l1, nn::Network<S>& net, const Batch<S>& dirty_batch,
                  double beta);

extern template double loss_step1<float>(nn::Network<float>&, const Batch<float>&,
                                         const Batch<float>&, double);
extern template double loss_step1<double>(nn::Network<double>&, const Batch<double>&,
                                          const Batch<double>&, double);
extern template double loss_total<float>(double, nn::Network<float>&,
                                         const Batch<float>&, double);
extern template double loss_total<double>(double, nn::Network<double>&,
                                          const Batch<double>&, double);

/// Plain cross-entropy minimisation over the (possibly poisoned) dataset.
/// Covers the clean baseline and the data-outsourcing scenario.
TrainResult train_standard(const Dataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg);
TrainResult train_standard(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg);

/// Model-outsourcing two-step attack: phase 1 minimises L1 only
/// (clean + cover populations), phase 2 fine-tunes under the full loss.
TrainResult train_two_step(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg);

/// Direct minimisation of the full loss from random initialisation.
TrainResult train_one_step(const PoisonedDataset& data, const ModelSpec& spec,
                           const TrainConfig& cfg);

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path);

/// Batched argmax predictions over a set of examples.
std::vector<int> predict_examples(nn::Network<float>& net,
                                  const std::vector<Example>& examples,
                                  int batch_size = 256);

/// Fraction of examples whose prediction equals the stored label.
double accuracy(nn::Network<float>& net, const std::vector<Example>& examples);

}  // namespace hcb

#endif  // HCB_TRAIN_HPP
