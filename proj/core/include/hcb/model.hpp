#ifndef HCB_MODEL_HPP
#define HCB_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hcb/net.hpp"

namespace hcb {

enum class ArchId { cnn3x2, cnn_shallow };

std::string arch_name(ArchId a);
ArchId arch_from_name(const std::string& name);

struct ModelSpec {
  ArchId arch = ArchId::cnn3x2;
  int height = 28;
  int width = 28;
  int channels = 1;
  int num_classes = 10;
};

/// Builds the network with Kaiming-uniform initialised weights.
/// cnn3x2:      conv(32,3)-pool-conv(64,3)-pool-conv(64,3)-dense(128)-dense(K)
/// cnn_shallow: conv(8,3)-pool-conv(16,3)-dense(64)-dense(K)
/// All convolutions are valid (no padding), all hidden activations rectified.
template <typename S>
nn::Network<S> make_network(const ModelSpec& spec, uint64_t init_seed);

extern template nn::Network<float> make_network<float>(const ModelSpec&, uint64_t);
extern template nn::Network<double> make_network<double>(const ModelSpec&, uint64_t);

struct CheckpointMeta {
  uint64_t seed = 0;
  std::string config_digest;
  int epochs = 0;
  std::string phase = "final";  // "phase1" for the persisted first-step model
  int format_version = 1;
};

/// Trained parameters plus reproducibility metadata. The weight blob
/// round-trips byte-exactly through save/load.
struct Checkpoint {
  ModelSpec spec;
  std::vector<float> params;
  CheckpointMeta meta;
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

nn::Network<float> to_network(const Checkpoint& ck);
Checkpoint make_checkpoint(nn::Network<float>& net, const ModelSpec& spec,
                           const CheckpointMeta& meta);

}  // namespace hcb

#endif  // HCB_MODEL_HPP
