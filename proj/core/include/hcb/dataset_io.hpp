#ifndef HCB_DATASET_IO_HPP
#define HCB_DATASET_IO_HPP

#include <filesystem>
#include <string>

#include "hcb/dataset.hpp"

namespace hcb {

// Dataset directory layout:
//   images.bin     N*H*W*C bytes, row-major, unsigned 8-bit
//   manifest.json  {version:1, shape:[H,W,C], num_classes, split,
//                   examples:[{id,label,innocuous}]} in id order
//
// Pixels are quantized to 8 bits on disk; in-memory values stay real-valued
// in [0,1].

void save_dataset_dir(const Dataset& ds, const std::filesystem::path& dir,
                      const std::string& config_digest = "");

Dataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace hcb

#endif  // HCB_DATASET_IO_HPP
