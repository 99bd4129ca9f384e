#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rbfer/balance.hpp"
#include "rbfer/model.hpp"

namespace rbfer {

/// Everything a trained model needs besides its parameters: class names,
/// training-split input normalization statistics, the balance weights the
/// run used, and the seed record.
struct CheckpointMeta {
  std::vector<std::string> class_names;
  std::vector<double> input_mean;  // per channel
  std::vector<double> input_std;
  BalanceWeights balance;
  std::uint64_t seed = 0;
};

/// RBCK1 container: magic "RBCK1\0", little-endian u32 header length, JSON
/// header (config, meta, tensor manifest), then the named tensors as
/// little-endian f64 in manifest order. Parameters and batchnorm running
/// statistics are both stored.
void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointMeta& meta);

std::unique_ptr<Model> load_checkpoint(const std::string& path,
                                       CheckpointMeta* meta);

}  // namespace rbfer
