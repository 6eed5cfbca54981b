#ifndef WSED_CHECKPOINT_HPP
#define WSED_CHECKPOINT_HPP

#include <filesystem>

#include "wsed/model.hpp"

namespace wsed {

// Checkpoint format: magic "WSCK", u32 version=1, u32 entry count, then per
// entry: u32 name length, name bytes, u32 rank, u32 dims[rank], f64 data.
// Little-endian throughout. Entries are the model state tensors in visitor
// order plus a scalar "init_seed".

void save_checkpoint(const std::filesystem::path& path, ModelParams& params);

/// Rebuilds parameters for `config` and fills every state tensor from the
/// file. Missing, unknown or mis-shaped entries raise FormatError.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

} // namespace wsed

#endif
