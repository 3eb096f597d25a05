#pragma once

#include <filesystem>
#include <iosfwd>

#include "xtf/model/params.hpp"

namespace xtf {

// Binary checkpoint, little-endian throughout:
//
//   "XTFM"                      4 bytes magic
//   version                     u32 (currently 1)
//   vocab_size d_model n_layers n_heads d_ff max_seq   u32 each, this order
//   seed                        u64
//   tied_output                 u8 (0/1)
//   tensor_count                u32
//   per tensor, canonical order:
//     name_length u32, name bytes, rank u32, dims u32[rank], f64[prod(dims)]
//
// Matrices are stored rank 2, row-major.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace xtf
