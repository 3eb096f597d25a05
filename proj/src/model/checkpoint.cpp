#include "xtf/model/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "xtf/io.hpp"

namespace xtf {

namespace {

constexpr std::array<char, 4> kMagic = {'X', 'T', 'F', 'M'};

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw InputError("checkpoint: truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_u32(std::ostream& out, std::uint64_t v) { put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v)); }

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  const ModelConfig& c = params.config;
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq})
    put_u32(out, static_cast<std::uint32_t>(v));
  put_le<std::uint64_t>(out, c.seed);
  put_le<std::uint8_t>(out, c.tied_output ? 1 : 0);
  put_u32(out, params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const std::string& name = params.names[i];
    const Matrix& t = params.tensors[i];
    put_u32(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint64_t>(t.rows()));
    put_u32(out, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(t.data()[k]));
  }
}

ModelParams read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("checkpoint: bad magic (expected XTFM)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw InputError("checkpoint: unsupported format version " + std::to_string(version));

  ModelParams p;
  ModelConfig& c = p.config;
  c.vocab_size = static_cast<int>(get_le<std::uint32_t>(in));
  c.d_model = static_cast<int>(get_le<std::uint32_t>(in));
  c.n_layers = static_cast<int>(get_le<std::uint32_t>(in));
  c.n_heads = static_cast<int>(get_le<std::uint32_t>(in));
  c.d_ff = static_cast<int>(get_le<std::uint32_t>(in));
  c.max_seq = static_cast<int>(get_le<std::uint32_t>(in));
  c.seed = get_le<std::uint64_t>(in);
  c.tied_output = get_le<std::uint8_t>(in) != 0;
  c.validate();

  const std::vector<std::string> expected = canonical_names(c);
  const auto count = get_le<std::uint32_t>(in);
  if (count != expected.size())
    throw InputError("checkpoint: " + std::to_string(count) + " tensors, config implies " +
                     std::to_string(expected.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(in);
    if (name_len > 4096) throw InputError("checkpoint: implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw InputError("checkpoint: truncated file");
    if (name != expected[i])
      throw InputError("checkpoint: tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                       expected[i] + "'");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank != 2) throw InputError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    const auto rows = get_le<std::uint32_t>(in);
    const auto cols = get_le<std::uint32_t>(in);
    Matrix t(rows, cols);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = std::bit_cast<double>(get_le<std::uint64_t>(in));
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
  }

  // Shape audit against a fresh layout.
  const ModelParams reference = init_params(c);
  for (std::size_t i = 0; i < p.tensors.size(); ++i)
    if (p.tensors[i].rows() != reference.tensors[i].rows() || p.tensors[i].cols() != reference.tensors[i].cols())
      throw InputError("checkpoint: tensor '" + p.names[i] + "' has shape " +
                       shape_string(p.tensors[i].rows(), p.tensors[i].cols()) + ", config implies " +
                       shape_string(reference.tensors[i].rows(), reference.tensors[i].cols()));
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, params);
  write_file_atomic(path, out.str());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::istringstream in(read_file(path), std::ios::binary);
  return read_checkpoint(in);
}

}  // namespace xtf
