#pragma once

// Binary file formats shared with the checkpoint exporter.
//
// Weight file (.hfpw), little-endian:
//   "HFPW"  u32 version (=1)
//   u32 d_model, u32 n_layers, u32 n_heads, u32 vocab_size, u32 max_seq,
//   f32 rope_theta, f32 rms_eps, u8 tied, u32 d_hidden[n_layers]
//   u32 tensor_count, then per tensor:
//     u16 name_length, name (UTF-8), u8 rank, u32 dims[rank], u64 byte_offset
//   payload: raw row-major f32 data; byte_offset is from the start of the file.
//
// Tensor names: "embed", "layers.{l}.attn.{wq,wk,wv,wo}", "layers.{l}.mlp.{gate,up,down}",
// "layers.{l}.attn_norm", "layers.{l}.mlp_norm", "final_norm", "lm_head" (absent when tied).
// Matrices are stored [out_features × in_features].
//
// Token corpus (.tok), little-endian:
//   "HFTK"  u32 version (=1)  u32 seq_len  u32 seq_count  u32 ids[seq_count·seq_len]

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hfprune/model.h"

namespace hfprune {

inline constexpr std::uint32_t kWeightFormatVersion = 1;
inline constexpr std::uint32_t kTokenFormatVersion = 1;

std::vector<char> serialize_model(const Model& model);
Model parse_model(std::span<const char> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// N fixed-length token sequences.
class TokenCorpus {
 public:
  TokenCorpus() = default;
  TokenCorpus(std::uint32_t seq_len, std::vector<TokenId> ids);

  std::uint32_t seq_len() const noexcept { return seq_len_; }
  std::size_t size() const noexcept { return seq_len_ == 0 ? 0 : ids_.size() / seq_len_; }
  bool empty() const noexcept { return size() == 0; }
  std::span<const TokenId> sequence(std::size_t i) const { return {ids_.data() + i * seq_len_, seq_len_}; }
  std::span<const TokenId> ids() const noexcept { return ids_; }

  TokenId max_token() const;

  bool operator==(const TokenCorpus&) const = default;

 private:
  std::uint32_t seq_len_ = 0;
  std::vector<TokenId> ids_;
};

std::vector<char> serialize_corpus(const TokenCorpus& corpus);
TokenCorpus parse_corpus(std::span<const char> bytes);

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& path);
TokenCorpus load_corpus(const std::filesystem::path& path);

TokenCorpus make_random_corpus(std::size_t count, std::uint32_t seq_len, std::uint32_t vocab_size,
                               std::uint64_t seed);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace hfprune
