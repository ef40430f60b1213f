#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "hfprune/model.h"
#include "hfprune/model_io.h"

namespace hfprune {

// 64-bit FNV-1a. Content identification only, not a cryptographic hash.
std::uint64_t fnv1a64(std::span<const char> bytes);

// "fnv1a64:<16 hex digits>"
std::string digest_hex(std::span<const char> bytes);
inline std::string digest_of_text(std::string_view text) { return digest_hex({text.data(), text.size()}); }

std::string model_digest(const Model& model);
std::string corpus_digest(const TokenCorpus& corpus);

std::string_view toolkit_version();

}  // namespace hfprune
