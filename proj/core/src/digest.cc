#include "hfprune/digest.h"

#include <cstdio>

#ifndef HFPRUNE_VERSION
#define HFPRUNE_VERSION "0.0.0"
#endif

namespace hfprune {

std::uint64_t fnv1a64(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string digest_hex(std::span<const char> bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string("fnv1a64:") + buf;
}

std::string model_digest(const Model& model) { return digest_hex(serialize_model(model)); }

std::string corpus_digest(const TokenCorpus& corpus) { return digest_hex(serialize_corpus(corpus)); }

std::string_view toolkit_version() { return HFPRUNE_VERSION; }

}  // namespace hfprune
