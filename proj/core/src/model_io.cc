#include "hfprune/model_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>

#include "hfprune/error.h"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace hfprune {

namespace {

constexpr char kWeightMagic[4] = {'H', 'F', 'P', 'W'};
constexpr char kTokenMagic[4] = {'H', 'F', 'T', 'K'};

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

// Bounds-checked reader. `section` names the part of the file being parsed
// so truncation errors point at the offending field.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* section) {
    T value;
    take(&value, sizeof(T), section);
    return value;
  }
  void take(void* out, std::size_t n, const char* section) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated file in ") + section + " at byte " + std::to_string(pos_));
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

struct TensorRef {
  std::string name;
  const float* data;
  std::vector<std::uint32_t> dims;
};

std::vector<TensorRef> canonical_tensors(const Model& m) {
  auto mat = [](std::string name, const Matrix& x) {
    return TensorRef{std::move(name), x.data().data(),
                     {static_cast<std::uint32_t>(x.rows()), static_cast<std::uint32_t>(x.cols())}};
  };
  auto vec = [](std::string name, const std::vector<float>& x) {
    return TensorRef{std::move(name), x.data(), {static_cast<std::uint32_t>(x.size())}};
  };
  std::vector<TensorRef> out;
  out.push_back(mat("embed", m.embedding));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& lw = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.push_back(mat(p + "attn.wq", lw.wq));
    out.push_back(mat(p + "attn.wk", lw.wk));
    out.push_back(mat(p + "attn.wv", lw.wv));
    out.push_back(mat(p + "attn.wo", lw.wo));
    out.push_back(mat(p + "mlp.gate", lw.gate));
    out.push_back(mat(p + "mlp.up", lw.up));
    out.push_back(mat(p + "mlp.down", lw.down));
    out.push_back(vec(p + "attn_norm", lw.attn_norm));
    out.push_back(vec(p + "mlp_norm", lw.mlp_norm));
  }
  out.push_back(vec("final_norm", m.final_norm));
  if (!m.config.tied) out.push_back(mat("lm_head", m.lm_head));
  return out;
}

struct TableEntry {
  std::vector<std::uint32_t> dims;
  std::uint64_t offset;
  bool used = false;
};

std::string dims_string(const std::vector<std::uint32_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

}  // namespace

std::vector<char> serialize_model(const Model& model) {
  model.validate();
  const auto& c = model.config;
  ByteWriter w;
  w.put_bytes(kWeightMagic, 4);
  w.put<std::uint32_t>(kWeightFormatVersion);
  w.put<std::uint32_t>(c.d_model);
  w.put<std::uint32_t>(c.n_layers);
  w.put<std::uint32_t>(c.n_heads);
  w.put<std::uint32_t>(c.vocab_size);
  w.put<std::uint32_t>(c.max_seq);
  w.put<float>(c.rope_theta);
  w.put<float>(c.rms_eps);
  w.put<std::uint8_t>(c.tied ? 1 : 0);
  for (const auto dh : c.d_hidden) w.put<std::uint32_t>(dh);

  const auto tensors = canonical_tensors(model);
  std::size_t table_bytes = sizeof(std::uint32_t);
  for (const auto& t : tensors) {
    table_bytes += sizeof(std::uint16_t) + t.name.size() + sizeof(std::uint8_t) +
                   t.dims.size() * sizeof(std::uint32_t) + sizeof(std::uint64_t);
  }
  std::uint64_t offset = w.size() + table_bytes;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (const auto d : t.dims) {
      w.put<std::uint32_t>(d);
      count *= d;
    }
    w.put<std::uint64_t>(offset);
    offset += count * sizeof(float);
  }
  for (const auto& t : tensors) {
    std::uint64_t count = 1;
    for (const auto d : t.dims) count *= d;
    w.put_bytes(t.data, count * sizeof(float));
  }
  return std::move(w.buffer());
}

Model parse_model(std::span<const char> bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.take(magic, 4, "header magic");
  if (std::memcmp(magic, kWeightMagic, 4) != 0) throw FormatError("bad magic: not an HFPW weight file");
  const auto version = r.get<std::uint32_t>("header version");
  if (version != kWeightFormatVersion) throw FormatError("unsupported weight format version " + std::to_string(version));

  ModelConfig c;
  c.d_model = r.get<std::uint32_t>("config d_model");
  c.n_layers = r.get<std::uint32_t>("config n_layers");
  c.n_heads = r.get<std::uint32_t>("config n_heads");
  c.vocab_size = r.get<std::uint32_t>("config vocab_size");
  c.max_seq = r.get<std::uint32_t>("config max_seq");
  c.rope_theta = r.get<float>("config rope_theta");
  c.rms_eps = r.get<float>("config rms_eps");
  const auto tied = r.get<std::uint8_t>("config tied flag");
  if (tied > 1) throw FormatError("config tied flag must be 0 or 1");
  c.tied = tied == 1;
  if (c.n_layers > (bytes.size() - r.pos()) / sizeof(std::uint32_t)) {
    throw FormatError("truncated file in config d_hidden list");
  }
  c.d_hidden.resize(c.n_layers);
  for (auto& dh : c.d_hidden) dh = r.get<std::uint32_t>("config d_hidden list");
  try {
    c.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("invalid header: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor table");
  std::map<std::string, TableEntry> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("tensor table");
    std::string name(len, '\0');
    r.take(name.data(), len, "tensor table");
    const auto rank = r.get<std::uint8_t>("tensor table");
    if (rank < 1 || rank > 2) throw FormatError("tensor table: " + name + " has unsupported rank " + std::to_string(rank));
    TableEntry e;
    e.dims.resize(rank);
    for (auto& d : e.dims) d = r.get<std::uint32_t>("tensor table");
    e.offset = r.get<std::uint64_t>("tensor table");
    if (!table.emplace(name, std::move(e)).second) throw FormatError("tensor table: duplicate tensor " + name);
  }

  auto fetch = [&](const std::string& name, std::vector<std::uint32_t> expected) -> std::vector<float> {
    auto it = table.find(name);
    if (it == table.end()) throw FormatError("tensor table: missing tensor " + name);
    auto& e = it->second;
    e.used = true;
    if (e.dims != expected) {
      throw ShapeError(name + ": header implies " + dims_string(expected) + ", file has " + dims_string(e.dims));
    }
    std::uint64_t n = 1;
    for (const auto d : e.dims) n *= d;
    const std::uint64_t nbytes = n * sizeof(float);
    if (e.offset > bytes.size() || bytes.size() - e.offset < nbytes) {
      throw FormatError("tensor payload for " + name + " lies outside the file");
    }
    std::vector<float> out(n);
    std::memcpy(out.data(), bytes.data() + e.offset, nbytes);
    return out;
  };
  auto matrix = [&](const std::string& name, std::uint32_t rows, std::uint32_t cols) {
    return Matrix(rows, cols, fetch(name, {rows, cols}));
  };

  Model m;
  m.config = c;
  m.embedding = matrix("embed", c.vocab_size, c.d_model);
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const auto dh = c.d_hidden[l];
    LayerWeights lw;
    lw.wq = matrix(p + "attn.wq", c.d_model, c.d_model);
    lw.wk = matrix(p + "attn.wk", c.d_model, c.d_model);
    lw.wv = matrix(p + "attn.wv", c.d_model, c.d_model);
    lw.wo = matrix(p + "attn.wo", c.d_model, c.d_model);
    lw.gate = matrix(p + "mlp.gate", dh, c.d_model);
    lw.up = matrix(p + "mlp.up", dh, c.d_model);
    lw.down = matrix(p + "mlp.down", c.d_model, dh);
    lw.attn_norm = fetch(p + "attn_norm", {c.d_model});
    lw.mlp_norm = fetch(p + "mlp_norm", {c.d_model});
    m.layers.push_back(std::move(lw));
  }
  m.final_norm = fetch("final_norm", {c.d_model});
  if (!c.tied) m.lm_head = matrix("lm_head", c.vocab_size, c.d_model);
  for (const auto& [name, e] : table) {
    if (!e.used) throw FormatError("tensor table: unexpected tensor " + name);
  }
  m.validate();
  return m;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file(path, serialize_model(model)); }

Model load_model(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_model(bytes);
}

TokenCorpus::TokenCorpus(std::uint32_t seq_len, std::vector<TokenId> ids) : seq_len_(seq_len), ids_(std::move(ids)) {
  if (seq_len_ == 0 && !ids_.empty()) throw ShapeError("token corpus: zero sequence length");
  if (seq_len_ != 0 && ids_.size() % seq_len_ != 0) throw ShapeError("token corpus: ragged sequences");
}

TokenId TokenCorpus::max_token() const {
  TokenId mx = 0;
  for (const auto t : ids_) mx = std::max(mx, t);
  return mx;
}

std::vector<char> serialize_corpus(const TokenCorpus& corpus) {
  ByteWriter w;
  w.put_bytes(kTokenMagic, 4);
  w.put<std::uint32_t>(kTokenFormatVersion);
  w.put<std::uint32_t>(corpus.seq_len());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(corpus.size()));
  w.put_bytes(corpus.ids().data(), corpus.ids().size() * sizeof(TokenId));
  return std::move(w.buffer());
}

TokenCorpus parse_corpus(std::span<const char> bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.take(magic, 4, "header magic");
  if (std::memcmp(magic, kTokenMagic, 4) != 0) throw FormatError("bad magic: not an HFTK token file");
  const auto version = r.get<std::uint32_t>("header version");
  if (version != kTokenFormatVersion) throw FormatError("unsupported token format version " + std::to_string(version));
  const auto seq_len = r.get<std::uint32_t>("header sequence length");
  const auto count = r.get<std::uint32_t>("header sequence count");
  if (seq_len == 0) throw FormatError("header sequence length is zero");
  const std::uint64_t n = std::uint64_t{seq_len} * count;
  if ((bytes.size() - r.pos()) / sizeof(TokenId) < n) throw FormatError("truncated file in token payload");
  if (bytes.size() - r.pos() != n * sizeof(TokenId)) throw FormatError("trailing bytes after token payload");
  std::vector<TokenId> ids(n);
  r.take(ids.data(), n * sizeof(TokenId), "token payload");
  return TokenCorpus(seq_len, std::move(ids));
}

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& path) {
  write_file(path, serialize_corpus(corpus));
}

TokenCorpus load_corpus(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_corpus(bytes);
}

TokenCorpus make_random_corpus(std::size_t count, std::uint32_t seq_len, std::uint32_t vocab_size,
                               std::uint64_t seed) {
  if (vocab_size == 0) throw RangeError("random corpus: vocab_size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> dist(0, vocab_size - 1);
  std::vector<TokenId> ids(count * seq_len);
  for (auto& t : ids) t = dist(rng);
  return TokenCorpus(seq_len, std::move(ids));
}

}  // namespace hfprune
