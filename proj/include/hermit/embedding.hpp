#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hermit/common.hpp"
#include "hermit/tensor.hpp"

namespace hermit {

enum class EmbeddingMode { precomputed, trainable, fixed_random };

inline std::string to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::precomputed: return "precomputed";
    case EmbeddingMode::trainable: return "trainable";
    case EmbeddingMode::fixed_random: return "fixed-random";
  }
  return "?";
}

inline EmbeddingMode embedding_mode_from_string(const std::string& s) {
  if (s == "precomputed") return EmbeddingMode::precomputed;
  if (s == "trainable") return EmbeddingMode::trainable;
  if (s == "fixed-random" || s == "fixed_random") return EmbeddingMode::fixed_random;
  throw DataError("unknown embedding mode: " + s);
}

constexpr const char* kUnknownToken = "<unk>";

// Sits where a pretrained contextual encoder would: every token of every
// sentence maps to exactly one vector of the declared dimension.
//  - precomputed: per-sentence matrices loaded from an embedding file,
//    keyed by sentence id.
//  - trainable: a lookup table over a fixed vocabulary, updated by training;
//    out-of-vocabulary tokens share the designated unknown row.
//  - fixed-random: a pure function of (token string, seed); no state.
class EmbeddingProvider {
 public:
  EmbeddingProvider() = default;

  static EmbeddingProvider make_precomputed(std::size_t dim) {
    EmbeddingProvider p;
    p.mode_ = EmbeddingMode::precomputed;
    p.dim_ = dim;
    return p;
  }

  static EmbeddingProvider make_trainable(std::vector<std::string> vocab,
                                          std::size_t dim, std::uint64_t seed) {
    EmbeddingProvider p;
    p.mode_ = EmbeddingMode::trainable;
    p.dim_ = dim;
    bool has_unk = false;
    for (const auto& tok : vocab) has_unk = has_unk || tok == kUnknownToken;
    if (!has_unk) vocab.insert(vocab.begin(), kUnknownToken);
    p.vocab_ = std::move(vocab);
    for (std::size_t i = 0; i < p.vocab_.size(); ++i) {
      check_data(p.index_.emplace(p.vocab_[i], i).second,
                 "duplicate token in embedding vocabulary: " + p.vocab_[i]);
    }
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<double> data(p.vocab_.size() * dim);
    for (double& v : data) v = uniform(rng, -bound, bound);
    p.table_ = Parameter("embedding.table",
                         Tensor({p.vocab_.size(), dim}, std::move(data)));
    return p;
  }

  static EmbeddingProvider make_fixed_random(std::size_t dim,
                                             std::uint64_t seed) {
    EmbeddingProvider p;
    p.mode_ = EmbeddingMode::fixed_random;
    p.dim_ = dim;
    p.seed_ = seed;
    return p;
  }

  EmbeddingMode mode() const { return mode_; }
  std::size_t dimension() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  Parameter* table_parameter() {
    return mode_ == EmbeddingMode::trainable ? &table_ : nullptr;
  }
  const Tensor& table() const { return table_.tensor; }

  // One row per token. Precomputed mode requires the sentence id to be
  // present with a matching token count.
  Tensor embed(Tape* tape, const std::vector<std::string>& tokens,
               const std::string& sentence_id = "") const {
    check(!tokens.empty(), "embed on an empty sentence");
    switch (mode_) {
      case EmbeddingMode::precomputed: {
        auto it = precomputed_.find(sentence_id);
        check_data(it != precomputed_.end(),
                   "no precomputed embedding for sentence id '" + sentence_id +
                       "'");
        check_data(it->second.rows() == tokens.size(),
                   str_cat("precomputed embedding for '", sentence_id, "' has ",
                           it->second.rows(), " rows, sentence has ",
                           tokens.size(), " tokens"));
        return it->second;
      }
      case EmbeddingMode::trainable: {
        std::vector<std::size_t> ids;
        ids.reserve(tokens.size());
        for (const auto& tok : tokens) {
          auto it = index_.find(tok);
          ids.push_back(it == index_.end() ? unknown_index() : it->second);
        }
        return ops::embedding_rows(tape, table_.tensor, ids);
      }
      case EmbeddingMode::fixed_random: {
        Tensor out = Tensor::zeros({tokens.size(), dim_});
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          std::mt19937_64 rng(fnv1a64(tokens[t]) ^ seed_);
          for (std::size_t c = 0; c < dim_; ++c)
            out.at(t * dim_ + c) = uniform(rng, -1.0, 1.0);
        }
        return out;
      }
    }
    throw std::logic_error("unreachable embedding mode");
  }

  std::size_t unknown_index() const {
    auto it = index_.find(kUnknownToken);
    check(it != index_.end(), "trainable vocabulary lost its unknown token");
    return it->second;
  }

  void add_precomputed(const std::string& id, Tensor matrix) {
    check_data(matrix.rank() == 2 && matrix.cols() == dim_,
               str_cat("embedding matrix for '", id, "' has width ",
                       matrix.rank() == 2 ? matrix.cols() : 0, ", expected ",
                       dim_));
    precomputed_[id] = std::move(matrix);
  }
  std::size_t precomputed_count() const { return precomputed_.size(); }

  void load_embedding_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check_data(in.good(), "cannot open embedding file: " + path);
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    in.seekg(0);
    if (in.gcount() == 4 && std::string(magic, 4) == "HEMB") {
      load_binary_embeddings(in, path);
    } else {
      in.clear();
      load_text_embeddings(in, path);
    }
  }

 private:
  void load_binary_embeddings(std::istream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    const std::uint32_t version = binio::read_u32(in);
    check_data(version == 1, str_cat("unsupported HEMB version ", version,
                                     " in ", path));
    const std::uint32_t dim = binio::read_u32(in);
    check_data(dim == dim_, str_cat("embedding file ", path, " has dimension ",
                                    dim, ", provider expects ", dim_));
    while (true) {
      in.peek();
      if (in.eof()) break;
      const std::string id = binio::read_string(in);
      const std::uint32_t t_len = binio::read_u32(in);
      check_data(t_len > 0, "zero-length embedding record in " + path);
      std::vector<double> data(static_cast<std::size_t>(t_len) * dim);
      for (double& v : data) v = static_cast<double>(binio::read_f32(in));
      add_precomputed(id, Tensor({t_len, dim}, std::move(data)));
    }
  }

  // Text variant: per record an "id T D" header line, then T rows of D
  // whitespace-separated values.
  void load_text_embeddings(std::istream& in, const std::string& path) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream header(line);
      std::string id;
      std::size_t t_len = 0, dim = 0;
      check_data(static_cast<bool>(header >> id >> t_len >> dim),
                 str_cat(path, ":", line_no, ": expected 'id T D' header"));
      check_data(dim == dim_, str_cat(path, ":", line_no, ": dimension ", dim,
                                      " does not match provider dimension ",
                                      dim_));
      std::vector<double> data;
      data.reserve(t_len * dim);
      for (std::size_t r = 0; r < t_len; ++r) {
        check_data(static_cast<bool>(std::getline(in, line)),
                   str_cat(path, ": unexpected end of file inside record '",
                           id, "'"));
        ++line_no;
        std::istringstream row(line);
        double v;
        std::size_t got = 0;
        while (row >> v) {
          data.push_back(v);
          ++got;
        }
        check_data(got == dim, str_cat(path, ":", line_no, ": expected ", dim,
                                       " values, got ", got));
      }
      add_precomputed(id, Tensor({t_len, dim}, std::move(data)));
    }
  }

  EmbeddingMode mode_ = EmbeddingMode::fixed_random;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  Parameter table_;
  std::map<std::string, Tensor> precomputed_;
};

// Writes precomputed sentence embeddings in the binary HEMB layout:
// magic "HEMB", format version, dimension, then (id, token count, T x D
// 32-bit floats) records. Little-endian throughout.
inline void write_embedding_record(std::ostream& os, const std::string& id,
                                   const Tensor& matrix) {
  binio::write_string(os, id);
  binio::write_u32(os, static_cast<std::uint32_t>(matrix.rows()));
  for (double v : matrix.values())
    binio::write_f32(os, static_cast<float>(v));
}

inline void write_embedding_header(std::ostream& os, std::size_t dim) {
  os.write("HEMB", 4);
  binio::write_u32(os, 1);
  binio::write_u32(os, static_cast<std::uint32_t>(dim));
}

}  // namespace hermit
