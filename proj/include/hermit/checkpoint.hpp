#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "hermit/common.hpp"
#include "hermit/model.hpp"

namespace hermit {

inline constexpr char kCheckpointMagic[4] = {'H', 'M', 'T', '1'};

namespace detail {

inline void write_vocab(std::ostream& os, const LabelVocabulary& v) {
  binio::write_u64(os, v.size());
  for (const auto& tag : v.tags()) binio::write_string(os, tag);
}

inline LabelVocabulary read_vocab(std::istream& is) {
  const std::uint64_t n = binio::read_u64(is);
  LabelVocabulary v;
  for (std::uint64_t i = 0; i < n; ++i) v.add(binio::read_string(is));
  check_data(v.size() == n, "checkpoint vocabulary has duplicate tags");
  return v;
}

}  // namespace detail

// Model weights and the configuration needed to rebuild the network around
// them. Precomputed embedding matrices are input data, not weights, and are
// not stored.
inline void save_checkpoint(std::ostream& os, const HermitModel& m) {
  os.write(kCheckpointMagic, 4);
  binio::write_u32(os, 1);

  const HermitConfig& c = m.config();
  binio::write_string(os, to_string(c.embedding_mode));
  binio::write_u64(os, c.embedding_dim);
  binio::write_u64(os, c.hidden_dim);
  binio::write_u64(os, c.attn_dim);
  os.put(c.use_self_attention ? 1 : 0);
  os.put(c.use_shortcuts ? 1 : 0);
  os.put(c.use_crf ? 1 : 0);
  binio::write_u64(os, c.seed);

  detail::write_vocab(os, m.da_labels());
  detail::write_vocab(os, m.fr_labels());
  detail::write_vocab(os, m.ar_labels());

  const auto& tokens = m.embeddings().vocabulary();
  binio::write_u64(os, tokens.size());
  for (const auto& tok : tokens) binio::write_string(os, tok);

  binio::write_u64(os, m.parameters().size());
  for (const auto& p : m.parameters()) {
    binio::write_string(os, p.name);
    binio::write_u32(os, static_cast<std::uint32_t>(p.tensor.shape().size()));
    for (std::size_t d : p.tensor.shape()) binio::write_u64(os, d);
    for (double v : p.tensor.values()) binio::write_f64(os, v);
  }
  check_data(os.good(), "checkpoint write failed");
}

inline void save_checkpoint(const std::string& path, const HermitModel& m) {
  std::ofstream os(path, std::ios::binary);
  check_data(os.is_open(), "cannot open checkpoint file for writing: " + path);
  save_checkpoint(os, m);
}

inline HermitModel load_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  check_data(is.gcount() == 4 && std::equal(magic, magic + 4, kCheckpointMagic),
             "not a model checkpoint (bad magic)");
  const std::uint32_t version = binio::read_u32(is);
  check_data(version == 1,
             str_cat("unsupported checkpoint version ", version));

  HermitConfig c;
  c.embedding_mode = embedding_mode_from_string(binio::read_string(is));
  c.embedding_dim = binio::read_u64(is);
  c.hidden_dim = binio::read_u64(is);
  c.attn_dim = binio::read_u64(is);
  c.use_self_attention = is.get() != 0;
  c.use_shortcuts = is.get() != 0;
  c.use_crf = is.get() != 0;
  c.seed = binio::read_u64(is);

  LabelVocabulary da = detail::read_vocab(is);
  LabelVocabulary fr = detail::read_vocab(is);
  LabelVocabulary ar = detail::read_vocab(is);

  const std::uint64_t n_tokens = binio::read_u64(is);
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::uint64_t i = 0; i < n_tokens; ++i)
    tokens.push_back(binio::read_string(is));

  HermitModel m = HermitModel::build(c, std::move(da), std::move(fr),
                                     std::move(ar), tokens);

  const std::uint64_t n_params = binio::read_u64(is);
  check_data(n_params == m.parameters().size(),
             str_cat("checkpoint holds ", n_params, " parameters, model has ",
                     m.parameters().size()));
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = binio::read_string(is);
    Parameter& p = m.parameter(name);
    const std::uint32_t rank = binio::read_u32(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(binio::read_u64(is));
    check_data(shape == p.tensor.shape(),
               "checkpoint parameter '" + name + "' has the wrong shape");
    for (double& v : p.tensor.values()) v = binio::read_f64(is);
  }
  check_data(is.good() || is.eof(), "checkpoint read failed");
  return m;
}

inline HermitModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_data(is.is_open(), "cannot open checkpoint file: " + path);
  return load_checkpoint(is);
}

}  // namespace hermit
