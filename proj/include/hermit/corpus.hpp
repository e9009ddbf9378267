#pragma once

#include <algorithm>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hermit/common.hpp"

namespace hermit {

// Tokens plus three parallel IOB2 tag rows: dialogue acts, frames, frame
// arguments.
struct AnnotatedSentence {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<std::string> da_tags;
  std::vector<std::string> fr_tags;
  std::vector<std::string> ar_tags;

  std::size_t length() const { return tokens.size(); }
};

using Corpus = std::vector<AnnotatedSentence>;

// Half-open token span with its bare label (no B-/I- prefix).
struct Chunk {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  bool operator==(const Chunk& other) const = default;
};

struct Iob2Report {
  bool valid = true;
  std::size_t index = 0;  // first offending position when invalid
  std::string message;
};

namespace detail {

// Splits an IOB2 tag into (kind, label); kind is 'O', 'B', or 'I', and '?'
// for anything malformed.
inline std::pair<char, std::string> split_tag(const std::string& tag) {
  if (tag == "O") return {'O', ""};
  if (tag.size() >= 3 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-')
    return {tag[0], tag.substr(2)};
  return {'?', ""};
}

}  // namespace detail

inline Iob2Report validate_iob2(const std::vector<std::string>& tags) {
  std::string open_label;  // label of the chunk currently open, "" if none
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [kind, label] = detail::split_tag(tags[i]);
    switch (kind) {
      case 'O': open_label.clear(); break;
      case 'B': open_label = label; break;
      case 'I':
        if (open_label != label) {
          return {false, i,
                  str_cat("I-", label, " at position ", i,
                          " does not continue an open ", label, " chunk")};
        }
        break;
      default:
        return {false, i, str_cat("malformed tag '", tags[i], "' at position ", i)};
    }
  }
  return {};
}

namespace detail {

inline std::vector<Chunk> extract_chunks_impl(const std::vector<std::string>& tags,
                                              bool lenient) {
  std::vector<Chunk> chunks;
  std::string open_label;
  std::size_t open_start = 0;
  auto close = [&](std::size_t end) {
    if (!open_label.empty()) chunks.push_back({open_start, end, open_label});
    open_label.clear();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto [kind, label] = split_tag(tags[i]);
    if (kind == '?') {
      check_data(lenient, "malformed tag '" + tags[i] + "'");
      close(i);
      continue;  // lenient: treat like O
    }
    if (kind == 'O') {
      close(i);
    } else if (kind == 'B') {
      close(i);
      open_label = label;
      open_start = i;
    } else {  // I
      if (open_label != label) {
        // dangling I-X opens a new chunk, the usual scorer leniency
        check_data(lenient, str_cat("I-", label, " at position ", i,
                                    " without an open ", label, " chunk"));
        close(i);
        open_label = label;
        open_start = i;
      }
    }
  }
  close(tags.size());
  return chunks;
}

}  // namespace detail

// Chunks of a valid IOB2 row; rejects invalid input.
inline std::vector<Chunk> extract_chunks(const std::vector<std::string>& tags) {
  return detail::extract_chunks_impl(tags, false);
}

// Chunks of a possibly invalid row (model output under the softmax ablation
// can break IOB2); a dangling I-X is read as B-X so metrics stay total.
inline std::vector<Chunk> extract_chunks_lenient(
    const std::vector<std::string>& tags) {
  return detail::extract_chunks_impl(tags, true);
}

inline std::vector<std::string> chunks_to_tags(const std::vector<Chunk>& chunks,
                                               std::size_t t_len) {
  std::vector<std::string> tags(t_len, "O");
  for (const Chunk& c : chunks) {
    check(c.start < c.end && c.end <= t_len, "chunk [", c.start, ",", c.end,
          ") out of range for length ", t_len);
    for (std::size_t i = c.start; i < c.end; ++i) {
      check(tags[i] == "O", "overlapping chunks at position ", i);
      tags[i] = (i == c.start ? "B-" : "I-") + c.label;
    }
  }
  return tags;
}

inline void validate_sentence(const AnnotatedSentence& s) {
  check_data(!s.tokens.empty(), "sentence '" + s.id + "' has no tokens");
  check_data(s.da_tags.size() == s.tokens.size() &&
                 s.fr_tags.size() == s.tokens.size() &&
                 s.ar_tags.size() == s.tokens.size(),
             "sentence '" + s.id + "' has tag rows of unequal length");
  const std::vector<std::string>* rows[] = {&s.da_tags, &s.fr_tags, &s.ar_tags};
  const char* names[] = {"DA", "FR", "AR"};
  for (int r = 0; r < 3; ++r) {
    Iob2Report report = validate_iob2(*rows[r]);
    check_data(report.valid, str_cat("sentence '", s.id, "' ", names[r],
                                     " row: ", report.message));
  }
}

// CoNLL-style 4-column format: token, DA, FR, AR tag per line, blank line
// between sentences, optional "# id: <name>" comment. A 7-column variant
// carries predicted rows in columns 5-7.
struct ParsedConll {
  Corpus gold;
  Corpus predicted;      // only filled for 7-column input
  bool has_predictions = false;
};

inline ParsedConll parse_conll_full(std::istream& in,
                                    const std::string& source = "<input>") {
  ParsedConll result;
  AnnotatedSentence gold, pred;
  std::size_t line_no = 0, auto_id = 0;
  int column_count = 0;

  auto flush = [&]() {
    if (gold.tokens.empty()) return;
    if (gold.id.empty()) gold.id = "s" + std::to_string(auto_id);
    ++auto_id;
    validate_sentence(gold);
    result.gold.push_back(gold);
    if (column_count == 7) {
      pred.id = gold.id;
      pred.tokens = gold.tokens;
      result.predicted.push_back(pred);
    }
    gold = {};
    pred = {};
  };

  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      const auto pos = line.find("id:");
      if (pos != std::string::npos) {
        std::string id = line.substr(pos + 3);
        const auto first = id.find_first_not_of(" \t");
        gold.id = first == std::string::npos ? "" : id.substr(first);
      }
      continue;
    }
    std::istringstream fields(line);
    std::vector<std::string> cols;
    std::string col;
    while (fields >> col) cols.push_back(col);
    check_data(cols.size() == 4 || cols.size() == 7,
               str_cat(source, ":", line_no, ": expected 4 or 7 columns, got ",
                       cols.size()));
    if (column_count == 0) column_count = static_cast<int>(cols.size());
    check_data(static_cast<int>(cols.size()) == column_count,
               str_cat(source, ":", line_no, ": mixed column counts (",
                       cols.size(), " vs ", column_count, ")"));
    gold.tokens.push_back(cols[0]);
    gold.da_tags.push_back(cols[1]);
    gold.fr_tags.push_back(cols[2]);
    gold.ar_tags.push_back(cols[3]);
    if (column_count == 7) {
      pred.da_tags.push_back(cols[4]);
      pred.fr_tags.push_back(cols[5]);
      pred.ar_tags.push_back(cols[6]);
    }
  }
  flush();
  result.has_predictions = column_count == 7;
  return result;
}

inline Corpus parse_conll(std::istream& in,
                          const std::string& source = "<input>") {
  ParsedConll parsed = parse_conll_full(in, source);
  check_data(!parsed.has_predictions,
             source + ": expected 4-column input, found 7 columns");
  return parsed.gold;
}

inline Corpus parse_conll(const std::string& text,
                          const std::string& source = "<input>") {
  std::istringstream in(text);
  return parse_conll(in, source);
}

inline void serialize_conll(std::ostream& os, const AnnotatedSentence& s) {
  os << "# id: " << s.id << "\n";
  for (std::size_t t = 0; t < s.tokens.size(); ++t) {
    os << s.tokens[t] << "\t" << s.da_tags[t] << "\t" << s.fr_tags[t] << "\t"
       << s.ar_tags[t] << "\n";
  }
  os << "\n";
}

inline std::string serialize_conll(const Corpus& corpus) {
  std::ostringstream os;
  for (const auto& s : corpus) serialize_conll(os, s);
  return os.str();
}

// One NLU-BM-style record: utterance-level scenario and action plus
// token-index entity spans (end exclusive).
struct NlubmRecord {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::string scenario;
  std::string action;
  struct Entity {
    std::string label;
    std::size_t start = 0;
    std::size_t end = 0;
  };
  std::vector<Entity> entities;
};

inline bool is_punctuation_token(const std::string& tok) {
  return tok.size() == 1 && std::string(".?!,;:").find(tok[0]) != std::string::npos;
}

// Scenario becomes the DA row, action the FR row, entities the AR row. The
// scenario/action chunks span the whole utterance; with strip_final_punct a
// trailing punctuation token is left outside both.
inline AnnotatedSentence convert_nlubm(const NlubmRecord& record,
                                       bool strip_final_punct = false) {
  check_data(!record.tokens.empty(),
             "record '" + record.id + "' has no tokens");
  check_data(!record.scenario.empty() && !record.action.empty(),
             "record '" + record.id + "' is missing scenario or action");
  const std::size_t t_len = record.tokens.size();

  std::size_t span_end = t_len;
  if (strip_final_punct && t_len > 1 &&
      is_punctuation_token(record.tokens.back()))
    span_end = t_len - 1;

  AnnotatedSentence s;
  s.id = record.id;
  s.tokens = record.tokens;
  s.da_tags = chunks_to_tags({{0, span_end, record.scenario}}, t_len);
  s.fr_tags = chunks_to_tags({{0, span_end, record.action}}, t_len);

  std::vector<Chunk> entity_chunks;
  for (const auto& e : record.entities) {
    check_data(e.start < e.end && e.end <= t_len,
               str_cat("record '", record.id, "': entity span [", e.start, ",",
                       e.end, ") out of bounds for ", t_len, " tokens"));
    entity_chunks.push_back({e.start, e.end, e.label});
  }
  std::sort(entity_chunks.begin(), entity_chunks.end(),
            [](const Chunk& a, const Chunk& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < entity_chunks.size(); ++i) {
    check_data(entity_chunks[i - 1].end <= entity_chunks[i].start,
               "record '" + record.id + "': overlapping entity spans");
  }
  s.ar_tags = chunks_to_tags(entity_chunks, t_len);
  validate_sentence(s);
  return s;
}

// Ordered tag set with an index map; "O" is always present.
class LabelVocabulary {
 public:
  LabelVocabulary() { add("O"); }

  static LabelVocabulary from_rows(
      const std::vector<const std::vector<std::string>*>& rows) {
    std::set<std::string> seen;
    for (const auto* row : rows) seen.insert(row->begin(), row->end());
    LabelVocabulary v;
    for (const auto& tag : seen) v.add(tag);
    return v;
  }

  static LabelVocabulary from_tags(const std::vector<std::string>& tags) {
    LabelVocabulary v;
    std::set<std::string> seen(tags.begin(), tags.end());
    for (const auto& tag : seen) v.add(tag);
    return v;
  }

  std::size_t add(const std::string& tag) {
    auto it = index_.find(tag);
    if (it != index_.end()) return it->second;
    tags_.push_back(tag);
    index_[tag] = tags_.size() - 1;
    return tags_.size() - 1;
  }

  std::size_t size() const { return tags_.size(); }
  const std::vector<std::string>& tags() const { return tags_; }
  const std::string& tag(std::size_t index) const { return tags_.at(index); }

  bool contains(const std::string& tag) const { return index_.count(tag) > 0; }
  std::size_t index_of(const std::string& tag) const {
    auto it = index_.find(tag);
    check_data(it != index_.end(), "tag '" + tag + "' not in vocabulary");
    return it->second;
  }

  bool operator==(const LabelVocabulary& other) const {
    return tags_ == other.tags_;
  }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Disjoint, jointly exhaustive sentence-index partitions of near-equal size.
// Round r tests on fold r, tunes on fold (r+1) mod k, trains on the rest.
struct FoldSplit {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> folds;

  const std::vector<std::size_t>& test_fold(std::size_t round) const {
    return folds.at(round);
  }
  const std::vector<std::size_t>& tuning_fold(std::size_t round) const {
    return folds.at((round + 1) % k);
  }
  std::vector<std::size_t> train_indices(std::size_t round) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < k; ++f) {
      if (f == round || f == (round + 1) % k) continue;
      out.insert(out.end(), folds[f].begin(), folds[f].end());
    }
    return out;
  }
};

inline FoldSplit kfold_split(std::size_t corpus_size, std::size_t k,
                             std::uint64_t seed) {
  check(k >= 2, "kfold_split needs k >= 2, got ", k);
  check_data(corpus_size >= k, str_cat("corpus of ", corpus_size,
                                       " sentences cannot be split into ", k,
                                       " folds"));
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with our own index draws, for cross-platform determinism.
  for (std::size_t i = corpus_size; i-- > 1;) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  FoldSplit split;
  split.k = k;
  split.folds.resize(k);
  for (std::size_t i = 0; i < corpus_size; ++i)
    split.folds[i % k].push_back(order[i]);
  return split;
}

inline Corpus subset(const Corpus& corpus,
                     const std::vector<std::size_t>& indices) {
  Corpus out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(corpus.at(i));
  return out;
}

// Whitespace tokenization for raw-text tagging; annotated formats carry
// their own tokens.
inline std::vector<std::string> tokenize_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> tokens;
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

}  // namespace hermit
