#pragma once

#include <istream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hermit/common.hpp"
#include "hermit/corpus.hpp"

namespace hermit {

// One JSON object per line:
//   {"id": "...", "text": "...", "tokens": [...], "scenario": "...",
//    "action": "...", "entities": [{"type": "...", "start": 0, "end": 2}]}
// "tokens" defaults to whitespace-split "text"; "id" defaults to the line
// number; "label" is accepted for an entity's "type".
inline NlubmRecord parse_nlubm_json(const std::string& line,
                                    const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(where + ": " + e.what());
  }
  try {
    check_data(j.is_object(), where + ": record is not a JSON object");
    NlubmRecord r;
    r.id = j.value("id", "");
    r.text = j.value("text", "");
    if (j.contains("tokens")) {
      for (const auto& t : j.at("tokens")) r.tokens.push_back(t.get<std::string>());
    } else {
      r.tokens = tokenize_whitespace(r.text);
    }
    r.scenario = j.value("scenario", "");
    r.action = j.value("action", "");
    for (const auto& e : j.value("entities", nlohmann::json::array())) {
      NlubmRecord::Entity ent;
      ent.label = e.contains("type") ? e.at("type").get<std::string>()
                                     : e.at("label").get<std::string>();
      ent.start = e.at("start").get<std::size_t>();
      ent.end = e.at("end").get<std::size_t>();
      r.entities.push_back(ent);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
}

inline std::vector<NlubmRecord> parse_nlubm_jsonl(
    std::istream& in, const std::string& source = "<input>") {
  std::vector<NlubmRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    NlubmRecord r =
        parse_nlubm_json(line, str_cat(source, ":", line_no));
    if (r.id.empty()) r.id = "r" + std::to_string(line_no);
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace hermit
