#include <algorithm>
#include <filesystem>
#include <set>

#include "desklm/datapipe.hpp"
#include "desklm/error.hpp"
#include "desklm/io.hpp"

namespace desklm::data {

namespace {

std::string where(const std::string& source, std::size_t index) {
  return source + ":" + std::to_string(index);
}

// JSON lines paired with their 1-based physical line numbers.
std::vector<std::pair<std::size_t, nlohmann::json>> numbered_jsonl(std::string_view text,
                                                                    const std::string& source) {
  std::vector<std::pair<std::size_t, nlohmann::json>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const auto line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.emplace_back(line_no, nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where(source, line_no) + ": invalid JSON: " + e.what());
    }
    if (!out.back().second.is_object()) {
      throw FormatError(where(source, line_no) + ": expected a JSON object");
    }
  }
  return out;
}

std::string string_field(const nlohmann::json& j, const char* key, const std::string& at) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw FormatError(at + ": \"" + key + "\" must be a string");
  }
  return j.at(key).get<std::string>();
}

std::vector<std::string> list_field(const nlohmann::json& j, const char* key,
                                    const std::string& at) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  const auto& v = j.at(key);
  if (v.is_string()) {
    out.push_back(v.get<std::string>());
    return out;
  }
  if (!v.is_array()) throw FormatError(at + ": \"" + key + "\" must be a list of strings");
  for (const auto& e : v) {
    if (!e.is_string()) throw FormatError(at + ": \"" + key + "\" must be a list of strings");
    if (!e.get<std::string>().empty()) out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

const std::vector<std::string>& document_categories() {
  static const std::vector<std::string> kCategories = {
      "textbook", "exam-bank",    "expert-consensus", "case-report", "guideline",
      "protocol", "encyclopedia", "lecture",          "monograph",   "academic-paper"};
  return kCategories;
}

bool is_document_category(std::string_view category) {
  const auto& c = document_categories();
  return std::find(c.begin(), c.end(), category) != c.end();
}

std::vector<RawDocument> load_corpus(const std::string& manifest_path) {
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<RawDocument> docs;
  std::set<std::string> seen;
  for (const auto& [line, j] : numbered_jsonl(read_file(manifest_path), manifest_path)) {
    const auto at = where(manifest_path, line);
    RawDocument d;
    d.id = string_field(j, "id", at);
    d.category = string_field(j, "category", at);
    const auto rel = string_field(j, "path", at);
    if (d.id.empty()) throw FormatError(at + ": empty id");
    if (!seen.insert(d.id).second) throw FormatError(at + ": duplicate id \"" + d.id + "\"");
    if (!is_document_category(d.category)) {
      throw FormatError(at + ": unknown category \"" + d.category + "\"");
    }
    const auto path = (base / rel).string();
    if (!std::filesystem::is_regular_file(path)) {
      throw FormatError(at + ": document file not found: " + path);
    }
    d.text = read_file(path);
    docs.push_back(std::move(d));
  }
  return docs;
}

void DrugRecord::validate() const {
  if (name.empty()) throw std::invalid_argument("drug record has an empty name");
  if (indications.empty() && contraindications.empty() && adverse_reactions.empty() &&
      dosage.empty()) {
    throw std::invalid_argument("drug record '" + name + "' has no content fields");
  }
}

std::vector<DrugRecord> parse_drug_records(std::string_view text, const std::string& source) {
  std::vector<DrugRecord> out;
  for (const auto& [line, j] : numbered_jsonl(text, source)) {
    const auto at = where(source, line);
    DrugRecord r;
    r.name = string_field(j, "name", at);
    r.indications = list_field(j, "indications", at);
    r.contraindications = list_field(j, "contraindications", at);
    r.adverse_reactions = list_field(j, "adverse_reactions", at);
    if (j.contains("dosage")) r.dosage = string_field(j, "dosage", at);
    try {
      r.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError(at + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

const std::vector<std::string>& sft_origins() {
  static const std::vector<std::string> kOrigins = {
      "public", "synthesized-drug", "synthesized-guideline", "synthesized-complaint", "safety"};
  return kOrigins;
}

bool is_sft_origin(std::string_view origin) {
  const auto& o = sft_origins();
  return std::find(o.begin(), o.end(), origin) != o.end();
}

void SftRecord::validate() const {
  if (prompt.empty() || response.empty()) {
    throw std::invalid_argument("SFT record needs a non-empty prompt and response");
  }
  if (!is_sft_origin(origin)) throw std::invalid_argument("unknown SFT origin '" + origin + "'");
}

nlohmann::json SftRecord::to_json() const {
  nlohmann::json j;
  j["prompt"] = prompt;
  j["response"] = response;
  j["origin"] = origin;
  j["source"] = source;
  return j;
}

SftRecord SftRecord::from_json(const nlohmann::json& j) {
  SftRecord r;
  r.prompt = string_field(j, "prompt", "SFT record");
  r.response = string_field(j, "response", "SFT record");
  r.origin = string_field(j, "origin", "SFT record");
  if (j.contains("source")) r.source = string_field(j, "source", "SFT record");
  return r;
}

std::string sft_to_jsonl(const std::vector<SftRecord>& records) {
  std::vector<nlohmann::json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(r.to_json());
  return to_jsonl(rows);
}

std::vector<SftRecord> parse_sft_jsonl(std::string_view text, const std::string& source) {
  std::vector<SftRecord> out;
  for (const auto& [line, j] : numbered_jsonl(text, source)) {
    const auto at = where(source, line);
    try {
      auto r = SftRecord::from_json(j);
      r.validate();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(at + ": " + e.what());
    }
  }
  return out;
}

void Report::add(const std::string& stage, const std::string& reason, const std::string& id,
                 nlohmann::json detail) {
  nlohmann::json j;
  j["stage"] = stage;
  j["reason"] = reason;
  j["id"] = id;
  if (!detail.is_null()) {
    // Parser messages quote raw input and may cut a code point in half.
    j["detail"] = nlohmann::json::parse(
        detail.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace));
  }
  events_.push_back(std::move(j));
  ++counts_[reason];
}

std::size_t Report::count(const std::string& reason) const {
  auto it = counts_.find(reason);
  return it == counts_.end() ? 0 : it->second;
}

std::string Report::to_jsonl() const {
  auto rows = events_;
  for (const auto& [reason, n] : counts_) rows.push_back({{"reason", reason}, {"count", n}});
  return desklm::to_jsonl(rows);
}

}  // namespace desklm::data
