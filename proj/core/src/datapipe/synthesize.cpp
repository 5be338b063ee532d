#include <set>
#include <sstream>
#include <stdexcept>

#include "desklm/datapipe.hpp"
#include "desklm/error.hpp"
#include "desklm/io.hpp"

namespace desklm::data {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += "；";
    out += s;
  }
  return out;
}

SftRecord drug_pair(const DrugRecord& r, const char* question, std::string answer) {
  return {r.name + question, std::move(answer), "synthesized-drug", "drug:" + r.name};
}

}  // namespace

std::vector<SftRecord> synthesize_drug_qa(const DrugRecord& record) {
  record.validate();
  std::vector<SftRecord> out;
  if (!record.indications.empty())
    out.push_back(drug_pair(record, "的适应症是什么？", join(record.indications)));
  if (!record.contraindications.empty())
    out.push_back(drug_pair(record, "的禁忌症有哪些？", join(record.contraindications)));
  if (!record.adverse_reactions.empty())
    out.push_back(drug_pair(record, "有哪些不良反应？", join(record.adverse_reactions)));
  if (!record.dosage.empty()) out.push_back(drug_pair(record, "的用法用量是什么？", record.dosage));
  return out;
}

CannedGeneratorClient CannedGeneratorClient::load(const std::string& path) {
  std::vector<Entry> entries;
  for (const auto& j : read_jsonl(path)) {
    if (!j.contains("match") || !j.contains("output") || !j.at("match").is_string() ||
        !j.at("output").is_string()) {
      throw FormatError(path + ": canned entries need string \"match\" and \"output\"");
    }
    entries.push_back({j.at("match").get<std::string>(), j.at("output").get<std::string>()});
  }
  return CannedGeneratorClient(std::move(entries));
}

std::string CannedGeneratorClient::generate(const std::string& prompt) {
  for (const auto& e : entries_)
    if (prompt.find(e.match) != std::string::npos) return e.output;
  throw std::runtime_error("no canned output matches the prompt");
}

std::vector<Candidate> synthesize_with_generator(const std::vector<RawDocument>& docs,
                                                 GeneratorClient& client,
                                                 const std::string& prompt_template,
                                                 const std::string& origin, Report& report) {
  if (!is_sft_origin(origin)) throw std::invalid_argument("unknown SFT origin '" + origin + "'");
  const auto slot = prompt_template.find("{text}");
  if (slot == std::string::npos) {
    throw ConfigError("prompt_template", "must contain the {text} placeholder");
  }
  std::vector<Candidate> out;
  for (const auto& doc : docs) {
    std::string prompt = prompt_template;
    prompt.replace(slot, 6, doc.text);
    std::string reply;
    try {
      reply = client.generate(prompt);
    } catch (const std::exception& e) {
      report.add("generate", "client-failure", doc.id, e.what());
      continue;
    }
    std::vector<SftRecord> pairs;
    try {
      for (const auto& j : parse_jsonl(reply, doc.id)) {
        SftRecord r;
        r.prompt = j.at("prompt").get<std::string>();
        r.response = j.at("response").get<std::string>();
        r.origin = origin;
        r.source = doc.id;
        r.validate();
        pairs.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      report.add("generate", "unparseable-output", doc.id, e.what());
      continue;
    }
    for (auto& r : pairs) out.push_back({out.size() + 1, std::move(r)});
  }
  return out;
}

std::map<std::size_t, ReviewDecision> parse_review(std::string_view text,
                                                   const std::string& source) {
  std::map<std::size_t, ReviewDecision> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line(
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream in(line);
    std::string ordinal, decision, extra;
    if (!(in >> ordinal)) continue;
    const std::string at = source + ":" + std::to_string(line_no);
    if (!(in >> decision) || (in >> extra)) {
      throw FormatError(at + ": expected \"<ordinal> accept|reject\"");
    }
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoul(ordinal, &used);
      if (used != ordinal.size() || n == 0) throw std::invalid_argument(ordinal);
    } catch (const std::exception&) {
      throw FormatError(at + ": bad candidate ordinal \"" + ordinal + "\"");
    }
    ReviewDecision d;
    if (decision == "accept") {
      d = ReviewDecision::kAccept;
    } else if (decision == "reject") {
      d = ReviewDecision::kReject;
    } else {
      throw FormatError(at + ": decision must be accept or reject");
    }
    if (!out.emplace(n, d).second) {
      throw FormatError(at + ": candidate " + ordinal + " reviewed twice");
    }
  }
  return out;
}

std::vector<SftRecord> apply_review(const std::vector<Candidate>& candidates,
                                    const std::map<std::size_t, ReviewDecision>& review,
                                    Report& report) {
  std::vector<SftRecord> out;
  for (const auto& c : candidates) {
    const auto id = c.record.source + "#" + std::to_string(c.ordinal);
    auto it = review.find(c.ordinal);
    if (it == review.end()) {
      report.add("review", "unreviewed", id);
    } else if (it->second == ReviewDecision::kReject) {
      report.add("review", "rejected-by-review", id);
    } else {
      out.push_back(c.record);
    }
  }
  return out;
}

std::vector<FeedbackItem> parse_feedback(std::string_view text, const std::string& source) {
  std::vector<FeedbackItem> out;
  std::size_t index = 0;
  for (const auto& j : parse_jsonl(text, source)) {
    ++index;
    const std::string at = source + " record " + std::to_string(index);
    FeedbackItem f;
    try {
      f.prompt = j.at("prompt").get<std::string>();
      f.response = j.at("response").get<std::string>();
      const auto label = j.at("label").get<std::string>();
      if (label == "acceptable") {
        f.acceptable = true;
      } else if (label != "unacceptable") {
        throw FormatError("label must be acceptable or unacceptable, got \"" + label + "\"");
      }
    } catch (const std::exception& e) {
      throw FormatError(at + ": " + e.what());
    }
    if (f.prompt.empty() || f.response.empty()) throw FormatError(at + ": empty text");
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<DpoTriple> build_dpo_dataset(const std::vector<FeedbackItem>& feedback,
                                         Report& report) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> groups;
  for (const auto& f : feedback) {
    auto [it, inserted] = groups.try_emplace(f.prompt);
    if (inserted) order.push_back(f.prompt);
    (f.acceptable ? it->second.first : it->second.second).push_back(f.response);
  }
  std::vector<DpoTriple> out;
  for (const auto& prompt : order) {
    const auto& [good, bad] = groups.at(prompt);
    if (good.empty() || bad.empty()) {
      report.add("dpo", good.empty() ? "no-acceptable-response" : "no-unacceptable-response",
                 prompt, {{"acceptable", good.size()}, {"unacceptable", bad.size()}});
      continue;
    }
    for (const auto& c : good) {
      for (const auto& r : bad) {
        if (c == r) {
          report.add("dpo", "identical-responses", prompt);
          continue;
        }
        out.push_back({prompt, c, r});
      }
    }
  }
  return out;
}

}  // namespace desklm::data
