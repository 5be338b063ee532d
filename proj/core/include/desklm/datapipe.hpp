#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/dpo.hpp"

namespace desklm::data {

// --- records -------------------------------------------------------------------

/// Closed list of source categories for raw documents.
const std::vector<std::string>& document_categories();
bool is_document_category(std::string_view category);

struct RawDocument {
  std::string id;
  std::string category;
  std::string text;

  friend bool operator==(const RawDocument&, const RawDocument&) = default;
};

/// Reads a manifest of {"id", "category", "path"} lines; paths are relative
/// to the manifest's directory. Duplicate ids, unknown categories, and
/// missing files throw FormatError.
std::vector<RawDocument> load_corpus(const std::string& manifest_path);

struct DrugRecord {
  std::string name;
  std::vector<std::string> indications;
  std::vector<std::string> contraindications;
  std::vector<std::string> adverse_reactions;
  std::string dosage;

  /// Name non-empty and at least one content field non-empty.
  void validate() const;
};

std::vector<DrugRecord> parse_drug_records(std::string_view text,
                                           const std::string& source = "<memory>");

/// Closed list: public, synthesized-drug, synthesized-guideline,
/// synthesized-complaint, safety.
const std::vector<std::string>& sft_origins();
bool is_sft_origin(std::string_view origin);

struct SftRecord {
  std::string prompt;
  std::string response;
  std::string origin;
  /// Provenance: the id of the document, record, or input line it came from.
  std::string source;

  void validate() const;
  nlohmann::json to_json() const;
  static SftRecord from_json(const nlohmann::json& j);
  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

std::string sft_to_jsonl(const std::vector<SftRecord>& records);
std::vector<SftRecord> parse_sft_jsonl(std::string_view text,
                                       const std::string& source = "<memory>");

/// Skip/exclusion log: one JSON line per event, followed by one
/// {"reason", "count"} line per distinct reason.
class Report {
 public:
  void add(const std::string& stage, const std::string& reason, const std::string& id,
           nlohmann::json detail = nullptr);
  std::size_t count(const std::string& reason) const;
  const std::vector<nlohmann::json>& events() const noexcept { return events_; }
  std::string to_jsonl() const;

 private:
  std::vector<nlohmann::json> events_;
  std::map<std::string, std::size_t> counts_;
};

// --- cleaning ------------------------------------------------------------------

struct CleanConfig {
  /// ECMAScript regexes; a cleaned line matching any of them is removed.
  std::vector<std::string> boilerplate_patterns;
};

/// Control characters become spaces, whitespace runs collapse to one space,
/// lines are trimmed, and empty or boilerplate lines are removed.
class Cleaner {
 public:
  explicit Cleaner(const CleanConfig& config = {});
  std::string clean_text(std::string_view text) const;
  /// nullopt (reason "empty-after-clean") when nothing survives.
  std::optional<RawDocument> clean(const RawDocument& doc) const;

 private:
  std::vector<std::regex> boilerplate_;
};

// --- deduplication -------------------------------------------------------------

struct DedupConfig {
  std::size_t shingle_size = 5;  // code points
  double threshold = 0.9;
  int permutations = 128;
  int bands = 32;
  std::uint64_t seed = 0x5eed;

  void validate() const;
};

/// Distinct character n-grams of `text`, sorted. Texts shorter than n yield
/// the whole text as a single shingle.
std::vector<std::string> shingles(std::string_view text, std::size_t n);
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct DedupRemoval {
  std::string id;
  std::string duplicate_of;
  std::string reason;  // "exact-duplicate" or "near-duplicate"
  double jaccard = 1.0;
};

struct DedupResult {
  std::vector<RawDocument> kept;
  std::vector<DedupRemoval> removed;
};

/// Removes exact duplicates by content hash, then near duplicates whose
/// shingle Jaccard against an already kept document reaches the threshold.
/// MinHash banding proposes candidates; every removal is verified exactly.
/// The first occurrence always survives.
DedupResult dedup(const std::vector<RawDocument>& docs, const DedupConfig& config = {});

// --- privacy -------------------------------------------------------------------

struct PiiRule {
  std::string name;
  std::string pattern;  // ECMAScript regex
  std::string placeholder;
  /// Reject matches that touch another ASCII digit on either side.
  bool digit_bounded = false;
};

struct PiiConfig {
  std::vector<PiiRule> rules;
  /// National-ID, mobile and landline phone, and email rules, applied in
  /// that order.
  static PiiConfig defaults();
  static PiiConfig from_json(const nlohmann::json& j);
};

class PiiScrubber {
 public:
  explicit PiiScrubber(PiiConfig config = PiiConfig::defaults());
  std::string scrub(std::string_view text) const;

 private:
  struct Compiled {
    PiiRule rule;
    std::regex re;
  };
  std::vector<Compiled> rules_;
};

std::string scrub_pii(std::string_view text);

// --- synthesis -----------------------------------------------------------------

/// One QA pair per non-empty field, from fixed templates.
std::vector<SftRecord> synthesize_drug_qa(const DrugRecord& record);

class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string generate(const std::string& prompt) = 0;
};

/// Serves canned outputs: the first entry whose `match` text occurs in the
/// prompt wins. A prompt with no entry throws std::runtime_error.
class CannedGeneratorClient final : public GeneratorClient {
 public:
  struct Entry {
    std::string match;
    std::string output;
  };
  explicit CannedGeneratorClient(std::vector<Entry> entries) : entries_(std::move(entries)) {}
  /// JSON lines of {"match", "output"}.
  static CannedGeneratorClient load(const std::string& path);
  std::string generate(const std::string& prompt) override;

 private:
  std::vector<Entry> entries_;
};

struct Candidate {
  std::size_t ordinal = 0;  // 1-based, in generation order
  SftRecord record;
};

/// Builds one prompt per document from `prompt_template` ("{text}" is
/// replaced by the document text), asks the client, and parses its output as
/// JSON lines of {"prompt", "response"}. A failing call or unparseable output
/// skips the document and is logged in `report`.
std::vector<Candidate> synthesize_with_generator(const std::vector<RawDocument>& docs,
                                                 GeneratorClient& client,
                                                 const std::string& prompt_template,
                                                 const std::string& origin, Report& report);

enum class ReviewDecision {
  kAccept,
  kReject,
};

/// Lines "<ordinal> accept|reject"; '#' starts a comment.
std::map<std::size_t, ReviewDecision> parse_review(std::string_view text,
                                                   const std::string& source = "<memory>");

/// Accepted candidates in order. Rejected and unlisted ones are reported.
std::vector<SftRecord> apply_review(const std::vector<Candidate>& candidates,
                                    const std::map<std::size_t, ReviewDecision>& review,
                                    Report& report);

// --- preference data -----------------------------------------------------------

struct FeedbackItem {
  std::string prompt;
  std::string response;
  bool acceptable = false;
};

/// {"prompt", "response", "label": "acceptable" | "unacceptable"} lines.
std::vector<FeedbackItem> parse_feedback(std::string_view text,
                                         const std::string& source = "<memory>");

/// Cross product of acceptable x unacceptable responses per prompt, prompts in
/// first-seen order. Prompts lacking either side are reported and skipped.
std::vector<DpoTriple> build_dpo_dataset(const std::vector<FeedbackItem>& feedback,
                                         Report& report);

}  // namespace desklm::data
