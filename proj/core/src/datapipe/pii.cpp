#include "desklm/datapipe.hpp"
#include "desklm/error.hpp"

namespace desklm::data {

PiiConfig PiiConfig::defaults() {
  PiiConfig c;
  c.rules = {
      {"national-id", R"(\d{17}[0-9Xx])", "[ID]", true},
      {"mobile", R"(1[3-9]\d{9})", "[PHONE]", true},
      {"landline", R"(0\d{2,3}-\d{7,8})", "[PHONE]", true},
      {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})", "[EMAIL]",
       false},
  };
  return c;
}

PiiConfig PiiConfig::from_json(const nlohmann::json& j) {
  PiiConfig c;
  if (!j.contains("rules") || !j.at("rules").is_array()) {
    throw ConfigError("pii.rules", "expected an array of rules");
  }
  for (const auto& r : j.at("rules")) {
    PiiRule rule;
    try {
      rule.name = r.at("name").get<std::string>();
      rule.pattern = r.at("pattern").get<std::string>();
      rule.placeholder = r.at("placeholder").get<std::string>();
      rule.digit_bounded = r.value("digit_bounded", false);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("pii.rules", e.what());
    }
    c.rules.push_back(std::move(rule));
  }
  return c;
}

PiiScrubber::PiiScrubber(PiiConfig config) {
  for (auto& rule : config.rules) {
    try {
      std::regex re(rule.pattern, std::regex::ECMAScript);
      rules_.push_back({std::move(rule), std::move(re)});
    } catch (const std::regex_error& e) {
      throw ConfigError("pii.rules", "invalid regex for '" + rule.name + "': " + e.what());
    }
  }
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string apply_rule(const std::string& s, const std::regex& re, const PiiRule& rule) {
  std::string out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::smatch m;
    const auto flags = pos > 0 ? std::regex_constants::match_prev_avail
                               : std::regex_constants::match_default;
    if (!std::regex_search(s.cbegin() + static_cast<std::ptrdiff_t>(pos), s.cend(), m, re, flags)) {
      break;
    }
    const std::size_t start = pos + static_cast<std::size_t>(m.position(0));
    const std::size_t len = static_cast<std::size_t>(m.length(0));
    out.append(s, pos, start - pos);
    const bool bounded_ok = !rule.digit_bounded ||
                            ((start == 0 || !is_digit(s[start - 1])) &&
                             (start + len == s.size() || !is_digit(s[start + len])));
    if (len > 0 && bounded_ok) {
      out += rule.placeholder;
      pos = start + len;
    } else {
      if (start < s.size()) out.push_back(s[start]);
      pos = start + 1;
    }
  }
  if (pos < s.size()) out.append(s, pos, std::string::npos);
  return out;
}

}  // namespace

std::string PiiScrubber::scrub(std::string_view text) const {
  std::string s(text);
  for (const auto& c : rules_) s = apply_rule(s, c.re, c.rule);
  return s;
}

std::string scrub_pii(std::string_view text) {
  static const PiiScrubber scrubber;
  return scrubber.scrub(text);
}

}  // namespace desklm::data
