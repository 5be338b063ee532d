#include "desklm/datapipe.hpp"
#include "desklm/error.hpp"

namespace desklm::data {

namespace {

// Replaces C0/C1 controls (other than newline) and U+3000 by spaces, then
// collapses space runs and trims.
std::string normalize_line(std::string_view line) {
  std::string spaced;
  spaced.reserve(line.size());
  for (std::size_t i = 0; i < line.size(); ++i) {
    const auto c = static_cast<unsigned char>(line[i]);
    if (c < 0x20 || c == 0x7f) {
      spaced.push_back(' ');
    } else if (c == 0xc2 && i + 1 < line.size() &&
               static_cast<unsigned char>(line[i + 1]) >= 0x80 &&
               static_cast<unsigned char>(line[i + 1]) <= 0x9f) {
      spaced.push_back(' ');
      ++i;
    } else if (c == 0xe3 && line.substr(i, 3) == "\xe3\x80\x80") {
      spaced.push_back(' ');
      i += 2;
    } else {
      spaced.push_back(static_cast<char>(c));
    }
  }
  std::string out;
  out.reserve(spaced.size());
  for (char c : spaced) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(c);
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace

Cleaner::Cleaner(const CleanConfig& config) {
  for (const auto& p : config.boilerplate_patterns) {
    try {
      boilerplate_.emplace_back(p, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw ConfigError("boilerplate_patterns", "invalid regex '" + p + "': " + e.what());
    }
  }
}

std::string Cleaner::clean_text(std::string_view text) const {
  std::string out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const auto raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    const auto line = normalize_line(raw);
    if (line.empty()) continue;
    bool boiler = false;
    for (const auto& re : boilerplate_) {
      if (std::regex_search(line, re)) {
        boiler = true;
        break;
      }
    }
    if (boiler) continue;
    if (!out.empty()) out.push_back('\n');
    out += line;
  }
  return out;
}

std::optional<RawDocument> Cleaner::clean(const RawDocument& doc) const {
  RawDocument out = doc;
  out.text = clean_text(doc.text);
  if (out.text.empty()) return std::nullopt;
  return out;
}

}  // namespace desklm::data
