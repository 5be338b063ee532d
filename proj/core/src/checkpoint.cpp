#include "desklm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "desklm/error.hpp"
#include "desklm/io.hpp"

namespace desklm {

static_assert(std::endian::native == std::endian::little,
              "archive payloads are written in host byte order");

namespace {

constexpr std::string_view kMagic = "DLMARCH1";

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <class From, class T>
std::vector<T> read_values(const char* src, std::size_t count) {
  std::vector<From> raw(count);
  std::memcpy(raw.data(), src, count * sizeof(From));
  if constexpr (std::is_same_v<From, T>) {
    return raw;
  } else {
    return std::vector<T>(raw.begin(), raw.end());
  }
}

}  // namespace

template <class T>
std::string encode_archive(const TensorArchive<T>& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const std::size_t bytes = t.numel() * sizeof(T);
    header["tensors"].push_back({{"name", name},
                                 {"shape", t.shape()},
                                 {"dtype", dtype_name<T>()},
                                 {"offset", offset},
                                 {"bytes", bytes}});
    offset += bytes;
  }
  const std::string head = header.dump();
  std::string out(kMagic);
  const std::uint64_t len = head.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += head;
  out.reserve(out.size() + offset);
  for (const auto& [_, t] : archive.tensors) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(T));
  }
  return out;
}

template <class T>
TensorArchive<T> decode_archive(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("archive: bad magic");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagic.size(), sizeof(len));
  const std::size_t head_start = kMagic.size() + 8;
  if (len > bytes.size() - head_start) throw FormatError("archive: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(head_start, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("archive: bad header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(head_start + len);
  TensorArchive<T> out;
  out.meta = header.value("meta", nlohmann::json::object());
  std::size_t expected_end = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto dtype = entry.at("dtype").get<std::string>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("bytes").get<std::size_t>();
    const std::size_t width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
    if (width == 0) throw FormatError("archive: unknown dtype '" + dtype + "' for " + name);
    const std::size_t count = shape_numel(shape);
    if (count * width != nbytes || offset + nbytes > payload.size()) {
      throw FormatError("archive: inconsistent extent for tensor '" + name + "'");
    }
    std::vector<T> values = width == 4
                                ? read_values<float, T>(payload.data() + offset, count)
                                : read_values<double, T>(payload.data() + offset, count);
    out.tensors.emplace_back(name, Tensor<T>::from(shape, std::move(values)));
    expected_end = std::max(expected_end, offset + nbytes);
  }
  if (expected_end != payload.size()) throw FormatError("archive: trailing bytes");
  return out;
}

template <class T>
void save_archive(const std::string& path, const TensorArchive<T>& archive) {
  write_file_atomic(path, encode_archive(archive));
}

template <class T>
TensorArchive<T> load_archive(const std::string& path) {
  return decode_archive<T>(read_file(path));
}

template <class T>
void save_model(const std::string& path, const LanguageModel<T>& model,
                const std::string& vocab_fingerprint) {
  TensorArchive<T> archive;
  archive.meta = {{"kind", "model"},
                  {"config", model.config().to_json()},
                  {"vocab_sha256", vocab_fingerprint}};
  for (const auto& [name, t] : model.params().entries()) archive.tensors.emplace_back(name, t);
  save_archive(path, archive);
}

template <class T>
LoadedModel<T> load_model(const std::string& path) {
  auto archive = load_archive<T>(path);
  if (archive.meta.value("kind", "") != "model") {
    throw FormatError("'" + path + "' is not a model checkpoint");
  }
  ModelParams<T> params;
  for (auto& [name, t] : archive.tensors) {
    t.set_requires_grad(true);
    params.add(name, t);
  }
  const auto config = ModelConfig::from_json(archive.meta.at("config"));
  return {LanguageModel<T>(config, std::move(params)),
          archive.meta.value("vocab_sha256", "")};
}

#define DESKLM_INSTANTIATE(T)                                                    \
  template std::string encode_archive<T>(const TensorArchive<T>&);              \
  template TensorArchive<T> decode_archive<T>(std::string_view);                \
  template void save_archive<T>(const std::string&, const TensorArchive<T>&);   \
  template TensorArchive<T> load_archive<T>(const std::string&);                \
  template void save_model<T>(const std::string&, const LanguageModel<T>&,      \
                              const std::string&);                              \
  template LoadedModel<T> load_model<T>(const std::string&);

DESKLM_INSTANTIATE(float)
DESKLM_INSTANTIATE(double)
#undef DESKLM_INSTANTIATE

}  // namespace desklm
