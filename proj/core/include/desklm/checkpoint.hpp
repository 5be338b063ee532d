#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "desklm/model.hpp"
#include "desklm/tensor.hpp"

namespace desklm {

/// Self-describing tensor container.
///
/// Layout: the 8-byte magic "DLMARCH1", a little-endian u64 header length,
/// a compact JSON header, then the raw little-endian tensor payloads in
/// header order. The header carries caller metadata plus, per tensor, its
/// name, shape, dtype ("f32" or "f64"), and byte offset into the payload.
template <class T>
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<T>>> tensors;
};

template <class T>
std::string encode_archive(const TensorArchive<T>& archive);
/// Decodes any dtype into T. Throws FormatError on a malformed buffer.
template <class T>
TensorArchive<T> decode_archive(std::string_view bytes);

template <class T>
void save_archive(const std::string& path, const TensorArchive<T>& archive);
template <class T>
TensorArchive<T> load_archive(const std::string& path);

/// Model checkpoint: config, named parameters, and the fingerprint of the
/// tokenizer vocabulary the model was trained with.
template <class T>
void save_model(const std::string& path, const LanguageModel<T>& model,
                const std::string& vocab_fingerprint);

template <class T>
struct LoadedModel {
  LanguageModel<T> model;
  std::string vocab_fingerprint;
};

template <class T>
LoadedModel<T> load_model(const std::string& path);

}  // namespace desklm
