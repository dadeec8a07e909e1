#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "tristream/tensor.hpp"

namespace tristream {

/// Ordered collection of named trainable tensors.
///
/// Insertion order is the canonical order used by checkpoints, optimizers
/// and gradient reports.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  /// Adds a parameter; throws ConfigError on a duplicate name.
  Tensor& add(std::string name, Tensor value);

  bool contains(const std::string& name) const { return index_.contains(name); }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Total number of scalars.
  std::size_t scalar_count() const noexcept;
  std::vector<std::string> names() const;

  /// Names starting with `prefix`.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) noexcept;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tristream
