#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "loopsr/numgrad/tensor.hpp"

namespace loopsr::numgrad {

// Named tensors in insertion order. Iteration order is the order of add()
// calls, which makes checkpoints and optimizer state deterministic.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  Tensor& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::size_t index) { return entries_[index].value; }
  const Tensor& at(std::size_t index) const { return entries_[index].value; }
  const std::string& name(std::size_t index) const { return entries_[index].name; }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  bool empty() const { return entries_.empty(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;

  // Copies every entry of `other` under `prefix + name`.
  void merge(const ParamSet& other, const std::string& prefix = "");
  // Subset of entries whose names start with `prefix`, with the prefix stripped.
  ParamSet extract(std::string_view prefix) const;
  // Overwrites values of matching names; shapes must agree.
  void assign_from(const ParamSet& other, std::string_view prefix = "");

  friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace loopsr::numgrad
