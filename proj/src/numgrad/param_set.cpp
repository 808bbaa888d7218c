#include "loopsr/numgrad/param_set.hpp"

#include "loopsr/common/error.hpp"

namespace loopsr::numgrad {

Tensor& ParamSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
  return entries_.back().value;
}

bool ParamSet::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::optional<std::size_t> ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Tensor& ParamSet::at(std::string_view name) {
  auto idx = index_of(name);
  if (!idx) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[*idx].value;
}

const Tensor& ParamSet::at(std::string_view name) const {
  auto idx = index_of(name);
  if (!idx) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return entries_[*idx].value;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& e : entries_) out.add(e.name, Tensor(e.value.shape(), 0.0));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].value.same_shape(other.entries_[i].value)) return false;
  }
  return true;
}

void ParamSet::merge(const ParamSet& other, const std::string& prefix) {
  for (const auto& e : other) add(prefix + e.name, e.value);
}

ParamSet ParamSet::extract(std::string_view prefix) const {
  ParamSet out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) out.add(e.name.substr(prefix.size()), e.value);
  }
  return out;
}

void ParamSet::assign_from(const ParamSet& other, std::string_view prefix) {
  for (const auto& e : other) {
    Tensor& dst = at(std::string(prefix) + e.name);
    if (!dst.same_shape(e.value)) {
      throw DimensionError("shape mismatch for '" + e.name + "': " + dst.shape_string() +
                           " vs " + e.value.shape_string());
    }
    dst = e.value;
  }
}

}  // namespace loopsr::numgrad
