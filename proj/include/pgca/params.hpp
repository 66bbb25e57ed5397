#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pgca/tensor.hpp"

namespace pgca {

/// Named parameter tensors in registration order.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(std::string name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(t));
    return entries_.back().second;
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  const Tensor& get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return entries_[it->second].second;
  }
  Tensor& get(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [n, _] : entries_) out.push_back(n);
    return out;
  }

  /// Deep copy; the copy shares no nodes with this store.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone(t.requires_grad()));
    return out;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Bitwise equality of names, shapes and values.
  bool identical_to(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& [na, ta] = entries_[i];
      const auto& [nb, tb] = other.entries_[i];
      if (na != nb || ta.shape() != tb.shape()) return false;
      auto va = ta.data();
      auto vb = tb.data();
      for (std::size_t k = 0; k < va.size(); ++k) {
        if (std::bit_cast<std::uint64_t>(va[k]) != std::bit_cast<std::uint64_t>(vb[k])) return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace pgca
