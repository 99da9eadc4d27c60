#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lpose/tape.hpp"
#include "lpose/tensor.hpp"

namespace lpose {

/// Ordered collection of named parameter tensors. Registration order is the
/// binding/serialisation order, so training stays deterministic.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    ad::Tensor<T> value;
    bool decay = true;  // participates in decoupled weight decay
  };

  std::vector<Entry> entries;
  std::unordered_map<std::string, int> index;

  int add(std::string name, ad::Tensor<T> value, bool decay) {
    if (index.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    int id = static_cast<int>(entries.size());
    index.emplace(name, id);
    entries.push_back({std::move(name), std::move(value), decay});
    return id;
  }

  Entry& at(int id) { return entries[static_cast<std::size_t>(id)]; }
  const Entry& at(int id) const { return entries[static_cast<std::size_t>(id)]; }

  Entry& named(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw std::invalid_argument("param store: unknown name " + name);
    return entries[static_cast<std::size_t>(it->second)];
  }

  std::size_t size() const { return entries.size(); }

  /// Total trainable scalar count.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.numel();
    return n;
  }

  /// Creates one tape leaf per entry, in registration order.
  std::vector<ad::Var<T>> bind(ad::Tape<T>& tape, bool requires_grad) const {
    std::vector<ad::Var<T>> vars;
    vars.reserve(entries.size());
    for (const auto& e : entries) vars.push_back(tape.leaf(e.value, requires_grad, e.name));
    return vars;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries) out.add(e.name, e.value.template cast<U>(), e.decay);
    return out;
  }
};

}  // namespace lpose
