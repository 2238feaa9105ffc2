#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "msan/error.hpp"
#include "msan/tensor.hpp"

namespace msan {

// Ordered name -> tensor registry. Trainable entries receive gradients;
// the rest are buffers such as batch-norm running statistics.
template <typename T> class ParamStore {
public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool trainable = true;
  };

  Tensor<T> &add(const std::string &name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name))
      throw ValueError("duplicate parameter name: " + name);
    if (!value.all_finite())
      throw NumericalError("parameter " + name + " is not finite");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(value), trainable});
    return entries_.back().value;
  }

  bool contains(const std::string &name) const { return index_.count(name) != 0; }

  Tensor<T> &at(const std::string &name) { return entries_[locate(name)].value; }
  const Tensor<T> &at(const std::string &name) const { return entries_[locate(name)].value; }
  const Entry &entry(const std::string &name) const { return entries_[locate(name)]; }

  std::vector<Entry> &entries() { return entries_; }
  const std::vector<Entry> &entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto &e : entries_)
      n += e.trainable ? e.value.size() : 0;
    return n;
  }

  bool operator==(const ParamStore &o) const {
    if (entries_.size() != o.entries_.size())
      return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto &a = entries_[i], &b = o.entries_[i];
      if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value))
        return false;
    }
    return true;
  }

private:
  std::size_t locate(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ValueError("unknown parameter: " + name);
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

} // namespace msan
