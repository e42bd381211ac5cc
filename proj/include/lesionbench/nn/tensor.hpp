#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lesionbench/common.hpp"

namespace lesionbench::nn {

/// Dense row-major tensor; shape is [N,C,H,W] for images, [N,D] for vectors.
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh) : shape(std::move(sh)) {
    v.assign(static_cast<size_t>(numel(shape)), S(0));
  }

  static int64_t numel(const std::vector<int>& sh) {
    int64_t n = 1;
    for (int d : sh) n *= d;
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int dim(int i) const { return shape[i]; }

  Tensor reshaped(std::vector<int> sh) const {
    Tensor t;
    t.shape = std::move(sh);
    if (numel(t.shape) != size()) throw ContractError("reshape changes element count");
    t.v = v;
    return t;
  }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }
};

/// Activations saved during a forward pass, replayed backwards.
template <class S>
struct Trace {
  std::vector<Tensor<S>> saved;
  void clear() { saved.clear(); }
  void push(Tensor<S> t) { saved.push_back(std::move(t)); }
};

/// Walks a trace in reverse push order; several readers may share one trace.
template <class S>
struct TraceReader {
  const Trace<S>* trace;
  size_t pos;
  explicit TraceReader(const Trace<S>& t) : trace(&t), pos(t.saved.size()) {}
  const Tensor<S>& pop() {
    if (pos == 0) throw ContractError("trace underflow during backward");
    return trace->saved[--pos];
  }
};

/// All learnable parameters of one model as a single flat vector with named,
/// shaped views. Layers hold offsets into it.
template <class S>
struct ParamStore {
  struct Named {
    std::string name;
    size_t offset;
    std::vector<int> shape;
  };

  std::vector<S> values;
  std::vector<Named> names;

  size_t add(const std::string& name, std::vector<int> shape) {
    const size_t off = values.size();
    values.resize(off + static_cast<size_t>(Tensor<S>::numel(shape)), S(0));
    names.push_back({name, off, std::move(shape)});
    return off;
  }

  std::span<S> view(size_t offset, size_t n) { return {values.data() + offset, n}; }
  size_t size() const { return values.size(); }

  std::vector<S> zeros_like() const { return std::vector<S>(values.size(), S(0)); }
};

}  // namespace lesionbench::nn
