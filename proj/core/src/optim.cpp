#include "qrec/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace qrec {

Tensor& ParameterStore::create(const std::string& name, Tensor init,
                               bool trainable) {
  if (entries_.count(name)) {
    throw std::invalid_argument("parameter already exists: " + name);
  }
  order_.push_back(name);
  auto& e = entries_[name];
  e.value = std::move(init);
  e.trainable = trainable;
  return e.value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second.value;
}

void ParameterStore::set(const std::string& name, Tensor v) {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  if (!it->second.value.same_shape(v)) {
    throw std::invalid_argument("shape mismatch for parameter: " + name);
  }
  it->second.value = std::move(v);
}

bool ParameterStore::has(const std::string& name) const {
  return entries_.count(name) > 0;
}

bool ParameterStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second.trainable;
}

void AdamState::step(ParameterStore& store, const GradByName& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    if (!store.trainable(name)) {
      throw std::invalid_argument("gradient for non-trainable parameter: " + name);
    }
    const Tensor& p = store.get(name);
    if (!p.same_shape(g)) {
      throw std::invalid_argument("gradient shape mismatch for: " + name);
    }
    auto [it, fresh] = moments_.try_emplace(
        name, Tensor::zeros(p.rows(), p.cols()), Tensor::zeros(p.rows(), p.cols()));
    auto& m = it->second.first.mutable_data();
    auto& v = it->second.second.mutable_data();
    Tensor next = p;
    auto& pd = next.mutable_data();
    auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gd[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      pd[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    store.set(name, std::move(next));
  }
}

}  // namespace qrec
