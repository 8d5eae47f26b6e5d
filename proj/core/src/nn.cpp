#include "qrec/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace qrec {

int ParamNodes::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const int id = tape_->leaf(store_->get(name));
  bound_.emplace(name, id);
  return id;
}

GradByName ParamNodes::collect(const GradientMap& gm) const {
  GradByName out;
  for (const auto& [name, id] : bound_) {
    if (!store_->trainable(name)) continue;
    const Tensor& p = store_->get(name);
    out.emplace(name, gm.get_or_zero(id, p.rows(), p.cols()));
  }
  return out;
}

void Mlp::init(ParameterStore& store, Rng& rng) const {
  if (dims.size() < 2) throw std::invalid_argument("mlp needs at least two dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    store.create(prefix + ".w" + std::to_string(l),
                 rng.normal_tensor(dims[l], dims[l + 1], stddev));
    store.create(prefix + ".b" + std::to_string(l),
                 Tensor::zeros(1, dims[l + 1]));
  }
}

int Mlp::forward(Tape& t, ParamNodes& p, int x) const {
  int h = x;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    h = t.add_row(t.matmul(h, p(prefix + ".w" + std::to_string(l))),
                  p(prefix + ".b" + std::to_string(l)));
    const bool last = l + 2 == dims.size();
    if (!last) {
      h = t.tanh(h);
    } else if (sigmoid_out) {
      h = t.sigmoid(h);
    }
  }
  return h;
}

}  // namespace qrec
