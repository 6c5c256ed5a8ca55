#include "adunet/parameter_store.hpp"

#include <stdexcept>

namespace adunet {

template <typename T>
typename ParameterStore<T>::Entry& ParameterStore<T>::insert(const std::string& name, TensorKind kind,
                                                             ParamCategory category, Var<T> var) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::make_unique<Entry>(Entry{name, kind, category, std::move(var)}));
  return *entries_.back();
}

template <typename T>
Var<T> ParameterStore<T>::add_parameter(const std::string& name, Tensor<T> value, ParamCategory category) {
  return insert(name, TensorKind::parameter, category, Var<T>(std::move(value), true)).var;
}

template <typename T>
Var<T> ParameterStore<T>::add_buffer(const std::string& name, Tensor<T> value) {
  return insert(name, TensorKind::buffer, ParamCategory::state, Var<T>(std::move(value), false)).var;
}

template <typename T>
const typename ParameterStore<T>::Entry& ParameterStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named " + name);
  return *entries_[it->second];
}

template <typename T>
typename ParameterStore<T>::Entry& ParameterStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no tensor named " + name);
  return *entries_[it->second];
}

template <typename T>
std::vector<Var<T>> ParameterStore<T>::parameters() const {
  std::vector<Var<T>> out;
  for (const auto& e : entries_)
    if (e->kind == TensorKind::parameter) out.push_back(e->var);
  return out;
}

template <typename T>
std::int64_t ParameterStore<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e->kind == TensorKind::parameter) n += e->var.value().numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e->var.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace adunet
