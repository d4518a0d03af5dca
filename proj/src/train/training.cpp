#include "crossgaze/train/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/rng.hpp"

namespace crossgaze::train {

template <typename T>
Tensor<T> gaze_loss(const Tensor<T>& pred, const Tensor<T>& truth) {
  if (pred.rank() != 2 || pred.dim(1) != 3 || pred.shape() != truth.shape() || pred.dim(0) == 0) {
    throw ShapeError("gaze_loss: expected matching [B,3] tensors, got " + shape_string(pred.shape()) + " and " +
                     shape_string(truth.shape()));
  }
  const Tensor<T> dot = reduce(ReduceOp::sum, mul(pred, truth), {1});
  // max(|p|, 1e-8) taken on the squared norm keeps the gradient finite at p = 0.
  const Tensor<T> norm = sqrt(clamp_min(reduce(ReduceOp::sum, mul(pred, pred), {1}), T(1e-16)));
  const Tensor<T> cosine = mean(div(dot, norm));
  return elementwise(BinaryOp::add, elementwise(BinaryOp::mul, cosine, T{-1}), T{1});
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const nn::ParamStore<T>& params) {
  AdamState<T> s;
  for (const auto& [path, t] : params.parameters()) {
    s.m.emplace(path, Tensor<T>::zeros(t.shape()));
    s.v.emplace(path, Tensor<T>::zeros(t.shape()));
  }
  return s;
}

template <typename T>
bool AdamState<T>::operator==(const AdamState& other) const {
  auto same = [](const std::map<std::string, Tensor<T>>& a, const std::map<std::string, Tensor<T>>& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
      if (!std::equal(ia->second.data().begin(), ia->second.data().end(), ib->second.data().begin())) return false;
    }
    return true;
  };
  return step == other.step && same(m, other.m) && same(v, other.v);
}

template <typename T>
GradMap<T> collect_gradients(const nn::ParamStore<T>& params) {
  GradMap<T> out;
  for (const auto& [path, t] : params.parameters()) {
    Tensor<T> g = Tensor<T>::zeros(t.shape());
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.data().begin());
    out.emplace(path, std::move(g));
  }
  return out;
}

template <typename T>
void adam_step(nn::ParamStore<T>& params, const GradMap<T>& grads, AdamState<T>& state, const AdamConfig& config) {
  for (const auto& [path, g] : grads) {
    if (!params.has_parameter(path)) throw ShapeError("adam_step: gradient for unknown parameter " + path);
  }
  for (auto& [path, p] : params.parameters()) {
    auto g = grads.find(path);
    if (g == grads.end()) throw ShapeError("adam_step: no gradient for " + path);
    if (g->second.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient for " + path + " has shape " + shape_string(g->second.shape()) +
                       ", parameter has " + shape_string(p.shape()));
    }
    for (auto* moments : {&state.m, &state.v}) {
      auto it = moments->find(path);
      if (it == moments->end()) {
        moments->emplace(path, Tensor<T>::zeros(p.shape()));
      } else if (it->second.shape() != p.shape()) {
        throw ShapeError("adam_step: moment for " + path + " has shape " + shape_string(it->second.shape()) +
                         ", parameter has " + shape_string(p.shape()));
      }
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [path, p] : params.parameters()) {
    auto pd = p.data();
    auto gd = grads.at(path).data();
    auto md = state.m.at(path).data();
    auto vd = state.v.at(path).data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      const double gi = gd[i];
      md[i] = static_cast<T>(config.beta1 * md[i] + (1.0 - config.beta1) * gi);
      vd[i] = static_cast<T>(config.beta2 * vd[i] + (1.0 - config.beta2) * gi * gi);
      const double m_hat = md[i] / c1, v_hat = vd[i] / c2;
      pd[i] = static_cast<T>(pd[i] - config.lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
  }
}

void TrainConfig::validate() const {
  if (!seed) throw std::invalid_argument("training seed is required");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!std::isfinite(adam.lr) || adam.lr < 0.0) throw std::invalid_argument("learning rate must be finite and >= 0");
  for (double beta : {adam.beta1, adam.beta2}) {
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0) || !std::isfinite(adam.eps)) throw std::invalid_argument("Adam eps must be positive");
}

Model Model::create(const model::CrossGazeConfig& config) {
  return Model{config, model::init_parameters<float>(config)};
}

void check_finite(const nn::ParamStore<float>& params) {
  auto scan = [](const nn::ParamStore<float>::Map& map, const char* kind) {
    for (const auto& [path, t] : map) {
      if (!std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); })) {
        throw NumericalError(std::string(kind) + " " + path + " is not finite");
      }
    }
  };
  scan(params.parameters(), "parameter");
  scan(params.buffers(), "buffer");
}

EpochResult train_epoch(Model& model, AdamState<float>& adam, const data::InMemoryDataset& data,
                        const TrainConfig& config, std::uint64_t epoch_index) {
  config.validate();
  if (data.size() == 0) throw DataError("cannot train on an empty dataset");
  data::BatchIterator batches(data, config.batch_size, hash_combine(*config.seed, epoch_index));
  EpochResult result;
  data::InMemoryDataset::Batch batch;
  while (batches.next(batch)) {
    Tape<float> tape;
    double loss_value = 0.0;
    {
      Tape<float>::Scope scope(tape);
      const Tensor<float> pred =
          model::model_forward<float>(model.params, model.config, batch.face, batch.left_eye, batch.right_eye, true);
      const Tensor<float> loss = gaze_loss(pred, batch.gaze);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericalError("non-finite loss in epoch " + std::to_string(epoch_index) + ", batch " +
                             std::to_string(result.batch_losses.size()));
      }
      tape.backward(loss);
    }
    adam_step(model.params, collect_gradients(model.params), adam, config.adam);
    model.params.zero_grad();
    tape.clear();
    result.batch_losses.push_back(loss_value);
  }
  check_finite(model.params);
  double total = 0.0;
  for (double l : result.batch_losses) total += l;
  result.mean_loss = total / static_cast<double>(result.batch_losses.size());
  return result;
}

std::vector<geometry::GazeVector> predict(Model& model, const data::InMemoryDataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<geometry::GazeVector> out;
  out.reserve(data.size());
  data::BatchIterator batches(data, batch_size, std::nullopt);
  data::InMemoryDataset::Batch batch;
  while (batches.next(batch)) {
    const Tensor<float> pred =
        model::model_forward<float>(model.params, model.config, batch.face, batch.left_eye, batch.right_eye, false);
    for (std::size_t i = 0; i < pred.dim(0); ++i) out.push_back({pred[3 * i], pred[3 * i + 1], pred[3 * i + 2]});
  }
  return out;
}

std::vector<SubsetMetric> evaluate_predictions(const std::vector<geometry::GazeVector>& predictions,
                                               const std::vector<geometry::GazeVector>& truth,
                                               const std::vector<geometry::Subset>& subsets) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("prediction and label counts differ");
  std::vector<SubsetMetric> out;
  for (geometry::Subset s : subsets) {
    SubsetMetric m;
    m.subset = s;
    m.count = static_cast<std::size_t>(
        std::count_if(truth.begin(), truth.end(), [s](const geometry::GazeVector& g) { return in_subset(g, s); }));
    if (m.count > 0) m.mean_degrees = geometry::mean_angular_error(predictions, truth, s).mean_degrees;
    out.push_back(m);
  }
  return out;
}

std::vector<SubsetMetric> evaluate(Model& model, const data::InMemoryDataset& data,
                                   const std::vector<geometry::Subset>& subsets) {
  return evaluate_predictions(predict(model, data), data.gaze(), subsets);
}

template Tensor<float> gaze_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> gaze_loss<double>(const Tensor<double>&, const Tensor<double>&);
template struct AdamState<float>;
template struct AdamState<double>;
template GradMap<float> collect_gradients<float>(const nn::ParamStore<float>&);
template GradMap<double> collect_gradients<double>(const nn::ParamStore<double>&);
template void adam_step<float>(nn::ParamStore<float>&, const GradMap<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(nn::ParamStore<double>&, const GradMap<double>&, AdamState<double>&,
                                const AdamConfig&);

}  // namespace crossgaze::train
