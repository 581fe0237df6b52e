#include "wombet/world_model.hpp"

#include "wombet/envs.hpp"
#include "wombet/errors.hpp"
#include "wombet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wombet {

namespace {

constexpr double kMinStd = 1e-6;

std::vector<nn::LayerSpec> member_layers(const WorldModelConfig& cfg, int state_dim) {
  std::vector<nn::LayerSpec> specs;
  for (int h : cfg.hidden) specs.push_back({h, nn::Activation::relu, false});
  specs.push_back({2 * state_dim, nn::Activation::identity, false});
  return specs;
}

void require_finite(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw nn::ContractViolation(std::string("non-finite ") + what);
}

struct Dataset {
  Eigen::MatrixXd states, actions, next_states;
};

Dataset stack(std::span<const Transition> data) {
  Dataset d;
  const auto n = static_cast<Eigen::Index>(data.size());
  d.states.resize(data.front().state.size(), n);
  d.actions.resize(data.front().action.size(), n);
  d.next_states.resize(data.front().state.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = data[static_cast<std::size_t>(i)];
    d.states.col(i) = t.state;
    d.actions.col(i) = t.action;
    d.next_states.col(i) = t.next_state;
  }
  return d;
}

}  // namespace

Eigen::MatrixXd ensemble_mean(const EnsembleBatch& batch) {
  Eigen::MatrixXd m = batch.means.front();
  for (std::size_t i = 1; i < batch.means.size(); ++i) m += batch.means[i];
  return m / static_cast<double>(batch.means.size());
}

Eigen::RowVectorXd ensemble_uncertainty(const EnsembleBatch& batch, UncertaintyMode mode) {
  const Eigen::Index cols = batch.means.front().cols();
  Eigen::RowVectorXd u = Eigen::RowVectorXd::Zero(cols);
  if (mode == UncertaintyMode::max_std_norm) {
    for (const auto& v : batch.variances) u = u.cwiseMax(v.colwise().sum().cwiseSqrt());
    return u;
  }
  for (std::size_t i = 0; i < batch.means.size(); ++i)
    for (std::size_t j = i + 1; j < batch.means.size(); ++j)
      u = u.cwiseMax((batch.means[i] - batch.means[j]).colwise().norm());
  return u;
}

Normalizer Normalizer::fit(const Eigen::MatrixXd& columns) {
  Normalizer n;
  const double count = static_cast<double>(columns.cols());
  n.mean = columns.rowwise().sum() / count;
  n.std = ((columns.colwise() - n.mean).rowwise().squaredNorm() / count).cwiseSqrt().cwiseMax(kMinStd);
  return n;
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& x) const {
  return (x.colwise() - mean).array().colwise() / std.array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& x) const {
  return (x.array().colwise() * std.array()).matrix().colwise() + mean;
}

double ModelTrainReport::mean_nll() const { return mean_of(holdout_nll); }
double ModelTrainReport::mean_mse() const { return mean_of(holdout_mse); }

EnsembleModel::EnsembleModel(int state_dim, int action_dim, std::vector<bool> angular, WorldModelConfig cfg,
                             std::uint64_t seed)
    : config(std::move(cfg)), state_dim_(state_dim), action_dim_(action_dim), angular_(std::move(angular)) {
  if (config.ensemble_size < 2) throw PreconditionError("ensemble size must be >= 2");
  if (static_cast<int>(angular_.size()) != state_dim_) throw PreconditionError("angular flags must match state dim");
  const auto specs = member_layers(config, state_dim_);
  for (int i = 0; i < config.ensemble_size; ++i) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(i));
    members.push_back(nn::make_mlp<float>(input_dim(), specs, rng));
  }
  input_norm.mean = Eigen::VectorXd::Zero(input_dim());
  input_norm.std = Eigen::VectorXd::Ones(input_dim());
  target_norm.mean = Eigen::VectorXd::Zero(state_dim_);
  target_norm.std = Eigen::VectorXd::Ones(state_dim_);
}

Eigen::Index EnsembleModel::input_dim() const {
  Eigen::Index n = action_dim_;
  for (bool a : angular_) n += a ? 2 : 1;
  return n;
}

Eigen::MatrixXd EnsembleModel::features(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
  Eigen::MatrixXd x(input_dim(), states.cols());
  const Eigen::MatrixXd obs = encode_observations<double>(angular_, states);
  x.topRows(obs.rows()) = obs;
  x.bottomRows(action_dim_) = actions;
  return x;
}

EnsembleBatch EnsembleModel::predict_batch(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const {
  if (states.rows() != state_dim_ || actions.rows() != action_dim_ || states.cols() != actions.cols())
    throw nn::ContractViolation("predict: state/action shape mismatch");
  require_finite(states, "state");
  require_finite(actions, "action");
  const nn::Matrix<float> x = input_norm.normalize(features(states, actions)).cast<float>();
  EnsembleBatch out;
  out.means.reserve(members.size());
  out.variances.reserve(members.size());
  const Eigen::ArrayXd var_scale = target_norm.std.array().square();
  for (const auto& member : members) {
    const nn::Matrix<float> y = nn::predict(member, x);
    const Eigen::MatrixXd delta = target_norm.denormalize(y.topRows(state_dim_).cast<double>());
    out.means.push_back(states + delta);
    const auto lv = nn::soft_clamp_log_var<float>(y.bottomRows(state_dim_), config.log_var_min, config.log_var_max);
    out.variances.push_back((lv.value.cast<double>().array().exp().colwise() * var_scale).matrix());
  }
  return out;
}

ModelTrainReport fit(EnsembleModel& model, std::span<const Transition> data, int epochs, std::uint64_t seed) {
  const auto& cfg = model.config;
  if (data.empty()) throw PreconditionError("fit: empty dataset");
  if (data.size() < static_cast<std::size_t>(2 * cfg.batch_size))
    throw PreconditionError("fit: dataset smaller than twice the batch size");
  if (epochs < 0) throw PreconditionError("fit: negative epoch count");

  const Dataset d = stack(data);
  require_finite(d.states, "state");
  require_finite(d.actions, "action");
  require_finite(d.next_states, "next state");
  const Eigen::MatrixXd raw_x = model.features(d.states, d.actions);
  const Eigen::MatrixXd raw_delta = d.next_states - d.states;
  model.input_norm = Normalizer::fit(raw_x);
  model.target_norm = Normalizer::fit(raw_delta);
  const nn::Matrix<float> x = model.input_norm.normalize(raw_x).cast<float>();
  const nn::Matrix<float> y = model.target_norm.normalize(raw_delta).cast<float>();

  const int n = static_cast<int>(data.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto split_rng = make_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), split_rng);
  const int holdout = std::max(1, static_cast<int>(std::floor(cfg.holdout_fraction * n)));
  const std::vector<int> train(order.begin(), order.end() - holdout);
  const std::vector<int> held(order.end() - holdout, order.end());

  const auto specs = member_layers(cfg, model.state_dim());
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    auto rng = make_rng(seed, 1000 + m);
    model.members[m] = nn::make_mlp<float>(model.input_dim(), specs, rng);
    auto opt = nn::AdamState<float>::for_network(model.members[m], cfg.learning_rate);

    std::vector<int> boot(train.size());
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    for (auto& b : boot) b = train[pick(rng)];

    for (int e = 0; e < epochs; ++e) {
      std::shuffle(boot.begin(), boot.end(), rng);
      for (std::size_t start = 0; start < boot.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(boot.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<int> idx(boot.begin() + static_cast<std::ptrdiff_t>(start),
                                   boot.begin() + static_cast<std::ptrdiff_t>(stop));
        const nn::Matrix<float> xb = x(Eigen::all, idx);
        const nn::Matrix<float> yb = y(Eigen::all, idx);
        auto fwd = nn::forward(model.members[m], xb);
        const auto loss = nn::gaussian_head_nll<float>(fwd.output, yb, cfg.log_var_min, cfg.log_var_max);
        if (!std::isfinite(loss.loss)) throw DivergenceError("world model NLL is not finite", opt.step);
        const auto grads = nn::backward(model.members[m], fwd.tape, loss.output_grad);
        nn::adam_step(model.members[m], grads, opt);
      }
    }
  }
  model.fitted = true;

  std::vector<Transition> held_out;
  held_out.reserve(held.size());
  for (int i : held) held_out.push_back(data[static_cast<std::size_t>(i)]);
  auto report = evaluate(model, held_out);
  report.epochs = epochs;
  return report;
}

ModelTrainReport evaluate(const EnsembleModel& model, std::span<const Transition> data) {
  if (data.empty()) throw PreconditionError("evaluate: empty dataset");
  const Dataset d = stack(data);
  const nn::Matrix<float> x = model.input_norm.normalize(model.features(d.states, d.actions)).cast<float>();
  const nn::Matrix<float> y = model.target_norm.normalize(d.next_states - d.states).cast<float>();
  ModelTrainReport report;
  for (const auto& member : model.members) {
    const nn::Matrix<float> out = nn::predict(member, x);
    report.holdout_nll.push_back(nn::gaussian_head_nll<float>(out, y, model.config.log_var_min, model.config.log_var_max).loss);
    const Eigen::MatrixXd pred =
        d.states + model.target_norm.denormalize(out.topRows(model.state_dim()).cast<double>());
    report.holdout_mse.push_back((pred - d.next_states).squaredNorm() / static_cast<double>(pred.size()));
  }
  return report;
}

std::vector<MemberPrediction> predict(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  const auto batch = model.predict_batch(Eigen::MatrixXd(s), Eigen::MatrixXd(a));
  std::vector<MemberPrediction> out;
  for (std::size_t i = 0; i < batch.means.size(); ++i) out.push_back({batch.means[i].col(0), batch.variances[i].col(0)});
  return out;
}

double uncertainty(const Ensemble& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
  return ensemble_uncertainty(model.predict_batch(Eigen::MatrixXd(s), Eigen::MatrixXd(a)), model.uncertainty_mode())(0);
}

Eigen::VectorXd synthetic_step(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                               std::mt19937_64& rng) {
  const auto preds = predict(model, s, a);
  std::uniform_int_distribution<std::size_t> pick(0, preds.size() - 1);
  const auto& p = preds[pick(rng)];
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd next(p.mean.size());
  for (Eigen::Index i = 0; i < next.size(); ++i) next(i) = p.mean(i) + std::sqrt(p.variance(i)) * normal(rng);
  return next;
}

Eigen::VectorXd synthetic_step(const EnsembleModel& model, const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return synthetic_step(model, s, a, rng);
}

namespace {

nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ParameterFile to_checkpoint(const EnsembleModel& model) {
  ParameterFile file;
  for (std::size_t i = 0; i < model.members.size(); ++i)
    file.networks.push_back({"member" + std::to_string(i), model.members[i]});
  file.meta = {{"kind", "ensemble_dynamics"},
               {"state_dim", model.state_dim()},
               {"action_dim", model.action_dim()},
               {"angular", model.angular()},
               {"hidden", model.config.hidden},
               {"log_var_min", model.config.log_var_min},
               {"log_var_max", model.config.log_var_max},
               {"uncertainty", model.config.uncertainty == UncertaintyMode::max_std_norm ? "max_std_norm"
                                                                                         : "pairwise_mean_distance"},
               {"input_mean", to_json(model.input_norm.mean)},
               {"input_std", to_json(model.input_norm.std)},
               {"target_mean", to_json(model.target_norm.mean)},
               {"target_std", to_json(model.target_norm.std)}};
  return file;
}

EnsembleModel from_checkpoint(const ParameterFile& file) {
  const auto& m = file.meta;
  WorldModelConfig cfg;
  cfg.ensemble_size = static_cast<int>(file.networks.size());
  cfg.hidden = m.at("hidden").get<std::vector<int>>();
  cfg.log_var_min = m.at("log_var_min").get<double>();
  cfg.log_var_max = m.at("log_var_max").get<double>();
  cfg.uncertainty = m.at("uncertainty").get<std::string>() == "max_std_norm" ? UncertaintyMode::max_std_norm
                                                                             : UncertaintyMode::pairwise_mean_distance;
  EnsembleModel model(m.at("state_dim").get<int>(), m.at("action_dim").get<int>(),
                      m.at("angular").get<std::vector<bool>>(), cfg, 0);
  for (std::size_t i = 0; i < file.networks.size(); ++i) model.members[i] = file.networks[i].net;
  model.input_norm = {vector_from_json(m.at("input_mean")), vector_from_json(m.at("input_std"))};
  model.target_norm = {vector_from_json(m.at("target_mean")), vector_from_json(m.at("target_std"))};
  model.fitted = true;
  return model;
}

}  // namespace wombet
