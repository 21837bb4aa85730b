#include "agsv/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "agsv/errors.hpp"
#include "agsv/random.hpp"

namespace agsv {

void LabeledEmbeddingSet::validate() const {
  if (class_count < 2) throw DataError("labeled set needs at least 2 classes");
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
    throw DataError("labeled set has " + std::to_string(embeddings.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  if (labels.size() < static_cast<std::size_t>(class_count))
    throw DataError("labeled set needs at least as many samples as classes");
  for (int l : labels)
    if (l < 0 || l >= class_count)
      throw LabelError("label " + std::to_string(l) + " outside [0, " +
                       std::to_string(class_count) + ")");
  if (!embeddings.allFinite()) throw DataError("labeled set holds non-finite embeddings");
}

LabeledEmbeddingSet LabeledEmbeddingSet::subset(std::span<const std::size_t> indices) const {
  LabeledEmbeddingSet out;
  out.class_count = class_count;
  out.embeddings.resize(static_cast<Eigen::Index>(indices.size()), embeddings.cols());
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out.embeddings.row(static_cast<Eigen::Index>(i)) =
        embeddings.row(static_cast<Eigen::Index>(indices[i]));
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw LabelError("label " + std::to_string(label) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - peak);
  return std::max(0.0, std::log(sum) - (logits[static_cast<std::size_t>(label)] - peak));
}

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError("Adam learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ParameterError("Adam epsilon must be > 0");
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state,
               const AdamConfig& config) {
  config.validate();
  params.check_aligned(grads);
  for (const auto& g : grads)
    for (double v : g.values)
      if (!std::isfinite(v)) throw OptimError(g.name);
  if (state.step == 0) {
    state.first_moment = params.zeros_like();
    state.second_moment = params.zeros_like();
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].as_vector();
    const auto g = grads[i].as_vector();
    auto m = state.first_moment[i].as_vector();
    auto v = state.second_moment[i].as_vector();
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    w.array() -= config.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + config.epsilon);
  }
}

namespace {

ParamSet head_layout(int input_dim, int class_count, int hidden) {
  ParamSet p;
  const auto in = static_cast<std::size_t>(input_dim);
  const auto c = static_cast<std::size_t>(class_count);
  if (hidden > 0) {
    const auto h = static_cast<std::size_t>(hidden);
    p.add("head.fc0.weight", {h, in});
    p.add("head.fc0.bias", {h}, true);
    p.add("head.fc1.weight", {c, h});
    p.add("head.fc1.bias", {c}, true);
  } else {
    p.add("head.fc0.weight", {c, in});
    p.add("head.fc0.bias", {c}, true);
  }
  return p;
}

struct HeadTape {
  Matrix input;   // standardized
  Matrix hidden_pre;
  Matrix hidden;
};

Matrix standardized(const HeadModel& m, const Matrix& x) {
  if (x.cols() != m.input_dim)
    throw ShapeError("head expects width " + std::to_string(m.input_dim) + ", got " +
                     std::to_string(x.cols()));
  Matrix s = x.rowwise() - m.feature_mean.transpose();
  return s.array().rowwise() / m.feature_scale.transpose().array();
}

Matrix head_forward(const HeadModel& m, const Matrix& x, HeadTape* tape) {
  Matrix in = standardized(m, x);
  const auto& w0 = m.params.at("head.fc0.weight");
  const auto& b0 = m.params.at("head.fc0.bias");
  Matrix out = in * w0.as_matrix().transpose();
  out.rowwise() += b0.as_vector().transpose();
  if (m.hidden > 0) {
    Matrix act = out.cwiseMax(0.0);
    const auto& w1 = m.params.at("head.fc1.weight");
    const auto& b1 = m.params.at("head.fc1.bias");
    Matrix logits = act * w1.as_matrix().transpose();
    logits.rowwise() += b1.as_vector().transpose();
    if (tape) {
      tape->hidden_pre = std::move(out);
      tape->hidden = std::move(act);
    }
    out = std::move(logits);
  }
  if (tape) tape->input = std::move(in);
  return out;
}

// Mean cross-entropy over the rows and its gradient with respect to the head
// and, when asked, the head input.
double head_loss_gradient(const HeadModel& m, const Matrix& x, std::span<const int> labels,
                          ParamSet& grads, Matrix* d_input = nullptr) {
  if (labels.size() != static_cast<std::size_t>(x.rows()))
    throw ShapeError(std::to_string(x.rows()) + " rows but " + std::to_string(labels.size()) +
                     " labels");
  HeadTape tape;
  const Matrix logits = head_forward(m, x, &tape);
  const auto rows = logits.rows();
  Matrix d = Matrix::Zero(rows, logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const RowVector row = logits.row(i);
    loss += cross_entropy({row.data(), static_cast<std::size_t>(row.size())},
                          labels[static_cast<std::size_t>(i)]);
    const double peak = row.maxCoeff();
    RowVector p = (row.array() - peak).exp();
    p /= p.sum();
    p(labels[static_cast<std::size_t>(i)]) -= 1.0;
    d.row(i) = p / static_cast<double>(rows);
  }
  if (m.hidden > 0) {
    grads.at("head.fc1.weight").as_matrix() += d.transpose() * tape.hidden;
    grads.at("head.fc1.bias").as_vector() += d.colwise().sum().transpose();
    Matrix d_hidden = d * m.params.at("head.fc1.weight").as_matrix();
    d = d_hidden.cwiseProduct((tape.hidden_pre.array() > 0.0).cast<double>().matrix());
  }
  grads.at("head.fc0.weight").as_matrix() += d.transpose() * tape.input;
  grads.at("head.fc0.bias").as_vector() += d.colwise().sum().transpose();
  if (d_input) {
    const Matrix back = d * m.params.at("head.fc0.weight").as_matrix();
    *d_input = back.array().rowwise() / m.feature_scale.transpose().array();
  }
  return loss / static_cast<double>(rows);
}

HeadModel init_head(const LabeledEmbeddingSet& data, const FinetuneConfig& config) {
  const auto dim = static_cast<int>(data.embeddings.cols());
  HeadModel m = HeadModel::zeros(dim, data.class_count, config.hidden);
  if (config.standardize) {
    m.feature_mean = data.embeddings.colwise().mean().transpose();
    const Matrix centered = data.embeddings.rowwise() - m.feature_mean.transpose();
    Vector var = centered.cwiseAbs2().colwise().mean().transpose();
    for (Eigen::Index k = 0; k < var.size(); ++k)
      m.feature_scale(k) = var(k) > 1e-24 ? std::sqrt(var(k)) : 1.0;
  }
  Rng rng(derive_seed({config.seed, 0x4ead}));
  for (auto& t : m.params) {
    if (t.exclude_from_adaptation) continue;
    const double fan_in = static_cast<double>(t.shape[1]);
    const bool output_layer = config.hidden == 0 || t.name == "head.fc1.weight";
    const double stddev = output_layer ? 0.01 : std::sqrt(2.0 / fan_in);
    for (double& v : t.values) v = stddev * rng.normal();
  }
  return m;
}

// Seeded per-epoch shuffles in batches of config.batch_size. `step` trains on
// one batch of indices and returns its mean loss.
template <typename Step>
void run_epochs(std::size_t n, const FinetuneConfig& config, RunReport& report, Step step) {
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed({config.seed, 0xe9, epoch}));
    shuffle(order, rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      total += step(batch) * static_cast<double>(batch.size());
    }
    const double mean = total / static_cast<double>(n);
    report.loss_curve.push_back(mean);
    if (config.loss_threshold && !report.epochs_to_threshold && mean < *config.loss_threshold)
      report.epochs_to_threshold = epoch;
  }
}

}  // namespace

HeadModel HeadModel::zeros(int input_dim, int class_count, int hidden) {
  if (input_dim < 1 || class_count < 2 || hidden < 0)
    throw ParameterError("head needs input_dim >= 1, class_count >= 2, hidden >= 0");
  HeadModel m;
  m.input_dim = input_dim;
  m.hidden = hidden;
  m.class_count = class_count;
  m.feature_mean = Vector::Zero(input_dim);
  m.feature_scale = Vector::Ones(input_dim);
  m.params = head_layout(input_dim, class_count, hidden);
  return m;
}

Matrix HeadModel::logits(const Matrix& embeddings) const {
  return head_forward(*this, embeddings, nullptr);
}

std::vector<int> HeadModel::predict(const Matrix& embeddings) const {
  const Matrix l = logits(embeddings);
  std::vector<int> out(static_cast<std::size_t>(l.rows()));
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < l.cols(); ++c)
      if (l(i, c) > l(i, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

void FinetuneConfig::validate() const {
  if (hidden < 0) throw ParameterError("hidden width must be >= 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  adam.validate();
}

FinetuneResult finetune_head(const LabeledEmbeddingSet& data, const FinetuneConfig& config) {
  if (data.size() == 0) throw DataError("fine-tuning set is empty");
  data.validate();
  config.validate();
  FinetuneResult result;
  result.model = init_head(data, config);
  HeadModel& model = result.model;

  run_epochs(data.size(), config, result.report, [&](std::span<const std::size_t> batch) {
    const LabeledEmbeddingSet rows = data.subset(batch);
    ParamSet grads = model.params.zeros_like();
    const double loss = head_loss_gradient(model, rows.embeddings, rows.labels, grads);
    adam_step(model.params, grads, model.optimizer, config.adam);
    return loss;
  });
  result.report.accuracy = evaluate(model, data);
  return result;
}

double evaluate(const HeadModel& model, const LabeledEmbeddingSet& data) {
  if (data.embeddings.cols() != model.input_dim)
    throw ShapeError("evaluation data width " + std::to_string(data.embeddings.cols()) +
                     " does not match head input " + std::to_string(model.input_dim));
  if (data.size() == 0) throw DataError("evaluation set is empty");
  const auto predicted = model.predict(data.embeddings);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

namespace {

std::vector<std::vector<std::size_t>> members_by_class(std::span<const int> labels,
                                                       int class_count, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw LabelError("label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(class_count) + ")");
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (std::size_t c = 0; c < members.size(); ++c) {
    Rng rng(derive_seed({seed, 0x57a7, c}));
    shuffle(members[c], rng);
  }
  return members;
}

}  // namespace

std::vector<std::size_t> stratified_subsample(std::span<const int> labels, int class_count,
                                              double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ParameterError("fraction must lie in (0, 1]");
  const auto members = members_by_class(labels, class_count, seed);
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(members[c].size())));
    if (take == 0)
      throw DataError("fraction " + std::to_string(fraction) + " leaves class " +
                      std::to_string(c) + " without samples");
    picked.insert(picked.end(), members[c].begin(),
                  members[c].begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split_indices(
    std::span<const int> labels, int class_count, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ParameterError("test fraction must lie in (0, 1)");
  if (class_count < 2) throw DataError("a split needs at least 2 classes");
  const auto members = members_by_class(labels, class_count, seed);
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const std::size_t count = members[c].size();
    auto held = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(count)));
    held = std::max<std::size_t>(held, 1);
    if (held >= count)
      throw DataError("class " + std::to_string(c) + " has too few samples for a train/test split");
    test.insert(test.end(), members[c].begin(),
                members[c].begin() + static_cast<std::ptrdiff_t>(held));
    train.insert(train.end(), members[c].begin() + static_cast<std::ptrdiff_t>(held),
                 members[c].end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

Split stratified_split(const LabeledEmbeddingSet& data, double test_fraction,
                       std::uint64_t seed) {
  data.validate();
  const auto [train, test] =
      stratified_split_indices(data.labels, data.class_count, test_fraction, seed);
  return {data.subset(train), data.subset(test)};
}

std::vector<FractionResult> label_efficiency_experiment(const LabeledEmbeddingSet& full,
                                                        std::span<const double> fractions,
                                                        const FinetuneConfig& config,
                                                        double test_fraction) {
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ParameterError("fractions must lie in (0, 1]");
  const Split split = stratified_split(full, test_fraction, derive_seed({config.seed, 0x5e1}));
  std::vector<FractionResult> results;
  for (double f : fractions) {
    const auto picked = stratified_subsample(split.train.labels, split.train.class_count, f,
                                             derive_seed({config.seed, 0xf4c}));
    const LabeledEmbeddingSet train = split.train.subset(picked);
    FinetuneResult run = finetune_head(train, config);
    FractionResult r;
    r.fraction = f;
    r.accuracy = evaluate(run.model, split.test);
    r.train_size = train.size();
    r.test_size = split.test.size();
    r.report = std::move(run.report);
    results.push_back(std::move(r));
  }
  return results;
}

std::pair<RunReport, RunReport> convergence_compare(const Matrix& ssl_embeddings,
                                                    const Matrix& random_embeddings,
                                                    std::span<const int> labels, int class_count,
                                                    double threshold, FinetuneConfig config) {
  if (ssl_embeddings.rows() != random_embeddings.rows())
    throw ShapeError("both embedding sets must cover the same samples");
  config.loss_threshold = threshold;
  const std::vector<int> label_vec(labels.begin(), labels.end());
  LabeledEmbeddingSet ssl{ssl_embeddings, label_vec, class_count};
  LabeledEmbeddingSet random{random_embeddings, label_vec, class_count};
  return {finetune_head(ssl, config).report, finetune_head(random, config).report};
}

void WholeNetworkConfig::validate() const {
  head.validate();
  if (!(std::isfinite(encoder_learning_rate) && encoder_learning_rate >= 0.0))
    throw ParameterError("encoder learning rate must be finite and >= 0");
}

WholeNetworkGradient whole_network_gradient(const EncoderCheckpoint& encoder, const HeadModel& head,
                                            std::span<const Image> images,
                                            std::span<const int> labels) {
  const Matrix h = encode(encoder, images);
  WholeNetworkGradient g;
  g.head = head.params.zeros_like();
  Matrix d_h;
  g.loss = head_loss_gradient(head, h, labels, g.head, &d_h);
  g.encoder = encoder_gradient(encoder, images, d_h);
  return g;
}

namespace {

template <typename T>
std::vector<T> gather(std::span<const T> values, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(values[i]);
  return out;
}

}  // namespace

WholeNetworkResult finetune_whole_network(const EncoderCheckpoint& start, std::span<const Image> images,
                                          std::span<const int> labels, int class_count,
                                          const WholeNetworkConfig& config) {
  config.validate();
  if (images.empty()) throw DataError("fine-tuning set is empty");
  if (labels.size() != images.size())
    throw DataError(std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  start.validate();
  const LabeledEmbeddingSet initial{encode(start, images),
                                    std::vector<int>(labels.begin(), labels.end()), class_count};
  initial.validate();

  WholeNetworkResult result{start, init_head(initial, config.head), {}};
  const bool tune_encoder = config.encoder_learning_rate > 0.0;
  AdamConfig encoder_adam = config.head.adam;
  encoder_adam.learning_rate = config.encoder_learning_rate;
  AdamState encoder_state;

  run_epochs(images.size(), config.head, result.report, [&](std::span<const std::size_t> batch) {
    const auto batch_images = gather(images, batch);
    const auto batch_labels = gather(labels, batch);
    if (!tune_encoder) {
      ParamSet grads = result.head.params.zeros_like();
      const double loss = head_loss_gradient(result.head, initial.subset(batch).embeddings,
                                             batch_labels, grads);
      adam_step(result.head.params, grads, result.head.optimizer, config.head.adam);
      return loss;
    }
    const WholeNetworkGradient g =
        whole_network_gradient(result.encoder, result.head, batch_images, batch_labels);
    adam_step(result.head.params, g.head, result.head.optimizer, config.head.adam);
    // Projector gradients are zero, so Adam leaves those tensors untouched.
    adam_step(result.encoder.params, g.encoder, encoder_state, encoder_adam);
    return g.loss;
  });
  const LabeledEmbeddingSet tuned{encode(result.encoder, images), initial.labels, class_count};
  result.report.accuracy = evaluate(result.head, tuned);
  return result;
}

std::vector<FractionResult> whole_network_label_efficiency(const EncoderCheckpoint& start,
                                                           std::span<const Image> images,
                                                           std::span<const int> labels, int class_count,
                                                           std::span<const double> fractions,
                                                           const WholeNetworkConfig& config,
                                                           double test_fraction) {
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ParameterError("fractions must lie in (0, 1]");
  config.validate();
  if (labels.size() != images.size())
    throw DataError(std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  const std::uint64_t seed = config.head.seed;
  const auto [pool, held] =
      stratified_split_indices(labels, class_count, test_fraction, derive_seed({seed, 0x5e1}));
  const auto pool_labels = gather(labels, pool);
  const auto test_images = gather(images, held);
  const auto test_labels = gather(labels, held);

  std::vector<FractionResult> results;
  for (double f : fractions) {
    const auto picked = stratified_subsample(pool_labels, class_count, f, derive_seed({seed, 0xf4c}));
    std::vector<std::size_t> rows;
    for (std::size_t k : picked) rows.push_back(pool[k]);
    const auto train_images = gather(images, rows);
    const auto train_labels = gather(labels, rows);
    WholeNetworkResult run =
        finetune_whole_network(start, train_images, train_labels, class_count, config);
    const LabeledEmbeddingSet test{encode(run.encoder, test_images), test_labels, class_count};
    FractionResult r;
    r.fraction = f;
    r.accuracy = evaluate(run.head, test);
    r.train_size = rows.size();
    r.test_size = held.size();
    r.report = std::move(run.report);
    results.push_back(std::move(r));
  }
  return results;
}

std::string run_report_csv(const RunReport& report) {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, report.loss_curve[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "# accuracy=%.17g,epochs_to_threshold=", report.accuracy);
  out += buf;
  out += report.epochs_to_threshold ? std::to_string(*report.epochs_to_threshold) : "none";
  out += '\n';
  return out;
}

}  // namespace agsv
