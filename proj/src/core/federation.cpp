#include "federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace fedddl::federation {

namespace {

constexpr std::uint64_t kTagClient = 21;
constexpr std::uint64_t kTagSample = 22;
constexpr std::uint64_t kTagInit = 23;
constexpr std::uint64_t kTagLocalBatches = 24;
constexpr std::uint64_t kTagCounterfactual = 25;
constexpr std::uint64_t kTagCounterfactualBatches = 26;

using numerics::Gradients;
using numerics::Tensor;

void check_finite(double loss, int client, std::size_t round) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::NonFinite, "client " + std::to_string(client) + " diverged in round " +
                                          std::to_string(round));
  }
}

std::vector<scenegen::Scene> as_scenes(const deconfound::CounterfactualSet& set) {
  std::vector<scenegen::Scene> scenes;
  scenes.reserve(set.samples.size());
  for (const auto& s : set.samples) scenes.push_back({s.pixels, s.label, {}, -1});
  return scenes;
}

std::optional<debias::PrototypeBank> client_prototypes(const ClientState& client, const ModelParams& global,
                                                       const ModelParams& local, std::size_t round,
                                                       const TrainingConfig& cfg) {
  const ModelParams& source = cfg.prototype_source == PrototypeSource::Received ? global : local;
  return debias::local_prototypes(source, client.objects_by_class, client.id, round);
}

}  // namespace

std::vector<ClientState> make_clients(const scenegen::FederatedDataset& dataset, std::uint64_t seed) {
  std::vector<ClientState> clients;
  clients.reserve(dataset.clients.size());
  for (std::size_t k = 0; k < dataset.clients.size(); ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.scenes = dataset.clients[k];
    c.seed = derive_seed(seed, {kTagClient, k});
    c.decompositions.reserve(c.scenes.size());
    for (const auto& s : c.scenes) {
      c.decompositions.push_back(deconfound::decompose(s));
      c.objects_by_class[s.label].push_back(c.decompositions.back().object);
    }
    clients.push_back(std::move(c));
  }
  return clients;
}

std::vector<int> sample_clients(std::size_t client_count, double fraction, std::uint64_t seed,
                                std::size_t round) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "sample_fraction must lie in (0, 1]");
  }
  const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(client_count)));
  const std::size_t count = std::min(wanted, client_count);
  if (count == 0) throw Error(ErrorCode::NoClientsSelected, "no clients available for sampling");
  std::vector<int> ids(client_count);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, {kTagSample, round}));
  rng.shuffle(std::span<int>(ids));
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ModelParams aggregate_params(std::span<const ModelParams* const> params, std::span<const std::size_t> sizes,
                             Aggregation mode) {
  if (params.empty()) throw Error(ErrorCode::NoClientsSelected, "nothing to aggregate");
  if (mode == Aggregation::Weighted && sizes.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted aggregation needs one size per client");
  }
  const ModelParams& first = *params.front();
  for (const ModelParams* p : params) {
    if (!Gradients::zeros_like(first).congruent_with(*p)) {
      throw Error(ErrorCode::ShapeMismatch, "client parameters are not shape-congruent");
    }
  }
  std::vector<double> weights(params.size(), 1.0);
  if (mode == Aggregation::Weighted) {
    const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidConfig, "client sizes sum to zero");
    for (std::size_t k = 0; k < params.size(); ++k) weights[k] = static_cast<double>(sizes[k]) / total;
  }
  ModelParams out = first;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto blend = [&](auto member) {
      Tensor& dst = out.layers[l].*member;
      for (std::size_t i = 0; i < dst.size(); ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k) {
          const double v = (params[k]->layers[l].*member)[i];
          acc += mode == Aggregation::Weighted ? weights[k] * v : v;
        }
        dst[i] = mode == Aggregation::Weighted ? acc : acc / static_cast<double>(params.size());
      }
    };
    blend(&numerics::DenseLayer::weight);
    blend(&numerics::DenseLayer::bias);
  }
  return out;
}

ClientUpdate train_client_fedavg(const ClientState& client, const ModelParams& global, std::size_t round,
                                 const TrainingConfig& cfg) {
  ModelParams theta = global;
  double loss_sum = 0.0;
  std::size_t steps = 0;
  const std::uint64_t batch_seed = derive_seed(client.seed, {kTagLocalBatches, round});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& batch : scenegen::batches(client.scenes, cfg.batch_size, batch_seed, e)) {
      auto step = numerics::backward(theta, batch.inputs, batch.labels);
      check_finite(step.loss, client.id, round);
      numerics::sgd_step_inplace(theta, step.grads, cfg.lr, cfg.weight_decay);
      loss_sum += step.loss;
      ++steps;
    }
  }
  ClientUpdate update;
  update.client = client.id;
  update.params = std::move(theta);
  update.sample_count = client.scenes.size();
  update.loss_j = steps ? loss_sum / static_cast<double>(steps) : 0.0;
  return update;
}

StepObjective objective_step(const ModelParams& theta, const Tensor& inputs, std::span<const int> labels,
                             const Tensor* cf_inputs, std::span<const int> cf_labels,
                             const debias::PrototypeBank* bank, double lambda, double tau) {
  const auto trace1 = numerics::forward_traced(theta, inputs);
  const auto ce1 = numerics::softmax_cross_entropy(trace1.output.logits, labels);
  StepObjective out;
  out.loss_j = ce1.loss;

  std::optional<numerics::ForwardTrace> trace2;
  numerics::LossAndGrad ce2;
  if (cf_inputs) {
    trace2 = numerics::forward_traced(theta, *cf_inputs);
    ce2 = numerics::softmax_cross_entropy(trace2->output.logits, cf_labels);
    out.loss_j += ce2.loss;
  }

  std::optional<Tensor> dfeat1;
  std::optional<Tensor> dfeat2;
  if (bank && lambda > 0.0 && !bank->prototypes.empty()) {
    // L_CR over the features of both batches.
    const std::size_t n1 = labels.size();
    const std::size_t n2 = cf_inputs ? cf_labels.size() : 0;
    const std::size_t dim = theta.feature_dim();
    Tensor feats = Tensor::matrix(n1 + n2, dim);
    std::vector<int> all(labels.begin(), labels.end());
    std::copy(trace1.output.features.data().begin(), trace1.output.features.data().end(), feats.data().begin());
    if (cf_inputs) {
      std::copy(trace2->output.features.data().begin(), trace2->output.features.data().end(),
                feats.data().begin() + static_cast<std::ptrdiff_t>(n1 * dim));
      all.insert(all.end(), cf_labels.begin(), cf_labels.end());
    }
    auto cr = debias::contrastive_loss(feats, all, *bank, tau);
    for (double& v : cr.dfeatures.data()) v *= lambda;
    dfeat1 = Tensor::matrix(n1, dim);
    std::copy_n(cr.dfeatures.data().begin(), n1 * dim, dfeat1->data().begin());
    if (cf_inputs) {
      dfeat2 = Tensor::matrix(n2, dim);
      std::copy_n(cr.dfeatures.data().begin() + static_cast<std::ptrdiff_t>(n1 * dim), n2 * dim,
                  dfeat2->data().begin());
    }
    out.loss_cr = cr.loss;
    out.regularized = true;
  }

  out.grads = numerics::backprop(theta, trace1, ce1.dlogits, dfeat1 ? &*dfeat1 : nullptr);
  if (cf_inputs) out.grads.add(numerics::backprop(theta, *trace2, ce2.dlogits, dfeat2 ? &*dfeat2 : nullptr));
  return out;
}

ClientUpdate train_client(const ClientState& client, const ModelParams& global, std::size_t round,
                          const debias::PrototypeBank* bank, const TrainingConfig& cfg) {
  if (cfg.method == Method::FedAvg) return train_client_fedavg(client, global, round, cfg);

  ModelParams theta = global;
  std::vector<scenegen::Scene> counterfactuals;
  if (cfg.counterfactuals) {
    counterfactuals = as_scenes(deconfound::build_counterfactual_set(
        client.decompositions, cfg.counterfactual, derive_seed(client.seed, {kTagCounterfactual, round})));
  }
  const bool regularize = round > 1 && cfg.lambda > 0.0 && bank && !bank->prototypes.empty();

  double loss_j_sum = 0.0;
  double loss_cr_sum = 0.0;
  std::size_t steps = 0;
  std::size_t cr_steps = 0;
  const std::uint64_t local_seed = derive_seed(client.seed, {kTagLocalBatches, round});
  const std::uint64_t cf_seed = derive_seed(client.seed, {kTagCounterfactualBatches, round});
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto local = scenegen::batches(client.scenes, cfg.batch_size, local_seed, e);
    std::vector<scenegen::Batch> cf;
    if (!counterfactuals.empty()) cf = scenegen::batches(counterfactuals, cfg.batch_size, cf_seed, e);
    // The shorter stream cycles so every step sees both loss terms.
    const std::size_t count = std::max(local.size(), cf.size());
    for (std::size_t s = 0; s < count; ++s) {
      const auto& z1 = local[s % local.size()];
      const scenegen::Batch* z2 = cf.empty() ? nullptr : &cf[s % cf.size()];
      auto step = objective_step(theta, z1.inputs, z1.labels, z2 ? &z2->inputs : nullptr,
                                 z2 ? std::span<const int>(z2->labels) : std::span<const int>{},
                                 regularize ? bank : nullptr, cfg.lambda, cfg.tau);
      const double loss_j = step.loss_j;
      if (step.regularized) {
        loss_cr_sum += step.loss_cr;
        ++cr_steps;
      }
      Gradients& grads = step.grads;
      check_finite(loss_j, client.id, round);
      numerics::sgd_step_inplace(theta, grads, cfg.lr, cfg.weight_decay);
      loss_j_sum += loss_j;
      ++steps;
    }
  }

  ClientUpdate update;
  update.client = client.id;
  update.sample_count = client.scenes.size();
  update.prototypes = client_prototypes(client, global, theta, round, cfg);
  update.params = std::move(theta);
  update.loss_j = steps ? loss_j_sum / static_cast<double>(steps) : 0.0;
  update.loss_cr = cr_steps ? loss_cr_sum / static_cast<double>(cr_steps) : 0.0;
  return update;
}

RoundResult run_round(std::size_t round, const ModelParams& global, const debias::PrototypeBank* bank,
                      std::span<ClientState> clients, const TrainingConfig& cfg, std::uint64_t seed) {
  if (round < 1) throw Error(ErrorCode::InvalidConfig, "rounds are numbered from 1");
  // Canonical order by client id, whatever order the caller holds them in.
  std::vector<ClientState*> by_id;
  for (auto& c : clients) by_id.push_back(&c);
  std::sort(by_id.begin(), by_id.end(), [](auto* a, auto* b) { return a->id < b->id; });

  RoundResult result;
  result.round = round;
  const auto picked = sample_clients(by_id.size(), cfg.sample_fraction, seed, round);
  std::vector<ClientState*> selected;
  for (int idx : picked) {
    selected.push_back(by_id[static_cast<std::size_t>(idx)]);
    result.selected.push_back(selected.back()->id);
  }

  std::vector<ClientUpdate> updates(selected.size());
  if (cfg.parallel_clients && selected.size() > 1) {
    std::vector<std::future<ClientUpdate>> jobs;
    for (ClientState* c : selected) {
      jobs.push_back(std::async(std::launch::async, [&, c] { return train_client(*c, global, round, bank, cfg); }));
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) updates[i] = jobs[i].get();
  } else {
    for (std::size_t i = 0; i < selected.size(); ++i) updates[i] = train_client(*selected[i], global, round, bank, cfg);
  }

  // Server side: only ClientUpdate values are consumed from here on.
  std::vector<const ModelParams*> params;
  std::vector<std::size_t> sizes;
  std::vector<debias::PrototypeBank> banks;
  for (const auto& u : updates) {
    params.push_back(&u.params);
    sizes.push_back(u.sample_count);
    if (u.prototypes) banks.push_back(*u.prototypes);
    result.stats.push_back({u.client, u.loss_j, u.loss_cr});
  }
  result.params = aggregate_params(params, sizes, cfg.aggregation);
  if (!banks.empty()) {
    result.prototypes = debias::aggregate_prototypes(banks);
    result.prototypes->round = round;
  }
  for (std::size_t i = 0; i < selected.size(); ++i) selected[i]->params = std::move(updates[i].params);
  return result;
}

ModelParams initial_params(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes) {
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.feature_dim);
  sizes.push_back(classes);
  return numerics::init_params(derive_seed(cfg.seed, {kTagInit}), sizes);
}

ExperimentResult run_experiment(const scenegen::FederatedDataset& dataset, const ExperimentConfig& cfg,
                                const RoundCallback& on_round) {
  if (cfg.rounds < 1) throw Error(ErrorCode::InvalidConfig, "rounds must be >= 1");
  auto clients = make_clients(dataset, cfg.seed);
  ExperimentResult result;
  result.global = initial_params(cfg, dataset.spec.height * dataset.spec.width, dataset.spec.classes);
  std::optional<debias::PrototypeBank> bank;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundResult round = run_round(t, result.global, bank ? &*bank : nullptr, clients, cfg.training, cfg.seed);
    result.global = round.params;
    bank = round.prototypes;
    if (on_round) on_round(round, clients);
    result.rounds.push_back(std::move(round));
  }
  for (const auto& c : clients) result.local.push_back(c.params);
  return result;
}

}  // namespace fedddl::federation
