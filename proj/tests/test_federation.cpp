#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "error.hpp"
#include "evaluation.hpp"
#include "federation.hpp"
#include "support/oracles.hpp"

using namespace fedddl;
using namespace fedddl::federation;
using numerics::Tensor;

namespace {

scenegen::FederatedDataset tiny_dataset(std::size_t clients = 3, std::size_t per_client = 60) {
  scenegen::DatasetSpec s;
  s.seed = 3;
  s.clients = clients;
  s.classes = 3;
  s.per_client_count = per_client;
  s.test_count = 30;
  return scenegen::generate(s);
}

ExperimentConfig tiny_config(Method method) {
  ExperimentConfig cfg;
  cfg.seed = 9;
  cfg.rounds = 3;
  cfg.hidden = {8};
  cfg.feature_dim = 4;
  cfg.training.method = method;
  cfg.training.epochs = 1;
  cfg.training.batch_size = 16;
  return cfg;
}

ModelParams scalar_params(double w) {
  ModelParams p;
  p.layers.push_back({Tensor({1, 1}, {w}), Tensor({1}, {w})});
  p.layers.push_back({Tensor({1, 1}, {w}), Tensor({1}, {w})});
  return p;
}

}  // namespace

TEST_CASE("aggregate_params: uniform, weighted and single-client cases") {
  const auto a = scalar_params(2.0);
  const auto b = scalar_params(4.0);
  std::vector<const ModelParams*> both{&a, &b};
  const std::vector<std::size_t> sizes{1, 3};
  CHECK(aggregate_params(both, sizes, Aggregation::Uniform).layers[0].weight[0] == 3.0);
  CHECK(aggregate_params(both, sizes, Aggregation::Weighted).layers[0].weight[0] == 3.5);
  CHECK(aggregate_params(both, sizes, Aggregation::Weighted).layers[1].bias[0] == 3.5);
  std::vector<const ModelParams*> one{&a};
  const std::vector<std::size_t> size1{5};
  CHECK(aggregate_params(one, size1, Aggregation::Uniform) == a);
  CHECK(aggregate_params(one, size1, Aggregation::Weighted) == a);
}

TEST_CASE("aggregate_params: incongruent shapes are rejected") {
  const auto a = scalar_params(1.0);
  ModelParams b;
  b.layers.push_back({Tensor({2, 1}, {1, 1}), Tensor({2}, {0, 0})});
  b.layers.push_back({Tensor({1, 2}, {1, 1}), Tensor({1}, {0})});
  std::vector<const ModelParams*> both{&a, &b};
  CHECK_THROWS_AS(aggregate_params(both, std::vector<std::size_t>{1, 1}, Aggregation::Uniform), Error);
  std::vector<const ModelParams*> none;
  CHECK_THROWS_AS(aggregate_params(none, std::vector<std::size_t>{}, Aggregation::Uniform), Error);
}

TEST_CASE("sample_clients: count, order and determinism") {
  const auto all = sample_clients(7, 1.0, 1, 1);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  const auto some = sample_clients(7, 0.3, 1, 2);
  CHECK(some.size() == 3);
  CHECK(std::is_sorted(some.begin(), some.end()));
  CHECK(some == sample_clients(7, 0.3, 1, 2));
  CHECK_THROWS_AS(sample_clients(7, 0.0, 1, 1), Error);
  CHECK_THROWS_AS(sample_clients(0, 1.0, 1, 1), Error);
}

TEST_CASE("run_round: at t = 1 the contrastive weight has no effect") {
  const auto ds = tiny_dataset();
  auto cfg = tiny_config(Method::FedDDL);
  const auto theta0 = initial_params(cfg, 256, 3);
  // A bank is supplied on purpose: the round-1 branch must ignore it.
  auto clients = make_clients(ds, cfg.seed);
  const auto bank = debias::local_prototypes(theta0, clients[0].objects_by_class, 0, 0);

  cfg.training.lambda = 0.0;
  auto c1 = make_clients(ds, cfg.seed);
  const auto r0 = run_round(1, theta0, &bank, c1, cfg.training, cfg.seed);
  cfg.training.lambda = 1e6;
  auto c2 = make_clients(ds, cfg.seed);
  const auto r1 = run_round(1, theta0, &bank, c2, cfg.training, cfg.seed);
  CHECK(r0.params == r1.params);

  // In round 2 the same bank does change the result.
  auto c3 = make_clients(ds, cfg.seed);
  const auto r2 = run_round(2, theta0, &bank, c3, cfg.training, cfg.seed);
  CHECK_FALSE(r2.params == r1.params);
}

TEST_CASE("run_round: zero local epochs leave the global model unchanged") {
  const auto ds = tiny_dataset(2);
  auto cfg = tiny_config(Method::FedDDL);
  cfg.training.epochs = 0;
  const auto theta0 = initial_params(cfg, 256, 3);
  auto clients = make_clients(ds, cfg.seed);
  const auto r = run_round(1, theta0, nullptr, clients, cfg.training, cfg.seed);
  CHECK(r.params == theta0);
}

TEST_CASE("run_round: client list order does not matter") {
  const auto ds = tiny_dataset();
  auto cfg = tiny_config(Method::FedDDL);
  const auto theta0 = initial_params(cfg, 256, 3);
  auto forward_order = make_clients(ds, cfg.seed);
  auto reversed = make_clients(ds, cfg.seed);
  std::reverse(reversed.begin(), reversed.end());
  const auto a = run_round(1, theta0, nullptr, forward_order, cfg.training, cfg.seed);
  const auto b = run_round(1, theta0, nullptr, reversed, cfg.training, cfg.seed);
  CHECK(a.params == b.params);
  REQUIRE(a.prototypes);
  CHECK(*a.prototypes == *b.prototypes);
  const auto a2 = run_round(2, a.params, &*a.prototypes, forward_order, cfg.training, cfg.seed);
  const auto b2 = run_round(2, b.params, &*b.prototypes, reversed, cfg.training, cfg.seed);
  CHECK(a2.params == b2.params);
}

TEST_CASE("run_round: parallel clients give the same result as sequential") {
  const auto ds = tiny_dataset();
  auto cfg = tiny_config(Method::FedDDL);
  const auto theta0 = initial_params(cfg, 256, 3);
  auto seq = make_clients(ds, cfg.seed);
  auto par = make_clients(ds, cfg.seed);
  const auto a = run_round(1, theta0, nullptr, seq, cfg.training, cfg.seed);
  cfg.training.parallel_clients = true;
  const auto b = run_round(1, theta0, nullptr, par, cfg.training, cfg.seed);
  CHECK(a.params == b.params);
}

TEST_CASE("run_round: the global bank comes only from this round's local banks") {
  const auto ds = tiny_dataset();
  auto cfg = tiny_config(Method::FedDDL);
  const auto theta0 = initial_params(cfg, 256, 3);
  auto clients = make_clients(ds, cfg.seed);
  const auto r = run_round(1, theta0, nullptr, clients, cfg.training, cfg.seed);
  REQUIRE(r.prototypes);
  CHECK(r.prototypes->scope == debias::BankScope::Global);
  CHECK(r.prototypes->round == 1);
  // Local banks use the received parameters, so the oracle is a direct recompute.
  std::vector<debias::PrototypeBank> banks;
  for (const auto& c : clients) banks.push_back(debias::local_prototypes(theta0, c.objects_by_class, c.id, 1));
  CHECK(r.prototypes->prototypes == debias::aggregate_prototypes(banks).prototypes);
}

TEST_CASE("run_round: partial sampling trains only the selected clients") {
  const auto ds = tiny_dataset(4);
  auto cfg = tiny_config(Method::FedAvg);
  cfg.training.sample_fraction = 0.5;
  const auto theta0 = initial_params(cfg, 256, 3);
  auto clients = make_clients(ds, cfg.seed);
  const auto r = run_round(1, theta0, nullptr, clients, cfg.training, cfg.seed);
  CHECK(r.selected.size() == 2);
  std::size_t trained = 0;
  for (const auto& c : clients) trained += c.params.has_value();
  CHECK(trained == 2);
}

TEST_CASE("fedddl with no counterfactuals and lambda 0 matches the FedAvg path") {
  const auto ds = tiny_dataset();
  auto avg = tiny_config(Method::FedAvg);
  avg.rounds = 5;
  auto ddl = tiny_config(Method::FedDDL);
  ddl.rounds = 5;
  ddl.training.lambda = 0.0;
  ddl.training.counterfactuals = false;
  std::vector<ModelParams> traj_avg, traj_ddl;
  run_experiment(ds, avg, [&](const RoundResult& r, auto) { traj_avg.push_back(r.params); });
  run_experiment(ds, ddl, [&](const RoundResult& r, auto) { traj_ddl.push_back(r.params); });
  REQUIRE(traj_avg.size() == 5);
  for (std::size_t t = 0; t < 5; ++t) CHECK(traj_avg[t] == traj_ddl[t]);

  // The direct FedAvg client update agrees with the dispatching entry point.
  auto clients = make_clients(ds, avg.seed);
  const auto theta0 = initial_params(avg, 256, 3);
  CHECK(train_client_fedavg(clients[0], theta0, 1, ddl.training).params ==
        train_client(clients[0], theta0, 1, nullptr, ddl.training).params);
}

TEST_CASE("fedavg runs carry no prototype machinery") {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_config(Method::FedAvg);
  const auto res = run_experiment(ds, cfg);
  for (const auto& r : res.rounds) {
    CHECK_FALSE(r.prototypes);
    for (const auto& s : r.stats) CHECK(s.loss_cr == 0.0);
  }
}

TEST_CASE("run_experiment: one round means one aggregation and no contrastive term") {
  const auto ds = tiny_dataset();
  auto cfg = tiny_config(Method::FedDDL);
  cfg.rounds = 1;
  const auto res = run_experiment(ds, cfg);
  REQUIRE(res.rounds.size() == 1);
  for (const auto& s : res.rounds[0].stats) CHECK(s.loss_cr == 0.0);
  CHECK(res.global == res.rounds[0].params);
}

TEST_CASE("run_experiment: contrastive term is active after the first round") {
  const auto ds = tiny_dataset();
  const auto res = run_experiment(ds, tiny_config(Method::FedDDL));
  REQUIRE(res.rounds.size() == 3);
  for (const auto& s : res.rounds[1].stats) CHECK(s.loss_cr > 0.0);
}

TEST_CASE("run_experiment: deterministic and round numbers increase") {
  const auto ds = tiny_dataset();
  const auto cfg = tiny_config(Method::FedDDL);
  const auto a = run_experiment(ds, cfg);
  const auto b = run_experiment(ds, cfg);
  CHECK(a.global == b.global);
  for (std::size_t i = 0; i < a.rounds.size(); ++i) CHECK(a.rounds[i].round == i + 1);
  REQUIRE(a.local.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(a.local[k]);
    CHECK(*a.local[k] == *b.local[k]);
  }
}

TEST_CASE("single separable client: global equals local and the loss goes to zero") {
  // Two classes, rho = 1 and a single client: object glyph and background both
  // separate the classes, so the training loss can be driven close to zero.
  scenegen::DatasetSpec s;
  s.seed = 4;
  s.clients = 1;
  s.classes = 2;
  s.per_client_count = 40;
  s.test_count = 10;
  s.rho = 1.0;
  const auto ds = scenegen::generate(s);
  ExperimentConfig cfg;
  cfg.seed = 2;
  cfg.rounds = 2;
  cfg.hidden = {16};
  cfg.feature_dim = 8;
  cfg.training.method = Method::FedAvg;
  cfg.training.epochs = 150;
  cfg.training.batch_size = 8;
  cfg.training.lr = 0.1;
  cfg.training.weight_decay = 0.0;
  const auto res = run_experiment(ds, cfg);
  REQUIRE(res.local[0]);
  CHECK(res.global == *res.local[0]);
  CHECK(res.rounds.back().stats[0].loss_j < 0.01);
  CHECK(harness::top1_accuracy(res.global, ds.clients[0]) == 1.0);
}

TEST_CASE("the server-side message carries only parameters, prototypes and scalars") {
  // Structured binding pins the exact field list: adding a field breaks this.
  ClientUpdate u;
  auto& [client, params, count, prototypes, loss_j, loss_cr] = u;
  static_assert(std::is_same_v<std::remove_reference_t<decltype(client)>, int>);
  static_assert(std::is_same_v<std::remove_reference_t<decltype(params)>, ModelParams>);
  static_assert(std::is_same_v<std::remove_reference_t<decltype(count)>, std::size_t>);
  static_assert(std::is_same_v<std::remove_reference_t<decltype(prototypes)>, std::optional<debias::PrototypeBank>>);
  static_assert(std::is_same_v<std::remove_reference_t<decltype(loss_j)>, double>);
  static_assert(std::is_same_v<std::remove_reference_t<decltype(loss_cr)>, double>);
  CHECK(count == 0);

  const auto ds = tiny_dataset(1);
  auto cfg = tiny_config(Method::FedDDL);
  auto clients = make_clients(ds, cfg.seed);
  const auto theta0 = initial_params(cfg, 256, 3);
  const auto update = train_client(clients[0], theta0, 1, nullptr, cfg.training);
  CHECK(update.sample_count == clients[0].scenes.size());
  REQUIRE(update.prototypes);
  for (const auto& [cls, p] : update.prototypes->prototypes) CHECK(p.size() == 4);
}

TEST_CASE("training reports a non-finite loss as an error") {
  const auto ds = tiny_dataset(1);
  auto cfg = tiny_config(Method::FedAvg);
  cfg.training.lr = 1e6;
  cfg.training.epochs = 3;
  auto clients = make_clients(ds, cfg.seed);
  auto theta = initial_params(cfg, 256, 3);
  for (auto& l : theta.layers) {
    for (double& w : l.weight.data()) w *= 1e3;
  }
  try {
    train_client(clients[0], theta, 1, nullptr, cfg.training);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFinite);
  }
}
