#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "debias.hpp"
#include "deconfound.hpp"
#include "numerics.hpp"
#include "scenegen.hpp"

namespace fedddl::federation {

using numerics::ModelParams;

enum class Method { FedAvg, FedDDL };
enum class Aggregation { Uniform, Weighted };
// Which parameters compute the local prototypes: the round's received global
// model (the default) or the client's freshly trained local model.
enum class PrototypeSource { Received, Local };

struct TrainingConfig {
  Method method = Method::FedDDL;
  std::size_t epochs = 10;
  double lr = 0.01;
  double weight_decay = 0.01;
  std::size_t batch_size = 64;
  double sample_fraction = 1.0;
  Aggregation aggregation = Aggregation::Uniform;
  double lambda = 1.0;
  double tau = 0.07;
  bool counterfactuals = true;
  deconfound::CounterfactualOptions counterfactual;
  PrototypeSource prototype_source = PrototypeSource::Received;
  bool parallel_clients = false;
};

struct ClientState {
  int id = 0;
  std::vector<scenegen::Scene> scenes;
  std::vector<deconfound::Decomposition> decompositions;
  std::map<int, std::vector<numerics::Tensor>> objects_by_class;
  std::optional<ModelParams> params;  // last trained local model
  std::uint64_t seed = 0;
};

// Everything a client sends to the server. Scene pixels and masks never leave
// the client; only parameters, prototypes and scalar statistics do.
struct ClientUpdate {
  int client = 0;
  ModelParams params;
  std::size_t sample_count = 0;
  std::optional<debias::PrototypeBank> prototypes;
  double loss_j = 0.0;   // mean joint (or plain CE) loss over steps
  double loss_cr = 0.0;  // mean contrastive loss over steps where it was evaluated
};

struct ClientRoundStats {
  int client = 0;
  double loss_j = 0.0;
  double loss_cr = 0.0;
};

struct RoundResult {
  std::size_t round = 0;
  ModelParams params;
  std::optional<debias::PrototypeBank> prototypes;
  std::vector<int> selected;
  std::vector<ClientRoundStats> stats;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t rounds = 50;
  std::vector<std::size_t> hidden = {64};
  std::size_t feature_dim = 32;
  TrainingConfig training;
};

struct ExperimentResult {
  std::vector<RoundResult> rounds;
  ModelParams global;
  std::vector<std::optional<ModelParams>> local;  // per client, final local model
};

std::vector<ClientState> make_clients(const scenegen::FederatedDataset& dataset, std::uint64_t seed);

// Seeded draw of ceil(fraction * K) client ids, returned in ascending order.
std::vector<int> sample_clients(std::size_t client_count, double fraction, std::uint64_t seed,
                                std::size_t round);

ModelParams aggregate_params(std::span<const ModelParams* const> params, std::span<const std::size_t> sizes,
                             Aggregation mode);

struct StepObjective {
  double loss_j = 0.0;   // CE on the local batch plus CE on the counterfactual batch
  double loss_cr = 0.0;  // unweighted contrastive loss; 0 when not evaluated
  bool regularized = false;
  numerics::Gradients grads;  // of loss_j + lambda * loss_cr
};

// One local step's objective and gradient. cf_inputs may be null; bank null
// (or lambda 0) drops the contrastive term.
StepObjective objective_step(const ModelParams& theta, const numerics::Tensor& inputs, std::span<const int> labels,
                             const numerics::Tensor* cf_inputs, std::span<const int> cf_labels,
                             const debias::PrototypeBank* bank, double lambda, double tau);

// One client's local work for round t; bank is U_{G,t-1} (absent at t = 1).
ClientUpdate train_client(const ClientState& client, const ModelParams& global, std::size_t round,
                          const debias::PrototypeBank* bank, const TrainingConfig& cfg);

// Plain FedAvg local update: CE on local batches only.
ClientUpdate train_client_fedavg(const ClientState& client, const ModelParams& global, std::size_t round,
                                 const TrainingConfig& cfg);

RoundResult run_round(std::size_t round, const ModelParams& global, const debias::PrototypeBank* bank,
                      std::span<ClientState> clients, const TrainingConfig& cfg, std::uint64_t seed);

using RoundCallback = std::function<void(const RoundResult&, std::span<const ClientState>)>;

ModelParams initial_params(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes);

ExperimentResult run_experiment(const scenegen::FederatedDataset& dataset, const ExperimentConfig& cfg,
                                const RoundCallback& on_round = {});

}  // namespace fedddl::federation
