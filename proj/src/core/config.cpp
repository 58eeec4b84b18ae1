#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "error.hpp"

namespace fedddl::harness {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::InvalidConfig, field + ": " + why);
}

// Walks one JSON object, remembering which keys were read so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const Json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_->is_object()) bad(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const char* key) const { return node_ && node_->contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(has(key) ? &node_->at(key) : nullptr, field(key));
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const Json& v = node_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) bad(field(key), "expected true or false");
        out = v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) bad(field(key), "expected a string");
        out = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) bad(field(key), "expected a number");
        out = v.get<T>();
        if (!std::isfinite(out)) bad(field(key), "must be finite");
      } else {
        if (!v.is_number_unsigned()) bad(field(key), "expected a non-negative integer");
        out = v.get<T>();
      }
    } catch (const Json::exception& e) {
      bad(field(key), e.what());
    }
  }

  void read_sizes(const char* key, std::vector<std::size_t>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const Json& v = node_->at(key);
    if (!v.is_array()) bad(field(key), "expected an array of positive integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) bad(field(key), "expected positive integers");
      out.push_back(e.get<std::size_t>());
    }
  }

  void read_transforms(const char* key, std::vector<deconfound::Transform>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    const Json& v = node_->at(key);
    if (!v.is_array() || v.empty()) bad(field(key), "expected a nonempty array of transform names");
    out.clear();
    for (const auto& e : v) {
      deconfound::Transform t{};
      if (!e.is_string() || !deconfound::parse_transform(e.get<std::string>(), t)) {
        bad(field(key), "unknown transform " + e.dump());
      }
      out.push_back(t);
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& [key, value] : node_->items()) {
      if (!seen_.count(key)) bad(field(key.c_str()), "unknown key");
    }
  }

  bool present() const { return node_ != nullptr; }
  const std::string& path() const { return path_; }

 private:
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* node_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

std::string method_name(federation::Method m) { return m == federation::Method::FedAvg ? "fedavg" : "fedddl"; }

RunConfig default_config() {
  RunConfig cfg;
  cfg.dataset.clients = 7;
  cfg.experiment.rounds = 50;
  cfg.experiment.hidden = {64};
  cfg.experiment.feature_dim = 32;
  auto& t = cfg.experiment.training;
  t.method = federation::Method::FedDDL;
  t.epochs = 10;
  t.lr = 0.01;
  t.weight_decay = 0.01;
  t.batch_size = 64;
  t.sample_fraction = 1.0;
  t.lambda = 1.0;
  t.tau = 0.07;
  t.counterfactual.eta = 3;
  t.counterfactual.count_per_object = 1;
  return cfg;
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    bad(std::string(assignment), "override must look like key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) bad(key, "empty path component");
    if (!node->is_object()) bad(key, "parent is not an object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig parse_config(const Json& doc) {
  RunConfig cfg = default_config();
  Section root(&doc, "");
  root.read("seed", cfg.seed);
  root.read("output_dir", cfg.output_dir);
  root.read("record_wall_time", cfg.record_wall_time);

  std::string method = method_name(cfg.experiment.training.method);
  root.read("method", method);
  auto& t = cfg.experiment.training;
  if (method == "fedavg") {
    t.method = federation::Method::FedAvg;
  } else if (method == "fedddl") {
    t.method = federation::Method::FedDDL;
  } else {
    bad("method", "expected \"fedavg\" or \"fedddl\", got \"" + method + "\"");
  }

  {
    Section d = root.child("dataset");
    auto& s = cfg.dataset;
    d.read("clients", s.clients);
    d.read("classes", s.classes);
    d.read("families", s.families);
    d.read("train_families", s.train_family_count);
    d.read("height", s.height);
    d.read("width", s.width);
    d.read("per_client", s.per_client_count);
    d.read("test", s.test_count);
    d.read("rho", s.rho);
    d.finish();
  }
  {
    Section m = root.child("model");
    m.read_sizes("hidden", cfg.experiment.hidden);
    m.read("feature_dim", cfg.experiment.feature_dim);
    m.finish();
  }
  {
    Section tr = root.child("training");
    tr.read("rounds", cfg.experiment.rounds);
    tr.read("epochs", t.epochs);
    tr.read("lr", t.lr);
    tr.read("weight_decay", t.weight_decay);
    tr.read("batch_size", t.batch_size);
    tr.read("sample_fraction", t.sample_fraction);
    std::string aggregation = t.aggregation == federation::Aggregation::Uniform ? "uniform" : "weighted";
    tr.read("aggregation", aggregation);
    if (aggregation == "uniform") {
      t.aggregation = federation::Aggregation::Uniform;
    } else if (aggregation == "weighted") {
      t.aggregation = federation::Aggregation::Weighted;
    } else {
      bad("training.aggregation", "expected \"uniform\" or \"weighted\"");
    }
    tr.read("parallel_clients", t.parallel_clients);
    tr.finish();
  }
  {
    Section f = root.child("fedddl");
    f.read("lambda", t.lambda);
    f.read("tau", t.tau);
    f.read("eta", t.counterfactual.eta);
    f.read("count_per_object", t.counterfactual.count_per_object);
    f.read("counterfactuals", t.counterfactuals);
    f.read_transforms("transforms", t.counterfactual.transforms);
    std::string source = t.prototype_source == federation::PrototypeSource::Received ? "received" : "local";
    f.read("prototype_source", source);
    if (source == "received") {
      t.prototype_source = federation::PrototypeSource::Received;
    } else if (source == "local") {
      t.prototype_source = federation::PrototypeSource::Local;
    } else {
      bad("fedddl.prototype_source", "expected \"received\" or \"local\"");
    }
    f.finish();
    if (f.present() && t.method == federation::Method::FedAvg) {
      cfg.warnings.push_back("fedddl: section ignored under method fedavg");
    }
  }
  root.finish();

  try {
    cfg.dataset.validate();
  } catch (const Error& e) {
    bad("dataset", e.what());
  }
  cfg.dataset.seed = cfg.seed;
  cfg.experiment.seed = cfg.seed;
  if (cfg.experiment.rounds < 1) bad("training.rounds", "must be >= 1");
  if (t.epochs < 1) bad("training.epochs", "must be >= 1");
  if (!(t.lr > 0.0)) bad("training.lr", "must be > 0");
  if (t.weight_decay < 0.0) bad("training.weight_decay", "must be >= 0");
  if (t.batch_size < 1) bad("training.batch_size", "must be >= 1");
  if (!(t.sample_fraction > 0.0 && t.sample_fraction <= 1.0)) bad("training.sample_fraction", "must lie in (0, 1]");
  if (cfg.experiment.feature_dim < 1) bad("model.feature_dim", "must be >= 1");
  if (t.lambda < 0.0) bad("fedddl.lambda", "must be >= 0");
  if (!(t.tau > 0.0)) bad("fedddl.tau", "must be > 0");
  if (t.counterfactual.eta < 1) bad("fedddl.eta", "must be >= 1");
  if (cfg.output_dir.empty()) bad("output_dir", "must not be empty");
  return cfg;
}

Json read_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("config", "cannot open " + path);
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) bad("config", path + " is not valid JSON");
  return doc;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json doc = path.empty() ? Json::object() : read_config_document(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

Json to_json(const RunConfig& cfg) {
  const auto& s = cfg.dataset;
  const auto& e = cfg.experiment;
  const auto& t = e.training;
  Json transforms = Json::array();
  for (auto op : t.counterfactual.transforms) transforms.push_back(std::string(deconfound::to_string(op)));
  Json doc;
  doc["seed"] = cfg.seed;
  doc["method"] = method_name(t.method);
  doc["output_dir"] = cfg.output_dir;
  doc["record_wall_time"] = cfg.record_wall_time;
  doc["dataset"] = {{"clients", s.clients},       {"classes", s.classes},   {"families", s.families},
                    {"train_families", s.train_family_count}, {"height", s.height},
                    {"width", s.width},           {"per_client", s.per_client_count},
                    {"test", s.test_count},       {"rho", s.rho}};
  doc["model"] = {{"hidden", e.hidden}, {"feature_dim", e.feature_dim}};
  doc["training"] = {{"rounds", e.rounds},
                     {"epochs", t.epochs},
                     {"lr", t.lr},
                     {"weight_decay", t.weight_decay},
                     {"batch_size", t.batch_size},
                     {"sample_fraction", t.sample_fraction},
                     {"aggregation", t.aggregation == federation::Aggregation::Uniform ? "uniform" : "weighted"},
                     {"parallel_clients", t.parallel_clients}};
  doc["fedddl"] = {{"lambda", t.lambda},
                   {"tau", t.tau},
                   {"eta", t.counterfactual.eta},
                   {"count_per_object", t.counterfactual.count_per_object},
                   {"counterfactuals", t.counterfactuals},
                   {"transforms", transforms},
                   {"prototype_source", t.prototype_source == federation::PrototypeSource::Received ? "received" : "local"}};
  return doc;
}

}  // namespace fedddl::harness
