#include "routemlp/strategies.hpp"

#include <algorithm>
#include <set>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"
#include "routemlp/snapshot_io.hpp"

namespace routemlp::strategies {
namespace {

std::vector<Layer> init_layers(std::span<const Index> dims, Rng& rng) {
  std::vector<Layer> out;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    out.push_back(nn::init_dense<double>(dims[i], dims[i + 1], rng));
  }
  return out;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

std::vector<std::string> missing_embeddings(const StrategyModel& model,
                                            std::span<const std::string> participants) {
  std::set<std::string> missing;
  for (const auto& p : participants) {
    if (!model.embedding->contains(p)) missing.insert(p);
  }
  return {missing.begin(), missing.end()};
}

/// Inference logits of `features` along one path.
MatrixXd path_logits(const StrategyModel& model, StrategyModel::Path path, const MatrixXd& features,
                     std::span<const std::string> participants) {
  const auto chain = model.nets[path.net].path(path.head);
  if (!model.embedding) return nn::logits(chain, features);
  const MatrixXd e = model.embedding->lookup(participants);
  return nn::logits(chain, features, nn::SideInput<double>{&e, &model.embedding->projection});
}

/// Cluster per row, validated against the model.
std::vector<int> route_rows(const StrategyModel& model, const RoutingTable* routing,
                              const data::Dataset& rows) {
  if (!uses_routing(model.kind)) return std::vector<int>(rows.size(), 0);
  if (routing == nullptr) {
    throw RoutingError(std::string(to_string(model.kind)) + " requires a routing table");
  }
  if (routing->k != model.k) {
    throw RoutingError("routing table has k=" + std::to_string(routing->k) + ", model has k=" +
                       std::to_string(model.k));
  }
  const auto unrouted = routing->unrouted(rows);
  if (!unrouted.empty()) throw RoutingError("unrouted participants: " + join_ids(unrouted));
  auto clusters = routing->route(rows);
  for (int c : clusters) {
    if (c < 0 || c >= model.k) throw RoutingError("cluster id out of range: " + std::to_string(c));
  }
  return clusters;
}

void require_embeddings(const StrategyModel& model, std::span<const std::string> participants) {
  if (!model.embedding) return;
  const auto missing = missing_embeddings(model, participants);
  if (!missing.empty()) {
    throw ExclusionError("participants without a trained embedding are excluded: " +
                         join_ids(missing));
  }
}

MatrixXd scatter_logits(const StrategyModel& model, const nn::LabeledRows& rows,
                        const std::vector<int>& clusters) {
  MatrixXd out(static_cast<Index>(rows.size()), 2);
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto p = model.dispatch(clusters[i]);
    groups[{p.net, p.head}].push_back(i);
  }
  for (const auto& [key, idx] : groups) {
    const auto sub = rows.subset(idx);
    const MatrixXd z = path_logits(model, {key.first, key.second}, sub.features, sub.participants);
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(idx[i])) = z.row(static_cast<Index>(i));
  }
  return out;
}

std::vector<double> losses_for(const StrategyModel& model, const nn::LabeledRows& rows,
                               const std::vector<int>& clusters) {
  if (rows.size() == 0) return {};
  const auto loss = nn::softmax_cross_entropy(scatter_logits(model, rows, clusters),
                                              std::span<const int>(rows.labels));
  return {loss.per_sample.data(), loss.per_sample.data() + loss.per_sample.size()};
}

}  // namespace

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kBaseline: return "baseline";
    case StrategyKind::kFeatureClustered: return "feature-clustered";
    case StrategyKind::kLossFullySeparated: return "loss-fully-separated";
    case StrategyKind::kLossFinalLayerSeparated: return "loss-final-layer-separated";
    case StrategyKind::kIdEmbedding: return "id-embedding";
  }
  return "unknown";
}

StrategyKind parse_kind(const std::string& name) {
  static const std::map<std::string, StrategyKind> names{
      {"baseline", StrategyKind::kBaseline},
      {"feature-clustered", StrategyKind::kFeatureClustered},
      {"feature2", StrategyKind::kFeatureClustered},
      {"feature4", StrategyKind::kFeatureClustered},
      {"loss-fully-separated", StrategyKind::kLossFullySeparated},
      {"loss-full", StrategyKind::kLossFullySeparated},
      {"loss-final-layer-separated", StrategyKind::kLossFinalLayerSeparated},
      {"loss-final", StrategyKind::kLossFinalLayerSeparated},
      {"id-embedding", StrategyKind::kIdEmbedding},
      {"id-embed", StrategyKind::kIdEmbedding},
  };
  const auto it = names.find(name);
  if (it == names.end()) throw ValidationError("unknown strategy kind '" + name + "'");
  return it->second;
}

bool uses_routing(StrategyKind kind) {
  return kind == StrategyKind::kFeatureClustered || kind == StrategyKind::kLossFullySeparated ||
         kind == StrategyKind::kLossFinalLayerSeparated;
}

bool has_shared_trunk(StrategyKind kind) {
  return kind == StrategyKind::kFeatureClustered || kind == StrategyKind::kLossFinalLayerSeparated;
}

nn::LayerChain<double> RoutedNet::path(std::size_t head) const {
  return nn::chain<double>(std::span<const Layer>(trunk), std::span<const Layer>(heads.at(head)));
}

std::size_t RoutedNet::parameter_count() const {
  std::size_t n = nn::parameter_count<double>(trunk);
  for (const auto& h : heads) n += nn::parameter_count<double>(h);
  return n;
}

MatrixXd EmbeddingTable::lookup(std::span<const std::string> participants) const {
  MatrixXd out(static_cast<Index>(participants.size()), dim());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const auto it = index.find(participants[i]);
    if (it == index.end()) {
      throw ExclusionError("participant " + participants[i] + " has no trained embedding");
    }
    out.row(static_cast<Index>(i)) = vectors.row(it->second);
  }
  return out;
}

StrategyModel::Path StrategyModel::dispatch(int cluster) const {
  if (cluster < 0 || cluster >= k) throw RoutingError("cluster " + std::to_string(cluster) + " out of range");
  const auto c = static_cast<std::size_t>(cluster);
  switch (kind) {
    case StrategyKind::kLossFullySeparated: return {c, 0};
    case StrategyKind::kFeatureClustered:
    case StrategyKind::kLossFinalLayerSeparated: return {0, c};
    default: return {0, 0};
  }
}

std::size_t StrategyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& net : nets) n += net.parameter_count();
  if (embedding) {
    n += static_cast<std::size_t>(embedding->vectors.size() + embedding->projection.size());
  }
  return n;
}

Index StrategyModel::effective_input_dim() const {
  return input_dim + (embedding ? embedding->dim() : 0);
}

StrategyModel build_strategy(StrategyKind kind, int k, std::span<const std::string> roster,
                             const BuildOptions& options) {
  if (options.input_dim < 1) throw ValidationError("build_strategy: input_dim must be >= 1");
  StrategyModel model;
  model.kind = kind;
  model.k = uses_routing(kind) ? k : 1;
  model.input_dim = options.input_dim;
  model.hidden = options.hidden;
  if (model.k < 1) throw ValidationError("build_strategy: k must be >= 1");
  if (has_shared_trunk(kind) && options.hidden.empty()) {
    throw ValidationError("build_strategy: a shared trunk needs at least one hidden layer");
  }
  const auto dims = nn::layer_dims(options.input_dim, options.hidden);

  switch (kind) {
    case StrategyKind::kBaseline:
    case StrategyKind::kIdEmbedding: {
      Rng rng(derive_seed(options.seed, "init/net", 0));
      model.nets.push_back({{}, {init_layers(dims, rng)}});
      break;
    }
    case StrategyKind::kLossFullySeparated: {
      for (int c = 0; c < model.k; ++c) {
        Rng rng(derive_seed(options.seed, "init/net", static_cast<std::size_t>(c)));
        model.nets.push_back({{}, {init_layers(dims, rng)}});
      }
      break;
    }
    case StrategyKind::kFeatureClustered:
    case StrategyKind::kLossFinalLayerSeparated: {
      Rng rng(derive_seed(options.seed, "init/net", 0));
      RoutedNet net;
      net.trunk = init_layers(std::span<const Index>(dims).first(dims.size() - 1), rng);
      for (int c = 0; c < model.k; ++c) {
        net.heads.push_back({nn::init_dense<double>(dims[dims.size() - 2], dims.back(), rng)});
      }
      model.nets.push_back(std::move(net));
      break;
    }
  }

  if (kind == StrategyKind::kIdEmbedding) {
    if (roster.empty()) throw ValidationError("build_strategy: ID embedding needs a roster");
    if (options.embedding_dim < 1) throw ValidationError("build_strategy: embedding_dim must be >= 1");
    EmbeddingTable table;
    std::set<std::string> unique(roster.begin(), roster.end());
    table.ids.assign(unique.begin(), unique.end());
    for (std::size_t i = 0; i < table.ids.size(); ++i) table.index[table.ids[i]] = static_cast<Index>(i);
    Rng rng(derive_seed(options.seed, "init/embedding"));
    const Index first_width = options.hidden.empty() ? 2 : options.hidden.front();
    table.projection = nn::init_dense<double>(options.embedding_dim, first_width, rng).weight;
    table.vectors.resize(static_cast<Index>(table.ids.size()), options.embedding_dim);
    if (options.freeze_zero_embedding) {
      table.vectors.setZero();
      table.frozen = true;
    } else {
      for (Index i = 0; i < table.vectors.rows(); ++i) {
        for (Index j = 0; j < table.vectors.cols(); ++j) {
          table.vectors(i, j) = rng.uniform(-options.embedding_init, options.embedding_init);
        }
      }
    }
    model.embedding = std::move(table);
  }
  return model;
}

StrategyTrainer::StrategyTrainer(StrategyModel& model, const RoutingTable* routing,
                                 const data::Dataset& rows, const nn::TrainConfig& config)
    : model_(model), config_(config) {
  config_.validate();
  if (rows.empty()) throw ValidationError("train_strategy: no training rows");
  rows_ = rows.rows();
  if (rows_.features.cols() != model.input_dim) {
    throw ShapeError("train_strategy: rows have " + std::to_string(rows_.features.cols()) +
                     " features, model expects " + std::to_string(model.input_dim));
  }
  clusters_ = route_rows(model, routing, rows);
  require_embeddings(model, rows_.participants);
  for (std::size_t g = 0; g < model.nets.size(); ++g) {
    const auto& net = model.nets[g];
    NetState st{Rng(derive_seed(config_.seed, "group", g)),
                nn::AdamState<double>::for_layers(net.trunk),
                {}};
    for (const auto& h : net.heads) st.heads.push_back(nn::AdamState<double>::for_layers(h));
    states_.push_back(std::move(st));
  }
}

std::vector<double> StrategyTrainer::step(std::span<const std::size_t> batch) {
  if (batch.empty()) throw ValidationError("step: empty batch");
  const auto path = model_.dispatch(clusters_.at(batch.front()));
  for (std::size_t i : batch) {
    const auto p = model_.dispatch(clusters_.at(i));
    if (p.net != path.net || p.head != path.head) {
      throw ContractError("step: batch mixes rows from different paths");
    }
  }
  auto& net = model_.nets[path.net];
  auto& state = states_[path.net];
  const auto sub = rows_.subset(batch);
  const auto chain = net.path(path.head);
  const std::span<const int> labels(sub.labels);

  MatrixXd emb;
  nn::SideInput<double> side;
  if (model_.embedding) {
    emb = model_.embedding->lookup(sub.participants);
    side = {&emb, &model_.embedding->projection};
  }
  auto fwd = nn::forward(chain, sub.features, nn::Mode::kTrain, config_.dropout_rate, state.rng, side);
  auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
  auto grads = nn::backward(chain, fwd.cache, loss.probs, labels, side);

  const auto adam = config_.adam();
  const std::span<const Layer> all(grads.layers);
  const std::size_t depth = net.trunk.size();
  if (depth > 0) {
    nn::adam_step(std::span<Layer>(net.trunk), all.first(depth), state.trunk, adam, "trunk");
  }
  nn::adam_step(std::span<Layer>(net.heads[path.head]), all.subspan(depth), state.heads[path.head],
                adam, "heads[" + std::to_string(path.head) + "]");
  if (model_.embedding) {
    auto& table = *model_.embedding;
    nn::adam_step(table.projection, grads.side_weight, projection_adam_, adam, "embedding.projection");
    if (!table.frozen) {
      MatrixXd g = MatrixXd::Zero(table.vectors.rows(), table.vectors.cols());
      for (std::size_t i = 0; i < sub.participants.size(); ++i) {
        g.row(table.index.at(sub.participants[i])) += grads.side_input.row(static_cast<Index>(i));
      }
      nn::adam_step(table.vectors, g, vectors_adam_, adam, "embedding.vectors");
    }
  }
  return {loss.per_sample.data(), loss.per_sample.data() + loss.per_sample.size()};
}

nn::EpochTrace StrategyTrainer::run_epoch() {
  nn::EpochTrace trace;
  trace.epoch = ++epoch_;
  trace.sample_losses.assign(rows_.size(), 0.0);
  const auto batch = static_cast<std::size_t>(config_.batch_size);

  for (std::size_t g = 0; g < model_.nets.size(); ++g) {
    std::vector<std::size_t> own;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (model_.dispatch(clusters_[i]).net == g) own.push_back(i);
    }
    if (own.empty()) continue;
    const auto order = states_[g].rng.permutation(own.size());
    std::vector<std::vector<std::size_t>> per_head(model_.nets[g].heads.size());
    for (std::size_t j : order) per_head[model_.dispatch(clusters_[own[j]]).head].push_back(own[j]);

    std::size_t rounds = 0;
    for (const auto& h : per_head) rounds = std::max(rounds, (h.size() + batch - 1) / batch);
    for (std::size_t r = 0; r < rounds; ++r) {
      for (const auto& h : per_head) {
        const std::size_t start = r * batch;
        if (start >= h.size()) continue;
        const std::span<const std::size_t> rows(h.data() + start, std::min(batch, h.size() - start));
        const auto losses = step(rows);
        if (config_.recording == nn::LossRecording::kBatchPreUpdate) {
          for (std::size_t i = 0; i < rows.size(); ++i) trace.sample_losses[rows[i]] = losses[i];
        }
      }
    }
  }
  if (config_.recording == nn::LossRecording::kEpochEndPass) {
    trace.sample_losses = losses_for(model_, rows_, clusters_);
  }
  trace.mean_loss = nn::mean_of(trace.sample_losses);
  return trace;
}

std::vector<nn::EpochTrace> StrategyTrainer::run() {
  std::vector<nn::EpochTrace> traces;
  while (epoch_ < config_.epochs) traces.push_back(run_epoch());
  return traces;
}

std::vector<double> StrategyTraining::epoch_means() const {
  std::vector<double> out;
  for (const auto& t : traces) out.push_back(t.mean_loss);
  return out;
}

StrategyTraining train_strategy(StrategyModel& model, const RoutingTable* routing,
                                const data::Dataset& rows, const nn::TrainConfig& config) {
  StrategyTrainer trainer(model, routing, rows, config);
  return {trainer.run()};
}

data::Dataset scorable_rows(const StrategyModel& model, const data::Dataset& rows) {
  if (!model.embedding) return rows;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (model.embedding->contains(rows.records()[i].participant_id)) keep.push_back(i);
  }
  return rows.subset(keep);
}

nn::Prediction predict_strategy(const StrategyModel& model, const RoutingTable* routing,
                                const data::Dataset& rows) {
  nn::Prediction out;
  if (rows.empty()) {
    out.probs.resize(0, 2);
    return out;
  }
  const auto labeled = rows.rows();
  require_embeddings(model, labeled.participants);
  const auto clusters = route_rows(model, routing, rows);
  const MatrixXd z = scatter_logits(model, labeled, clusters);
  out.labels = nn::argmax_labels(z);
  out.probs.resize(z.rows(), z.cols());
  for (Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - mx).exp();
    out.probs.row(i) = e / e.sum();
  }
  return out;
}

std::vector<double> strategy_losses(const StrategyModel& model, const RoutingTable* routing,
                                    const data::Dataset& rows) {
  const auto labeled = rows.rows();
  require_embeddings(model, labeled.participants);
  return losses_for(model, labeled, route_rows(model, routing, rows));
}

nlohmann::json to_json(const nn::TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"dropout_rate", c.dropout_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"loss_recording",
           c.recording == nn::LossRecording::kBatchPreUpdate ? "batch-pre-update" : "epoch-end-pass"}};
}

nn::TrainConfig train_config_from_json(const nlohmann::json& j) {
  nn::TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.epsilon = j.value("epsilon", 1e-8);
  c.recording = j.value("loss_recording", std::string("batch-pre-update")) == "epoch-end-pass"
                    ? nn::LossRecording::kEpochEndPass
                    : nn::LossRecording::kBatchPreUpdate;
  c.validate();
  return c;
}

nlohmann::json to_json(const SavedStrategy& saved) {
  const auto& m = saved.model;
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& net : m.nets) {
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& h : net.heads) heads.push_back(io::layers_to_json(h));
    nets.push_back({{"trunk", io::layers_to_json(net.trunk)}, {"heads", std::move(heads)}});
  }
  nlohmann::json j{{"format", "routemlp.strategy/1"},
                   {"kind", to_string(m.kind)},
                   {"k", m.k},
                   {"input_dim", m.input_dim},
                   {"hidden", m.hidden},
                   {"config", to_json(saved.config)},
                   {"nets", std::move(nets)}};
  if (m.embedding) {
    j["embedding"] = {{"ids", m.embedding->ids},
                      {"vectors", io::matrix_to_json(m.embedding->vectors)},
                      {"projection", io::matrix_to_json(m.embedding->projection)},
                      {"frozen", m.embedding->frozen}};
  } else {
    j["embedding"] = nullptr;
  }
  j["routing"] = saved.routing ? to_json(*saved.routing) : nlohmann::json();
  return j;
}

SavedStrategy strategy_from_json(const nlohmann::json& j) {
  SavedStrategy s;
  auto& m = s.model;
  m.kind = parse_kind(j.at("kind").get<std::string>());
  m.k = j.at("k").get<int>();
  m.input_dim = j.at("input_dim").get<Index>();
  m.hidden = j.at("hidden").get<std::vector<Index>>();
  s.config = train_config_from_json(j.at("config"));
  for (const auto& net : j.at("nets")) {
    RoutedNet r;
    r.trunk = io::layers_from_json(net.at("trunk"));
    for (const auto& h : net.at("heads")) r.heads.push_back(io::layers_from_json(h));
    m.nets.push_back(std::move(r));
  }
  if (j.contains("embedding") && !j["embedding"].is_null()) {
    const auto& e = j["embedding"];
    EmbeddingTable t;
    t.ids = e.at("ids").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < t.ids.size(); ++i) t.index[t.ids[i]] = static_cast<Index>(i);
    t.vectors = io::matrix_from_json(e.at("vectors"));
    t.projection = io::matrix_from_json(e.at("projection"));
    t.frozen = e.at("frozen").get<bool>();
    m.embedding = std::move(t);
  }
  if (j.contains("routing") && !j["routing"].is_null()) s.routing = routing_from_json(j["routing"]);
  return s;
}

}  // namespace routemlp::strategies
