#include "routemlp/snapshot_io.hpp"

#include <fstream>
#include <sstream>

#include "routemlp/errors.hpp"

namespace routemlp::io {

json matrix_to_json(const nn::MatrixXd& m) {
  json values = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) values.push_back(m(i, j));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::move(values)}};
}

nn::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& values = j.at("values");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw ValidationError("matrix json: rows*cols does not match value count");
  }
  nn::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = values[k++].get<double>();
  }
  if (!m.allFinite()) throw ValidationError("matrix json: non-finite value");
  return m;
}

json layers_to_json(std::span<const nn::Layer> layers) {
  json out = json::array();
  for (const auto& l : layers) {
    json w = matrix_to_json(l.weight);
    out.push_back({{"rows", l.out()},
                   {"cols", l.in()},
                   {"weight", w["values"]},
                   {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return out;
}

std::vector<nn::Layer> layers_from_json(const json& j) {
  std::vector<nn::Layer> layers;
  for (const auto& item : j) {
    nn::Layer l;
    l.weight = matrix_from_json({{"rows", item.at("rows")},
                                 {"cols", item.at("cols")},
                                 {"values", item.at("weight")}});
    const auto bias = item.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(bias.size()) != l.weight.rows()) {
      throw ValidationError("layer json: bias length differs from weight rows");
    }
    l.bias = Eigen::Map<const nn::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    if (!layers.empty() && layers.back().out() != l.in()) {
      throw ShapeError("layer json: layer " + std::to_string(layers.size()) +
                       " does not chain with its predecessor");
    }
    layers.push_back(std::move(l));
  }
  return layers;
}

json snapshot_to_json(const nn::ParamSnapshot& snap) {
  json j{{"format", "routemlp.snapshot/1"},
         {"epoch", snap.epoch},
         {"seed", snap.seed},
         {"layers", layers_to_json(snap.params.layers)}};
  if (!snap.adam.m.empty()) {
    j["adam"] = {{"t", snap.adam.t},
                 {"m", layers_to_json(snap.adam.m)},
                 {"v", layers_to_json(snap.adam.v)}};
  }
  return j;
}

nn::ParamSnapshot snapshot_from_json(const json& j) {
  nn::ParamSnapshot snap;
  snap.epoch = j.at("epoch").get<int>();
  snap.seed = j.at("seed").get<std::uint64_t>();
  snap.params.layers = layers_from_json(j.at("layers"));
  if (j.contains("adam")) {
    snap.adam.t = j["adam"].at("t").get<std::int64_t>();
    snap.adam.m = layers_from_json(j["adam"].at("m"));
    snap.adam.v = layers_from_json(j["adam"].at("v"));
  }
  return snap;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace routemlp::io
