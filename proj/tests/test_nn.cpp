#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"
#include "routemlp/snapshot_io.hpp"
#include "routemlp/train.hpp"

using namespace routemlp;
using namespace routemlp::nn;

namespace {

MatrixXd random_matrix(Index r, Index c, Rng& rng) {
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

std::vector<int> random_labels(std::size_t n, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(2));
  return y;
}

LabeledRows toy_rows(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  LabeledRows rows;
  rows.features = random_matrix(static_cast<Index>(n), 20, rng);
  for (std::size_t i = 0; i < n; ++i) {
    rows.labels.push_back(rows.features(static_cast<Index>(i), 0) > 0 ? 1 : 0);
    rows.participants.push_back("p" + std::to_string(i % 4));
  }
  return rows;
}

}  // namespace

TEST_CASE("cross-entropy closed forms") {
  MatrixXd z(1, 2);
  z << 1.0, 0.0;
  const std::vector<int> y{0};
  CHECK(softmax_cross_entropy(z, y).per_sample(0) == doctest::Approx(0.313262).epsilon(1e-6));

  MatrixXd u = MatrixXd::Constant(3, 2, 0.7);
  const std::vector<int> ys{0, 1, 1};
  const auto r = softmax_cross_entropy(u, ys);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(r.per_sample(i) - std::log(2.0)) < 1e-12);

  // large logits stay finite
  MatrixXd big(1, 2);
  big << 1000.0, -1000.0;
  CHECK(softmax_cross_entropy(big, std::vector<int>{1}).per_sample(0) == doctest::Approx(2000.0));
}

TEST_CASE("cross-entropy rejects bad labels") {
  MatrixXd z = MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(softmax_cross_entropy(z, std::vector<int>{0, 2}), ValidationError);
  CHECK_THROWS_AS(softmax_cross_entropy(z, std::vector<int>{0}), Error);
}

TEST_CASE("init bounds and zero biases") {
  Rng rng(3);
  const std::vector<Index> dims{20, 30, 10, 2};
  const auto mlp = init_mlp<double>(dims, rng);
  REQUIRE(mlp.layers.size() == 3);
  CHECK(mlp.parameter_count() == 20 * 30 + 30 + 30 * 10 + 10 + 10 * 2 + 2);
  for (const auto& l : mlp.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in() + l.out()));
    CHECK(l.weight.cwiseAbs().maxCoeff() <= limit);
    CHECK(l.bias.isZero());
  }
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(11);
  const std::vector<std::vector<Index>> shapes{{20, 30, 10, 2}, {5, 4, 2}, {3, 2}};
  for (const auto& dims : shapes) {
    const auto mlp = init_mlp<double>(dims, rng);
    const auto x = random_matrix(6, dims.front(), rng);
    const auto y = random_labels(6, rng);
    Rng unused(0);
    const auto fwd = forward(chain(mlp), x, Mode::kInfer, 0.0, unused);
    const auto loss = softmax_cross_entropy(fwd.logits, y);
    const auto g = backward(chain(mlp), fwd.cache, loss.probs, y);
    const auto fd = finite_diff_grad(mlp, x, y, 1e-6);
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
      const double scale = std::max(1.0, fd[l].weight.cwiseAbs().maxCoeff());
      CHECK((g.layers[l].weight - fd[l].weight).cwiseAbs().maxCoeff() / scale < 1e-6);
      CHECK((g.layers[l].bias - fd[l].bias).cwiseAbs().maxCoeff() / scale < 1e-6);
    }
  }
}

TEST_CASE("side input acts like concatenated columns") {
  Rng rng(5);
  const std::vector<Index> wide{7, 4, 2};
  auto mlp = init_mlp<double>(wide, rng);
  const auto x = random_matrix(3, 7, rng);
  // split the first layer into feature columns and side columns
  Mlp<double> narrow = mlp;
  narrow.layers[0].weight = mlp.layers[0].weight.leftCols(5);
  const MatrixXd w_side = mlp.layers[0].weight.rightCols(2);
  const MatrixXd side = x.rightCols(2);
  const MatrixXd feats = x.leftCols(5);
  const auto full = logits(chain(mlp), x);
  const auto split = logits(chain(narrow), feats, SideInput<double>{&side, &w_side});
  CHECK((full - split).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<int> y{0, 1, 1};
  Rng unused(0);
  const auto fw = forward(chain(narrow), feats, Mode::kInfer, 0.0, unused, SideInput<double>{&side, &w_side});
  const auto loss = softmax_cross_entropy(fw.logits, y);
  const auto g = backward(chain(narrow), fw.cache, loss.probs, y, SideInput<double>{&side, &w_side});
  const auto fwf = forward(chain(mlp), x, Mode::kInfer, 0.0, unused);
  const auto gf = backward(chain(mlp), fwf.cache, softmax_cross_entropy(fwf.logits, y).probs, y);
  CHECK((g.side_weight - gf.layers[0].weight.rightCols(2)).cwiseAbs().maxCoeff() < 1e-12);
  // d loss / d side input against central differences
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      const auto f = [&](double v) {
        MatrixXd s = side;
        s(i, j) = v;
        return softmax_cross_entropy(logits(chain(narrow), feats, SideInput<double>{&s, &w_side}), y)
                   .per_sample.mean();
      };
      CHECK(central_difference(f, side(i, j), 1e-6) == doctest::Approx(g.side_input(i, j)).epsilon(1e-6));
    }
  }
}

TEST_CASE("dropout: zero rate and inference draw nothing") {
  Rng rng(2);
  const std::vector<Index> dims{4, 8, 2};
  const auto mlp = init_mlp<double>(dims, rng);
  const auto x = random_matrix(5, 4, rng);
  Rng a(9), b(9);
  const auto train0 = forward(chain(mlp), x, Mode::kTrain, 0.0, a);
  const auto infer = forward(chain(mlp), x, Mode::kInfer, 0.5, b);
  CHECK(train0.logits == infer.logits);
  CHECK(a.next_u64() == Rng(9).next_u64());
  CHECK(b.next_u64() == Rng(9).next_u64());
}

TEST_CASE("dropout masks are inverted and skip the logits") {
  Rng rng(2);
  const std::vector<Index> dims{4, 50, 2};
  const auto mlp = init_mlp<double>(dims, rng);
  const auto x = random_matrix(40, 4, rng);
  Rng d(1);
  const auto fwd = forward(chain(mlp), x, Mode::kTrain, 0.25, d);
  REQUIRE(fwd.cache.masks.size() == 1);
  const auto& m = fwd.cache.masks[0];
  for (Index i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    CHECK((v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15));
  }
}

TEST_CASE("backward rejects a cache from a different network") {
  Rng rng(4);
  const std::vector<Index> a_dims{3, 4, 2};
  const std::vector<Index> b_dims{3, 5, 2};
  const auto a = init_mlp<double>(a_dims, rng);
  const auto b = init_mlp<double>(b_dims, rng);
  const auto x = random_matrix(2, 3, rng);
  const std::vector<int> y{0, 1};
  Rng unused(0);
  const auto fwd = forward(chain(a), x, Mode::kInfer, 0.0, unused);
  const auto probs = softmax_cross_entropy(fwd.logits, y).probs;
  CHECK_THROWS_AS(backward(chain(b), fwd.cache, probs, y), ContractError);
}

TEST_CASE("first Adam step moves each weight by lr * |g| / (|g| + eps)") {
  Rng rng(8);
  const std::vector<Index> dims{3, 2};
  auto mlp = init_mlp<double>(dims, rng);
  const auto before = mlp;
  std::vector<Layer> grads{Layer::zeros_like(mlp.layers[0])};
  grads[0].weight << 0.5, -2.0, 1e-9, 3.0, -0.25, 0.0;
  grads[0].bias << 1.0, -1.0;
  auto state = AdamState<double>::for_mlp(mlp);
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(mlp, std::span<const Layer>(grads), state, cfg);
  CHECK(state.t == 1);
  for (Index i = 0; i < 6; ++i) {
    const double g = grads[0].weight.data()[i];
    const double expected = cfg.learning_rate * std::abs(g) / (std::abs(g) + cfg.epsilon);
    const double moved = std::abs(mlp.layers[0].weight.data()[i] - before.layers[0].weight.data()[i]);
    CHECK(std::abs(moved - expected) < 1e-9);
  }
}

TEST_CASE("Adam names the offending tensor on a non-finite gradient") {
  Rng rng(8);
  const std::vector<Index> dims{3, 4, 2};
  auto mlp = init_mlp<double>(dims, rng);
  std::vector<Layer> grads{Layer::zeros_like(mlp.layers[0]), Layer::zeros_like(mlp.layers[1])};
  grads[1].weight(0, 0) = std::nan("");
  auto state = AdamState<double>::for_mlp(mlp);
  const auto before = mlp;
  try {
    adam_step(mlp, std::span<const Layer>(grads), state, AdamConfig{});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layers[1].weight") != std::string::npos);
  }
  CHECK(state.t == 0);
  CHECK(mlp.layers[0] == before.layers[0]);
}

TEST_CASE("training is deterministic and learns a separable rule") {
  const auto rows = toy_rows(200, 1);
  Rng rng(3);
  const std::vector<Index> hidden{30, 10};
  const auto dims = layer_dims(20, hidden);
  const auto init = init_mlp<double>(dims, rng);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 0.01;
  cfg.seed = 42;
  const auto a = train(init, rows, cfg);
  const auto b = train(init, rows, cfg);
  CHECK(a.params == b.params);
  REQUIRE(a.traces.size() == 15);
  CHECK(a.traces.back().mean_loss < a.traces.front().mean_loss);
  CHECK(a.traces.front().sample_losses.size() == rows.size());
  const auto pred = predict(a.params, rows.features);
  int correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) correct += pred.labels[i] == rows.labels[i];
  CHECK(correct > 180);
}

TEST_CASE("epoch-end recording is an inference pass after the epoch") {
  const auto rows = toy_rows(50, 2);
  Rng rng(3);
  const std::vector<Index> hidden{6};
  const auto init = init_mlp<double>(layer_dims(20, hidden), rng);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.recording = LossRecording::kEpochEndPass;
  const std::vector<int> snaps{2};
  const auto res = train(init, rows, cfg, snaps);
  REQUIRE(res.snapshots.size() == 1);
  const auto expected = sample_losses(res.params, rows);
  CHECK(res.traces.back().sample_losses == expected);
}

TEST_CASE("snapshot JSON round-trips exactly") {
  const auto rows = toy_rows(30, 4);
  Rng rng(1);
  const std::vector<Index> hidden{5};
  const auto init = init_mlp<double>(layer_dims(20, hidden), rng);
  TrainConfig cfg;
  cfg.epochs = 2;
  const std::vector<int> snaps{1};
  const auto res = train(init, rows, cfg, snaps);
  const auto back = io::snapshot_from_json(io::snapshot_to_json(res.snapshots[0]));
  CHECK(back.params == res.snapshots[0].params);
  CHECK(back.adam == res.snapshots[0].adam);
  CHECK(back.epoch == 1);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("derived seeds depend only on the name") {
  CHECK(derive_seed(1, "fold", 3) == derive_seed(1, "fold/3"));
  CHECK(derive_seed(1, "fold/3") != derive_seed(2, "fold/3"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  Rng r(5);
  auto p = r.permutation(10);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(p[i] == i);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
}
