#include <doctest.h>

#include <cmath>

#include "cmlm/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace cmlm;

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.warmup_updates = 10;
  c.total_updates = 110;
  CHECK(lr_at(0, c) == 0.0);
  CHECK(lr_at(5, c) == doctest::Approx(5e-4));
  CHECK(lr_at(10, c) == doctest::Approx(1e-3));
  CHECK(lr_at(60, c) == doctest::Approx(5e-4));
  CHECK(lr_at(110, c) == doctest::Approx(0.0));
  c.power = 2.0;
  c.end_lr = 1e-4;
  CHECK(lr_at(60, c) == doctest::Approx(0.9e-3 * 0.25 + 1e-4));
  CHECK_THROWS_AS(lr_at(111, c), Error);
  CHECK_THROWS_AS(lr_at(-1, c), Error);

  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("gradient clipping") {
  std::vector<double> g = {3, 4};
  CHECK(clip_gradients<double>(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0] == doctest::Approx(0.6));
  CHECK(g[1] == doctest::Approx(0.8));
  std::vector<float> small = {0.1f, 0.2f};
  clip_gradients<float>(small, 1.0);
  CHECK(small[0] == 0.1f);
  std::vector<double> nan = {std::nan("")};
  CHECK_THROWS_AS(clip_gradients<double>(nan, 1.0), Error);
}

TEST_CASE("packing keeps whole sequences together") {
  auto seq = [](std::size_t n, TokenId fill) {
    TransformedSequence s;
    s.tokens.assign(n, fill);
    s.loss_weights.assign(n, 1);
    return s;
  };
  const std::vector<TransformedSequence> seqs = {seq(4, 1), seq(5, 2), seq(2, 3), seq(23, 4), seq(1, 5)};
  const auto chunks = pack_sequences(seqs, 10);
  REQUIRE(chunks.size() == 5);
  CHECK(chunks[0].tokens == std::vector<TokenId>{1, 1, 1, 1, 2, 2, 2, 2, 2});
  CHECK(chunks[1].tokens == std::vector<TokenId>{3, 3});
  CHECK(chunks[2].tokens.size() == 10);
  CHECK(chunks[3].tokens.size() == 10);
  // The tail piece of a split sequence stands alone; a lone token has
  // nothing to predict and is dropped.
  CHECK(chunks[4].tokens == std::vector<TokenId>{4, 4, 4});
  CHECK_THROWS_AS(pack_sequences(seqs, 1), Error);
}

TEST_CASE("training lowers the loss and is deterministic") {
  const ModelConfig mc = testing::gradcheck_config();
  // Four copies of one short sequence: easy to memorize.
  std::vector<WeightedSequence> chunks;
  for (int copy = 0; copy < 4; ++copy) {
    WeightedSequence s;
    for (int j = 0; j < 16; ++j) {
      s.tokens.push_back(static_cast<TokenId>((j * 7) % 40));
      s.weights.push_back(1);
    }
    chunks.push_back(s);
  }
  TrainConfig tc;
  tc.total_updates = 60;
  tc.warmup_updates = 5;
  tc.batch_size = 2;
  tc.peak_lr = 3e-3;
  tc.seed = 9;

  Transformer<float> a(mc, 2), b(mc, 2);
  const double before = evaluate_loss(a, chunks);
  const auto trace_a = Trainer<float>(a, tc).run(chunks);
  const auto trace_b = Trainer<float>(b, tc).run(chunks);
  CHECK(trace_a.size() == 60);
  CHECK(evaluate_loss(a, chunks) < 0.5 * before);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  for (std::size_t i = 0; i < trace_a.size(); ++i) CHECK(trace_a[i].loss == trace_b[i].loss);
  CHECK(trace_a.back().lr == doctest::Approx(0.0));

  Trainer<float> done(a, tc);
  done.run(chunks);
  CHECK_THROWS_AS(done.step(chunks), Error);
  CHECK_THROWS_AS(Trainer<float>(a, tc).run(std::vector<WeightedSequence>{}), Error);
}

TEST_CASE("non-finite parameters raise a divergence error") {
  const ModelConfig mc = testing::gradcheck_config();
  Transformer<float> model(mc, 1);
  model.parameters()[0] = std::numeric_limits<float>::infinity();
  model.parameters()[ParameterLayout(mc).final_gain] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tc;
  tc.total_updates = 3;
  tc.warmup_updates = 0;
  WeightedSequence s{{0, 1, 2}, {1, 1, 1}};
  try {
    Trainer<float>(model, tc).step(std::vector{s});
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() == 1);
  }
}
