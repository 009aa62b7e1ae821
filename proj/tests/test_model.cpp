#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cmlm/model.hpp"
#include "support/gradcheck.hpp"

using namespace cmlm;

TEST_CASE("presets") {
  const ModelConfig tiny = ModelConfig::preset("tiny", 1300);
  CHECK(tiny.embed_dim == 64);
  CHECK(tiny.ffn_embed_dim == 256);
  CHECK(tiny.layers == 2);
  CHECK(tiny.attention_heads == 4);
  const ModelConfig small = ModelConfig::preset("small", 1300);
  CHECK(small.embed_dim == 128);
  CHECK(small.layers == 4);
  CHECK(ModelConfig::preset("large", 1300).layers == 40);
  CHECK_THROWS_AS(ModelConfig::preset("huge", 10), Error);
  CHECK(ModelConfig::from_json(tiny.to_json()) == tiny);

  ModelConfig bad = tiny;
  bad.attention_heads = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  ModelConfig post = tiny;
  post.normalize_before = false;
  CHECK_THROWS_AS(Transformer<float>(post, 1), Error);

  const ParameterLayout layout(tiny);
  CHECK(layout.total == tiny.parameter_count());
  CHECK(Transformer<float>(tiny, 1).parameters().size() == layout.total);
}

TEST_CASE("forward is causal and validates input") {
  const ModelConfig mc = testing::gradcheck_config();
  const Transformer<double> model(mc, 3);
  const std::vector<TokenId> a = {1, 2, 3, 4, 5, 6};
  std::vector<TokenId> b = a;
  b[4] = 9;
  const auto la = model.forward(a);
  const auto lb = model.forward(b);
  CHECK(la.rows() == 6);
  CHECK(la.cols() == mc.vocab_size);
  for (int r = 0; r < 4; ++r) CHECK(la.row(r) == lb.row(r));
  CHECK(la.row(4) != lb.row(4));

  CHECK_THROWS_AS(model.forward(std::vector<TokenId>{}), Error);
  CHECK_THROWS_AS(model.forward(std::vector<TokenId>{1, 40}), Error);
  CHECK_THROWS_AS(model.forward(std::vector<TokenId>(33, 1)), Error);
}

TEST_CASE("analytic gradients match finite differences") {
  Transformer<double> model(testing::gradcheck_config(), 11);
  Rng rng(5);
  const auto batch = testing::random_batch(rng, 40, 2, 12);
  const auto check = testing::gradient_check(model, batch, 60, 17);
  CHECK(check.max_relative_error < 1e-4);
  CHECK(testing::zero_weight_contributes_nothing(model, rng));
}

TEST_CASE("float and double agree") {
  const ModelConfig mc = testing::gradcheck_config();
  const Transformer<double> d(mc, 4);
  std::vector<float> p(d.parameters().begin(), d.parameters().end());
  const Transformer<float> f(mc, std::move(p));
  Rng rng(8);
  const auto batch = testing::random_batch(rng, 40, 3, 20);
  CHECK(f.loss(batch) == doctest::Approx(d.loss(batch)).epsilon(1e-4));
}

TEST_CASE("weighted loss") {
  RowMatrix<double> logits(2, 3);
  logits << 0, 0, 0, 1, 2, 3;
  const std::vector<TokenId> targets = {0, 2};
  CHECK(weighted_loss<double>(logits, targets, std::vector<std::uint8_t>{1, 0}) ==
        doctest::Approx(std::log(3.0)));
  CHECK_THROWS_AS(weighted_loss<double>(logits, targets, std::vector<std::uint8_t>{0, 0}), Error);
  CHECK_THROWS_AS(weighted_loss<double>(logits, targets, std::vector<std::uint8_t>{2, 0}), Error);
  RowMatrix<double> grad;
  weighted_loss<double>(logits, targets, std::vector<std::uint8_t>{0, 1}, &grad);
  CHECK(grad.row(0).isZero());
  CHECK(grad.row(1).sum() == doctest::Approx(0).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "cmlm_model_test";
  std::filesystem::create_directories(dir);
  const ModelConfig mc = testing::gradcheck_config();
  const Transformer<double> model(mc, 21);
  Checkpoint ckpt{mc, 32, "double", {model.parameters().begin(), model.parameters().end()}};
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, ckpt);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config == mc);
  CHECK(back.image_vocab_size == 32);
  CHECK(back.precision == "double");
  CHECK(back.parameters == ckpt.parameters);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write(flipped);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  write(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  write("not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);

  Checkpoint wrong = ckpt;
  wrong.parameters.pop_back();
  CHECK_THROWS_AS(save_checkpoint(path, wrong), Error);
  std::filesystem::remove_all(dir);
}
