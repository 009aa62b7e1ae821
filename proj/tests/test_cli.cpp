#include <doctest.h>

#include <filesystem>

#include <nlohmann/json.hpp>

#include "cmlm/records.hpp"
#include "support/pipeline.hpp"

using namespace cmlm;
using cmlm::testing::run_cli;

TEST_CASE("exit codes and diagnostics") {
  CHECK(run_cli({}).code == 2);
  const auto unknown = run_cli({"split", "--records", "x", "--test-size", "1", "--bogus"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.starts_with("cmlm: cli: "));
  const auto missing = run_cli({"stats", "--records", "/nonexistent/records.jsonl"});
  CHECK(missing.code == 1);
  CHECK(missing.err == "cmlm: records: cannot open /nonexistent/records.jsonl\n");
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"--workers", "0", "stats", "--records", "x"}).code == 2);
  const auto bad_prompt = run_cli({"prompt", "--name", "nope"});
  CHECK(bad_prompt.code == 1);
  CHECK(bad_prompt.err.starts_with("cmlm: prompts: "));
}

TEST_CASE("prompt subcommand") {
  const auto r = run_cli({"prompt", "--name", "entity", "--prefix", "Manetho writes that these kings ruled from ",
                          "--text", "Memphis", "--postfix", "..."});
  CHECK(r.code == 0);
  CHECK(r.out == "Manetho writes that these kings ruled from <a title=\"<mask:0>\">Memphis</a>...<mask:0>");
  const auto missing = run_cli({"prompt", "--name", "entity", "--text", "Memphis"});
  CHECK(missing.code == 1);
}

TEST_CASE("full pipeline over the fixture corpus") {
  const auto work = std::filesystem::temp_directory_path() / "cmlm_cli_test";
  const auto a = testing::run_pipeline(work, "17");

  const auto minified = read_records(work / "minified.jsonl");
  CHECK(minified.size() == 50);
  CHECK(std::is_sorted(minified.begin(), minified.end(),
                       [](const Record& x, const Record& y) { return x.doc_id < y.doc_id; }));
  for (const auto& r : minified) {
    CHECK(r.minimal_html.find("<script") == std::string::npos);
    CHECK(r.minimal_html.find("<iframe") == std::string::npos);
  }
  const auto images = nlohmann::json::parse(a.stdout_.at("images"));
  CHECK(images["documents"] == 50);
  CHECK(images["images"].get<int>() > 10);

  const auto tokenized = read_records(work / "tokenized.jsonl");
  std::size_t with_tokens = 0;
  for (const auto& r : tokenized) with_tokens += r.minimal_html.find("IMG") != std::string::npos;
  CHECK(with_tokens == images["images"].get<std::size_t>());

  const auto train = read_records(work / "split" / "train.jsonl");
  const auto test = read_records(work / "split" / "test.jsonl");
  CHECK(test.size() == 8);
  CHECK(train.size() == 42);

  const auto transformed = read_records(work / "train_cm.jsonl");
  REQUIRE(transformed.size() == train.size());
  for (const auto& r : transformed) {
    CHECK(r.extra.contains("plan"));
    CHECK(r.extra["tokens_transformed"].size() == r.extra["loss_weights"].size());
  }

  CHECK(a.files.contains("ckpt/model.ckpt"));
  CHECK(a.files.at("ckpt/loss.csv").starts_with("step,lr,loss\n"));
  CHECK(a.stdout_.at("score").starts_with("candidate\tlogprob\trank\n"));
  const auto hinted = nlohmann::json::parse(a.stdout_.at("size_hint"));
  CHECK(hinted.contains("infill"));

  // Changing the seed changes the randomized stages.
  const auto b = testing::run_pipeline(work.string() + "_b", "18");
  CHECK(a.files.at("minified.jsonl") == b.files.at("minified.jsonl"));
  CHECK(a.files.at("train_cm.jsonl") != b.files.at("train_cm.jsonl"));
  std::filesystem::remove_all(work);
  std::filesystem::remove_all(work.string() + "_b");
}
