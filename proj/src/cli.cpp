#include "cmlm/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cmlm/cm_objective.hpp"
#include "cmlm/corpus.hpp"
#include "cmlm/decoding.hpp"
#include "cmlm/error.hpp"
#include "cmlm/html.hpp"
#include "cmlm/image.hpp"
#include "cmlm/model.hpp"
#include "cmlm/prompts.hpp"
#include "cmlm/records.hpp"
#include "cmlm/trainer.hpp"

namespace fs = std::filesystem;

namespace cmlm {
namespace {

struct Globals {
  std::uint64_t seed = 0;
  int workers = 1;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cli", "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cli", "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::string strip_trailing_newline(std::string s) {
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written to per-index slots; the lowest-index failure is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> failures(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          failures[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
}

std::vector<std::string> rendered_tokens(const Vocab& vocab, const std::string& doc_id, std::string_view html) {
  try {
    return vocab.render_all(vocab.encode(html));
  } catch (const EncodeError& e) {
    throw Error("vocab", "document " + doc_id + ": " + e.what());
  }
}

// ---- minify ----

struct MinifyArgs {
  std::string input;
  std::string out;
  std::string report;
  std::string source = "synthetic";
};

void cmd_minify(const MinifyArgs& a, const Globals& g, std::ostream&) {
  std::vector<fs::path> files;
  if (fs::is_directory(a.input)) {
    for (const auto& entry : fs::directory_iterator(a.input)) {
      const auto ext = entry.path().extension();
      if (entry.is_regular_file() && (ext == ".html" || ext == ".htm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(a.input)) {
    files.emplace_back(a.input);
  } else {
    throw Error("cli", "no such input: " + a.input);
  }
  const Source source = parse_source(a.source);
  const Vocab vocab;
  std::vector<Record> records(files.size());
  std::vector<MinifyReport> reports(files.size());
  parallel_for(files.size(), g.workers, [&](std::size_t i) {
    MinifyResult result = minify(read_file(files[i]));
    Record& r = records[i];
    r.doc_id = files[i].stem().string();
    r.source = source;
    r.tokens = rendered_tokens(vocab, r.doc_id, result.minimal_html);
    r.minimal_html = std::move(result.minimal_html);
    reports[i] = result.report;
  });
  write_records(a.out, records);
  if (!a.report.empty()) {
    nlohmann::ordered_json j;
    MinifyReport total;
    nlohmann::ordered_json per_doc = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < records.size(); ++i) {
      total += reports[i];
      per_doc[records[i].doc_id] = reports[i].to_json();
    }
    j["documents"] = records.size();
    j["total"] = total.to_json();
    j["per_document"] = std::move(per_doc);
    write_file(a.report, j.dump(2) + "\n");
  }
}

// ---- tokenize-images ----

struct TokenizeArgs {
  std::string records;
  std::string images;
  std::string out;
  std::string mode = "eval";
};

// Maps a src value to a file under `root`, or nothing. URLs lose their scheme
// and host; paths that climb out of the root never resolve.
std::optional<fs::path> resolve_src(const fs::path& root, std::string src) {
  if (const auto scheme = src.find("://"); scheme != std::string::npos) {
    const auto slash = src.find('/', scheme + 3);
    if (slash == std::string::npos) return std::nullopt;
    src = src.substr(slash);
  }
  if (const auto cut = src.find_first_of("?#"); cut != std::string::npos) src.resize(cut);
  while (!src.empty() && src.front() == '/') src.erase(src.begin());
  if (src.empty()) return std::nullopt;
  const fs::path rel = fs::path(src).lexically_normal();
  if (rel.is_absolute() || rel.empty() || *rel.begin() == "..") return std::nullopt;
  const fs::path full = root / rel;
  std::error_code ec;
  if (!fs::is_regular_file(full, ec)) return std::nullopt;
  return full;
}

void tokenize_images_in(DomNode& node, const fs::path& root, PrepareMode mode, Rng& rng,
                        const ImageCodec& codec, const Vocab& vocab, std::size_t& count) {
  if (node.is("img")) {
    if (const std::string* src = node.attr("src")) {
      if (const auto file = resolve_src(root, *src)) {
        const std::string bytes = read_file(*file);
        const auto data = std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
        embed_in_src(node, codec.tokenize(prepare(data, mode, rng)), vocab);
        ++count;
      }
    }
  }
  for (DomNode& child : node.children) tokenize_images_in(child, root, mode, rng, codec, vocab, count);
}

void cmd_tokenize_images(const TokenizeArgs& a, const Globals& g, std::ostream& out) {
  PrepareMode mode;
  if (a.mode == "eval") {
    mode = PrepareMode::eval;
  } else if (a.mode == "train") {
    mode = PrepareMode::train;
  } else {
    throw Error("cli", "--mode must be train or eval");
  }
  std::vector<Record> records = read_records(a.records);
  const Vocab vocab;
  const PaletteCodec codec;
  std::vector<std::size_t> counts(records.size(), 0);
  parallel_for(records.size(), g.workers, [&](std::size_t i) {
    Record& r = records[i];
    DomNode dom = parse_dom(r.minimal_html);
    Rng rng(derive_seed(g.seed, r.doc_id));
    tokenize_images_in(dom, a.images, mode, rng, codec, vocab, counts[i]);
    if (counts[i] == 0) return;
    r.minimal_html = serialize(dom);
    r.tokens = rendered_tokens(vocab, r.doc_id, r.minimal_html);
  });
  write_records(a.out, records);
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  out << nlohmann::ordered_json{{"documents", records.size()}, {"images", total}}.dump() << "\n";
}

// ---- transform ----

struct TransformArgs {
  std::string records;
  std::string out;
  bool causal = false;
  int image_vocab = Vocab::kDefaultImageVocabSize;
};

void cmd_transform(const TransformArgs& a, const Globals& g, std::ostream&) {
  std::vector<Record> records = read_records(a.records);
  const Vocab vocab(a.image_vocab);
  parallel_for(records.size(), g.workers, [&](std::size_t i) {
    Record& r = records[i];
    const Document doc = make_document(vocab, r.doc_id, vocab.parse_all(r.tokens));
    TransformedSequence t;
    if (a.causal || doc.size() == 0) {
      t = causal_sequence(vocab, doc.tokens);
    } else {
      Rng rng(derive_seed(g.seed, r.doc_id));
      t = transform(vocab, doc.tokens, sample_plan(doc.size(), rng));
    }
    r.extra["plan"] = t.plan.to_json();
    r.extra["tokens_transformed"] = vocab.render_all(t.tokens);
    r.extra["loss_weights"] = t.loss_weights;
  });
  write_records(a.out, records);
}

// ---- split ----

struct SplitArgs {
  std::string records;
  std::size_t test_size = 0;
  std::string out = ".";
};

void cmd_split(const SplitArgs& a, const Globals& g, std::ostream& out) {
  const std::vector<Record> records = read_records(a.records);
  const Split split = make_split(records, a.test_size, g.seed);
  fs::create_directories(a.out);
  write_records(fs::path(a.out) / "train.jsonl", split.train);
  write_records(fs::path(a.out) / "test.jsonl", split.test);
  out << nlohmann::ordered_json{{"train", split.train.size()}, {"test", split.test.size()}}.dump() << "\n";
}

// ---- train ----

struct TrainArgs {
  std::string records;
  std::string model = "tiny";
  std::string out = "ckpt";
  std::string precision = "float";
  int image_vocab = Vocab::kDefaultImageVocabSize;
  TrainConfig config;
};

std::vector<TransformedSequence> training_sequences(const Vocab& vocab, const std::vector<Record>& records) {
  std::vector<TransformedSequence> seqs;
  seqs.reserve(records.size());
  for (const Record& r : records) {
    TransformedSequence t;
    if (r.extra.contains("tokens_transformed")) {
      t.tokens = vocab.parse_all(r.extra["tokens_transformed"].get<std::vector<std::string>>());
      t.loss_weights = r.extra.contains("loss_weights")
                           ? r.extra["loss_weights"].get<std::vector<std::uint8_t>>()
                           : loss_weights(vocab, t.tokens);
      if (t.loss_weights.size() != t.tokens.size()) {
        throw Error("trainer", "document " + r.doc_id + ": loss_weights length differs from tokens_transformed");
      }
    } else {
      t = causal_sequence(vocab, vocab.parse_all(r.tokens));
    }
    seqs.push_back(std::move(t));
  }
  return seqs;
}

template <typename T>
std::vector<double> train_model(const ModelConfig& mc, const TrainConfig& tc,
                                const std::vector<WeightedSequence>& chunks, std::vector<TraceRow>& trace) {
  Transformer<T> model(mc, tc.seed);
  Trainer<T> trainer(model, tc);
  trace = trainer.run(chunks);
  const auto p = model.parameters();
  return {p.begin(), p.end()};
}

void cmd_train(TrainArgs a, const Globals& g, std::ostream& out) {
  const Vocab vocab(a.image_vocab);
  const std::vector<Record> records = read_records(a.records);
  a.config.seed = g.seed;
  a.config.warmup_updates = std::min(a.config.warmup_updates, a.config.total_updates);
  a.config.validate();
  const ModelConfig mc = ModelConfig::preset(a.model, vocab.size());
  if (static_cast<std::size_t>(a.config.max_seq_len) > static_cast<std::size_t>(mc.max_positions)) {
    throw Error("trainer", "max_seq_len exceeds the model's max_positions");
  }
  const auto chunks = pack_sequences(training_sequences(vocab, records), a.config.max_seq_len);
  if (chunks.empty()) throw Error("trainer", "no training data");

  Checkpoint ckpt{mc, a.image_vocab, a.precision, {}};
  std::vector<TraceRow> trace;
  if (a.precision == "float") {
    ckpt.parameters = train_model<float>(mc, a.config, chunks, trace);
  } else if (a.precision == "double") {
    ckpt.parameters = train_model<double>(mc, a.config, chunks, trace);
  } else {
    throw Error("cli", "--precision must be float or double");
  }
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "model.ckpt", ckpt);
  write_loss_trace(fs::path(a.out) / "loss.csv", trace);
  out << nlohmann::ordered_json{{"steps", trace.size()},
                                {"chunks", chunks.size()},
                                {"parameters", ckpt.parameters.size()},
                                {"final_loss", trace.empty() ? 0.0 : trace.back().loss}}
             .dump()
      << "\n";
}

// ---- checkpoint-backed commands ----

struct LoadedModel {
  Vocab vocab;
  std::unique_ptr<Transformer<float>> f32;
  std::unique_ptr<Transformer<double>> f64;
  std::unique_ptr<LanguageModel> lm;
};

LoadedModel load_model(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  LoadedModel m{Vocab(ckpt.image_vocab_size), nullptr, nullptr, nullptr};
  if (ckpt.config.vocab_size != m.vocab.size()) throw Error("model", "checkpoint vocab size mismatch");
  if (ckpt.precision == "double") {
    m.f64 = std::make_unique<Transformer<double>>(ckpt.config, std::move(ckpt.parameters));
    m.lm = std::make_unique<TransformerLM<double>>(*m.f64);
  } else {
    std::vector<float> p(ckpt.parameters.begin(), ckpt.parameters.end());
    m.f32 = std::make_unique<Transformer<float>>(ckpt.config, std::move(p));
    m.lm = std::make_unique<TransformerLM<float>>(*m.f32);
  }
  return m;
}

std::vector<TokenId> encode_checked(const Vocab& vocab, std::string_view text, const std::string& what) {
  try {
    return vocab.encode(text);
  } catch (const EncodeError& e) {
    throw Error("vocab", what + ": " + e.what());
  }
}

struct GenerateArgs {
  std::string ckpt;
  std::string prompt_file;
  double temperature = 1.0;
  bool greedy = false;
  int beam = 0;
  std::size_t max_len = 256;
  std::size_t size_hint = 0;
};

void cmd_generate(const GenerateArgs& a, const Globals& g, std::ostream& out) {
  const LoadedModel m = load_model(a.ckpt);
  const auto prompt = encode_checked(m.vocab, read_file(a.prompt_file), "prompt");
  DecodeSettings s = DecodeSettings::defaults(m.vocab);
  s.temperature = a.temperature;
  s.greedy = a.greedy;
  s.max_len = a.max_len;
  s.seed = g.seed;
  nlohmann::ordered_json j;
  std::vector<TokenId> continuation;
  if (a.size_hint > 0) {
    const SizeHintResult r = size_hint_decode(*m.lm, m.vocab, prompt, a.size_hint, s);
    continuation.assign(r.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.size()), r.tokens.end());
    j["sentinel_position"] = r.sentinel_position;
    j["infill"] = m.vocab.decode(r.infill);
  } else if (a.beam > 0) {
    s.beam_size = a.beam;
    const BeamResult r = beam(*m.lm, prompt, s);
    continuation = r.tokens;
    j["logprob"] = r.logprob;
    j["score"] = r.score;
  } else {
    continuation = sample(*m.lm, prompt, s);
  }
  j["continuation"] = m.vocab.decode(continuation);
  j["tokens"] = m.vocab.render_all(continuation);
  out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

struct ScoreArgs {
  std::string ckpt;
  std::string candidates;
  std::string context;
};

void cmd_score(const ScoreArgs& a, const Globals&, std::ostream& out) {
  const LoadedModel m = load_model(a.ckpt);
  const auto context = encode_checked(m.vocab, strip_trailing_newline(read_file(a.context)), "context");
  std::vector<std::string> names;
  std::istringstream lines(read_file(a.candidates));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    names.push_back(line);
  }
  if (names.empty()) throw Error("decoding", "no candidates");
  std::vector<std::vector<TokenId>> candidates;
  for (const auto& name : names) {
    candidates.push_back(encode_checked(m.vocab, entity_target("", name), "candidate"));
  }
  const auto ranked = rank_candidates(*m.lm, context, candidates, m.vocab.eod());
  out << "candidate\tlogprob\trank\n";
  char buf[64];
  for (const auto& r : ranked) {
    std::snprintf(buf, sizeof(buf), "%.9g", r.logprob);
    out << names[r.index] << '\t' << buf << '\t' << r.rank << '\n';
  }
}

// ---- prompt ----

struct PromptArgs {
  std::string name;
  std::string templates;
  std::map<std::string, std::string> values;
  std::string image_file;
};

void cmd_prompt(PromptArgs a, const Globals&, std::ostream& out) {
  PromptTemplate tmpl;
  if (a.templates.empty()) {
    tmpl = builtin_template(a.name);
  } else {
    const auto all = load_templates(a.templates);
    const auto it = std::find_if(all.begin(), all.end(), [&](const auto& t) { return t.name == a.name; });
    if (it == all.end()) throw Error("prompts", "unknown template '" + a.name + "'");
    tmpl = *it;
  }
  const Vocab vocab;
  if (!a.image_file.empty()) {
    std::istringstream words(read_file(a.image_file));
    std::vector<TokenId> image;
    for (std::string w; words >> w;) {
      const TokenId id = vocab.parse_rendered(w);
      if (vocab.image_index(id) < 0) throw Error("prompts", "'" + w + "' is not an image token");
      image.push_back(id);
    }
    if (tmpl.name == "caption_masked" || tmpl.name == "caption_causal") {
      const CaptionPrompts p = caption_prompts(vocab, image);
      out << (tmpl.name == "caption_masked" ? p.masked : p.causal);
      return;
    }
    std::string joined;
    for (std::size_t i = 0; i < image.size(); ++i) joined += (i ? " " : "") + vocab.render(image[i]);
    a.values["image"] = joined;
  }
  const std::string rendered = tmpl.render(a.values);
  encode_checked(vocab, rendered, "rendered prompt");
  out << rendered;
}

// ---- stats ----

struct StatsArgs {
  std::string records;
  std::string cls = "image";
  std::string out;
  int image_vocab = Vocab::kDefaultImageVocabSize;
};

void cmd_stats(const StatsArgs& a, const Globals&, std::ostream& out) {
  TokenClass cls;
  if (a.cls == "image") {
    cls = TokenClass::image;
  } else if (a.cls == "text") {
    cls = TokenClass::text;
  } else {
    throw Error("cli", "--class must be image or text");
  }
  const Vocab vocab(a.image_vocab);
  const auto records = read_records(a.records);
  const TokenHistogram h = token_histogram(vocab, records, cls);
  if (!a.out.empty()) {
    std::string csv = "index,count\n";
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      csv += std::to_string(i) + "," + std::to_string(h.counts[i]) + "\n";
    }
    write_file(a.out, csv);
  }
  out << nlohmann::ordered_json{{"class", a.cls},
                                {"total", h.total},
                                {"classes", h.counts.size()},
                                {"normalized_entropy", h.normalized_entropy}}
             .dump()
      << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causally-masked multimodal modeling toolkit", "cmlm"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every randomized stage")->envname("CMLM_SEED");
  app.add_option("--workers", g.workers, "Threads for per-document stages")->check(CLI::PositiveNumber);

  std::function<void()> action;

  MinifyArgs mn;
  auto* c = app.add_subcommand("minify", "Reduce HTML files to minimal-HTML records");
  c->add_option("input", mn.input, "HTML file or directory")->required();
  c->add_option("--out", mn.out, "Output records")->required();
  c->add_option("--report", mn.report, "Per-pass removal counts (JSON)");
  c->add_option("--source", mn.source, "cc_news_like, wiki_like or synthetic");
  c->callback([&] { action = [&] { cmd_minify(mn, g, out); }; });

  TokenizeArgs tk;
  c = app.add_subcommand("tokenize-images", "Replace local img sources with image tokens");
  c->add_option("--records", tk.records)->required();
  c->add_option("--images", tk.images, "Directory that src paths resolve against")->required();
  c->add_option("--out", tk.out)->required();
  c->add_option("--mode", tk.mode, "train (random crop) or eval (center crop)");
  c->callback([&] { action = [&] { cmd_tokenize_images(tk, g, out); }; });

  TransformArgs tr;
  c = app.add_subcommand("transform", "Apply the causally-masked transform");
  c->add_option("--records", tr.records)->required();
  c->add_option("--out", tr.out)->required();
  c->add_flag("--causal", tr.causal, "Plain left-to-right sequences (no masks)");
  c->add_option("--image-vocab", tr.image_vocab);
  c->callback([&] { action = [&] { cmd_transform(tr, g, out); }; });

  SplitArgs sp;
  c = app.add_subcommand("split", "Deduplicated train/test split");
  c->add_option("--records", sp.records)->required();
  c->add_option("--test-size", sp.test_size)->required();
  c->add_option("--out", sp.out, "Directory for train.jsonl and test.jsonl");
  c->callback([&] { action = [&] { cmd_split(sp, g, out); }; });

  TrainArgs tn;
  c = app.add_subcommand("train", "Train a model on transformed records");
  c->add_option("--records", tn.records)->required();
  c->add_option("--model", tn.model, "tiny or small");
  c->add_option("--steps", tn.config.total_updates);
  c->add_option("--warmup", tn.config.warmup_updates);
  c->add_option("--lr", tn.config.peak_lr);
  c->add_option("--batch", tn.config.batch_size);
  c->add_option("--max-seq-len", tn.config.max_seq_len);
  c->add_option("--clip", tn.config.clip_norm);
  c->add_option("--precision", tn.precision, "float or double");
  c->add_option("--image-vocab", tn.image_vocab);
  c->add_option("--out", tn.out, "Checkpoint directory");
  c->callback([&] { action = [&] { cmd_train(tn, g, out); }; });

  GenerateArgs gn;
  c = app.add_subcommand("generate", "Decode a continuation of a prompt");
  c->add_option("--ckpt", gn.ckpt)->required();
  c->add_option("--prompt-file", gn.prompt_file)->required();
  c->add_option("--temp", gn.temperature);
  c->add_flag("--greedy", gn.greedy);
  c->add_option("--beam", gn.beam, "Beam size (beam search when > 0)");
  c->add_option("--max-len", gn.max_len, "Total length budget, prompt included");
  c->add_option("--size-hint", gn.size_hint, "Force the tail <mask:0> at max-len minus this");
  c->callback([&] { action = [&] { cmd_generate(gn, g, out); }; });

  ScoreArgs sc;
  c = app.add_subcommand("score", "Rank candidate completions of a context");
  c->add_option("--ckpt", sc.ckpt)->required();
  c->add_option("--candidates", sc.candidates, "One candidate per line")->required();
  c->add_option("--context", sc.context)->required();
  c->callback([&] { action = [&] { cmd_score(sc, g, out); }; });

  PromptArgs pr;
  std::string prefix, postfix, text, prompt_text;
  c = app.add_subcommand("prompt", "Render a prompt template");
  c->add_option("--name", pr.name)->required();
  c->add_option("--templates", pr.templates, "JSON template file");
  auto* o_prefix = c->add_option("--prefix", prefix);
  auto* o_postfix = c->add_option("--postfix", postfix);
  auto* o_text = c->add_option("--text", text);
  auto* o_prompt = c->add_option("--prompt", prompt_text);
  c->add_option("--image-file", pr.image_file, "Whitespace-separated image tokens");
  c->callback([&] {
    if (o_prefix->count()) pr.values["prefix"] = prefix;
    if (o_postfix->count()) pr.values["postfix"] = postfix;
    if (o_text->count()) pr.values["text"] = text;
    if (o_prompt->count()) pr.values["prompt"] = prompt_text;
    action = [&] { cmd_prompt(pr, g, out); };
  });

  StatsArgs st;
  c = app.add_subcommand("stats", "Token histogram and normalized entropy");
  c->add_option("--records", st.records)->required();
  c->add_option("--class", st.cls, "image or text");
  c->add_option("--out", st.out, "Histogram CSV");
  c->add_option("--image-vocab", st.image_vocab);
  c->callback([&] { action = [&] { cmd_stats(st, g, out); }; });

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "cmlm: cli: " << e.what() << "\n";
    return 2;
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    err << "cmlm: " << e.module() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "cmlm: cli: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cmlm
